"""Sweep recordings, the TRD1 container format, and frame windowing.

A recording is a time series of complex distance sweeps from one or two
sensors.  Axis order is (sensor, time, range) throughout; the on-disk TRD1
payload uses the same ordering.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

TRD1_MAGIC = b"TRD1"
TRD1_VERSION = 1
UNLABELED = 0xFFFFFFFF

# Header after the magic: version, C, N, RP, sweep_freq in mHz,
# label, user_id, session_id, then range_start_m and range_step_m.
_HEADER = struct.Struct("<8I2d")

# Sensor range resolution in meters (0.483 mm per range point).
DEFAULT_RANGE_STEP_M = 0.483e-3


@dataclass(eq=False)
class SweepRecording:
    """Complex sweep data of shape (sensors, sweeps, range points)."""

    sweeps: np.ndarray
    sweep_freq: float
    range_start_m: float = 0.07
    range_step_m: float = DEFAULT_RANGE_STEP_M
    label: int = UNLABELED
    user_id: int = 0
    session_id: int = 0
    # Transient diagnostic (e.g. a synthetic target left the sampled
    # window); not stored in TRD1.
    clipped: bool = False

    def __post_init__(self) -> None:
        self.sweeps = np.asarray(self.sweeps)
        if self.sweeps.ndim != 3:
            raise ValidationError(
                f"sweeps must be 3-D (sensor, time, range), got shape {self.sweeps.shape}"
            )
        if not np.iscomplexobj(self.sweeps):
            raise ValidationError("sweeps must be complex-valued")
        c, n, rp = self.sweeps.shape
        if c not in (1, 2):
            raise ValidationError(f"sensor count must be 1 or 2, got {c}")
        if n < 1 or rp < 1:
            raise ValidationError(f"need at least one sweep and one range point, got {n}x{rp}")
        if self.sweep_freq <= 0:
            raise ValidationError(f"sweep_freq must be positive, got {self.sweep_freq}")
        if self.range_step_m <= 0:
            raise ValidationError(f"range_step_m must be positive, got {self.range_step_m}")

    @property
    def sensors(self) -> int:
        return self.sweeps.shape[0]

    @property
    def n_sweeps(self) -> int:
        return self.sweeps.shape[1]

    @property
    def range_points(self) -> int:
        return self.sweeps.shape[2]

    @property
    def range_axis_m(self) -> np.ndarray:
        return self.range_start_m + self.range_step_m * np.arange(self.range_points)


@dataclass(eq=False)
class RawFrame:
    """A window of consecutive sweeps, shaped (tw, range points, sensors)."""

    data: np.ndarray
    window_index: int = 0

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValidationError(f"frame must be 3-D (tw, rp, sensors), got {self.data.shape}")
        if not np.iscomplexobj(self.data):
            raise ValidationError("frame data must be complex-valued")

    @property
    def tw(self) -> int:
        return self.data.shape[0]

    @property
    def range_points(self) -> int:
        return self.data.shape[1]

    @property
    def sensors(self) -> int:
        return self.data.shape[2]


def encode_recording(rec: SweepRecording) -> bytes:
    """Serialize a recording to TRD1 bytes (little-endian, complex64 payload).

    The transient ``clipped`` flag is not part of the format.
    """
    c, n, rp = rec.sweeps.shape
    header = _HEADER.pack(
        TRD1_VERSION,
        c,
        n,
        rp,
        int(round(rec.sweep_freq * 1000.0)),
        rec.label,
        rec.user_id,
        rec.session_id,
        rec.range_start_m,
        rec.range_step_m,
    )
    payload = np.empty((c, n, rp, 2), dtype="<f4")
    payload[..., 0] = rec.sweeps.real
    payload[..., 1] = rec.sweeps.imag
    return TRD1_MAGIC + header + payload.tobytes()


def decode_recording(blob: bytes) -> SweepRecording:
    """Parse TRD1 bytes into a SweepRecording.

    Raises FormatError for a bad magic, unsupported version, or truncated
    payload; ValidationError for inconsistent header fields.
    """
    if len(blob) < 4 or blob[:4] != TRD1_MAGIC:
        raise FormatError(f"not a TRD1 container (magic {blob[:4]!r})")
    if len(blob) < 4 + _HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} bytes")
    (
        version,
        c,
        n,
        rp,
        freq_mhz,
        label,
        user_id,
        session_id,
        range_start,
        range_step,
    ) = _HEADER.unpack_from(blob, 4)
    if version != TRD1_VERSION:
        raise FormatError(f"unsupported TRD1 version {version} (expected {TRD1_VERSION})")
    if c not in (1, 2):
        raise ValidationError(f"sensor count must be 1 or 2, got {c}")
    expected = c * n * rp * 8
    body = blob[4 + _HEADER.size :]
    if len(body) != expected:
        raise FormatError(f"payload length {len(body)} does not match header ({expected} expected)")
    pairs = np.frombuffer(body, dtype="<f4").reshape(c, n, rp, 2)
    sweeps = (pairs[..., 0] + 1j * pairs[..., 1]).astype(np.complex64)
    return SweepRecording(
        sweeps=sweeps,
        sweep_freq=freq_mhz / 1000.0,
        range_start_m=range_start,
        range_step_m=range_step,
        label=label,
        user_id=user_id,
        session_id=session_id,
    )


def read_recording(path) -> SweepRecording:
    with open(path, "rb") as fh:
        return decode_recording(fh.read())


def write_recording(path, rec: SweepRecording) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_recording(rec))


def frame_stream(rec: SweepRecording, tw: int = 32, stride: int | None = None) -> list[RawFrame]:
    """Slice a recording into windows of ``tw`` sweeps.

    Frame k covers sweeps [k*stride, k*stride + tw); the trailing remainder
    is dropped rather than padded.  ``stride`` defaults to ``tw``
    (non-overlapping frames).
    """
    if stride is None:
        stride = tw
    if tw < 1 or stride < 1:
        raise ValidationError(f"tw and stride must be >= 1, got tw={tw} stride={stride}")
    n = rec.n_sweeps
    if tw > n:
        raise ValidationError(
            f"window of {tw} sweeps does not fit a recording of {n} sweeps; no frames produced"
        )
    count = (n - tw) // stride + 1
    frames = []
    for k in range(count):
        start = k * stride
        # (C, tw, RP) -> (tw, RP, C)
        window = np.transpose(rec.sweeps[:, start : start + tw, :], (1, 2, 0))
        frames.append(RawFrame(data=window.copy(), window_index=k))
    return frames


def convert_public_dataset(src_dir, dst_dir) -> None:
    """Stub: convert an externally downloaded gesture dataset to TRD1 files.

    The public download's on-disk layout is not fixed by this package; it may
    ship raw I/Q sweeps (convert each recording by filling a SweepRecording
    and calling write_recording) or pre-extracted feature maps (in which case
    bypass TRD1 and build feature sequences directly).  Implement whichever
    branch matches the files you obtained, then point the training CLI at the
    converted directory.
    """
    raise NotImplementedError(
        "dataset conversion depends on the layout of the downloaded files; "
        "see the docstring for the two supported approaches"
    )
