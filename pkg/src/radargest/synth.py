"""Synthetic point-target recordings with analytically known Doppler content.

A single reflector at range r(t) = r0 + v*t/f_sweep produces a Gaussian
amplitude envelope over the range axis and a per-sweep phase
phi(t) = 4*pi*r(t)/lambda, so the sweep-to-sweep phase increment is
4*pi*v/(lambda*f_sweep) and the Doppler frequency is f_d = 2*v/lambda.
That closed form is the physics oracle the feature pipeline is checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .recording import DEFAULT_RANGE_STEP_M, SweepRecording

# Carrier wavelength for a 60 GHz pulse.
DEFAULT_WAVELENGTH_M = 4.9965e-3


@dataclass(frozen=True)
class SynthTargetSpec:
    """Point target: initial range, radial velocity, and envelope shape."""

    initial_range_m: float
    velocity_mps: float = 0.0
    amplitude: float = 1.0
    envelope_sigma_m: float = 5e-3
    noise_std: float = 0.0
    carrier_wavelength_m: float = DEFAULT_WAVELENGTH_M

    def __post_init__(self) -> None:
        if self.envelope_sigma_m <= 0:
            raise ValidationError(f"envelope_sigma_m must be > 0, got {self.envelope_sigma_m}")
        if self.amplitude < 0:
            raise ValidationError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.noise_std < 0:
            raise ValidationError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.carrier_wavelength_m <= 0:
            raise ValidationError("carrier_wavelength_m must be > 0")


def synth_recording(
    spec: SynthTargetSpec,
    n_sweeps: int,
    rp: int,
    sweep_freq: float,
    seed: int,
    *,
    sensors: int = 1,
    range_start_m: float = 0.07,
    range_step_m: float = DEFAULT_RANGE_STEP_M,
) -> SweepRecording:
    """Generate a recording of one moving point target plus complex noise.

    Deterministic for a fixed seed.  If the target trajectory leaves the
    sampled range window the recording's ``clipped`` flag is set (the data is
    still produced; the envelope simply fades out).
    """
    if n_sweeps < 1 or rp < 1:
        raise ValidationError(f"n_sweeps and rp must be >= 1, got {n_sweeps}, {rp}")
    t = np.arange(n_sweeps)
    r_t = spec.initial_range_m + spec.velocity_mps * t / sweep_freq
    phase = 4.0 * np.pi * r_t / spec.carrier_wavelength_m
    ranges = range_start_m + range_step_m * np.arange(rp)
    envelope = spec.amplitude * np.exp(
        -((ranges[None, :] - r_t[:, None]) ** 2) / (2.0 * spec.envelope_sigma_m**2)
    )
    signal = envelope * np.exp(1j * phase)[:, None]

    rng = np.random.default_rng(seed)
    sweeps = np.empty((sensors, n_sweeps, rp), dtype=np.complex128)
    for s in range(sensors):
        noise = rng.standard_normal((n_sweeps, rp)) + 1j * rng.standard_normal((n_sweeps, rp))
        sweeps[s] = signal + spec.noise_std * noise

    clipped = bool(r_t.min() < ranges[0] or r_t.max() > ranges[-1])
    return SweepRecording(
        sweeps=sweeps.astype(np.complex64),
        sweep_freq=sweep_freq,
        range_start_m=range_start_m,
        range_step_m=range_step_m,
        clipped=clipped,
    )


def predict_doppler_bin(
    velocity_mps: float,
    sweep_freq: float,
    tw: int,
    wavelength_m: float = DEFAULT_WAVELENGTH_M,
) -> int:
    """Frequency bin where a target of the given radial velocity lands.

    f_d = 2*v/lambda, bin resolution f_sweep/tw, negative frequencies wrap to
    the top of the [0, tw) bin range.  Raises if |f_d| is at or beyond the
    Nyquist frequency.
    """
    f_d = 2.0 * velocity_mps / wavelength_m
    nyquist = sweep_freq / 2.0
    if abs(f_d) >= nyquist:
        raise ValidationError(
            f"Doppler frequency {f_d:.2f} Hz aliases: |f_d| must stay below the "
            f"Nyquist bound of {nyquist:.2f} Hz at f_sweep={sweep_freq} Hz"
        )
    return int(round(f_d / (sweep_freq / tw))) % tw


# Synthetic gesture vocabulary: class id -> (name, radial velocity in m/s).
# Velocities sit on distinct Doppler bins at 160 Hz / TW=32 (bins 0, +-4, +-8).
GESTURE_CLASSES: tuple[tuple[str, float], ...] = (
    ("hold", 0.0),
    ("pull_slow", 0.05),
    ("push_slow", -0.05),
    ("pull_fast", 0.10),
    ("push_fast", -0.10),
)


def make_gesture_recording(
    class_id: int,
    seed: int,
    *,
    n_sweeps: int = 160,
    rp: int = 64,
    sweep_freq: float = 160.0,
    range_step_m: float = 2.5e-3,
    noise_std: float = 0.05,
    user_id: int = 0,
    session_id: int = 0,
) -> SweepRecording:
    """One labeled synthetic gesture: the class velocity, centered trajectory.

    The start range is chosen so the trajectory stays centered in the sampled
    window for the whole recording.
    """
    if not 0 <= class_id < len(GESTURE_CLASSES):
        raise ValidationError(f"class_id must be in [0, {len(GESTURE_CLASSES)}), got {class_id}")
    _, velocity = GESTURE_CLASSES[class_id]
    duration = n_sweeps / sweep_freq
    range_start = 0.02
    window_center = range_start + range_step_m * rp / 2.0
    spec = SynthTargetSpec(
        initial_range_m=window_center - velocity * duration / 2.0,
        velocity_mps=velocity,
        noise_std=noise_std,
    )
    rec = synth_recording(
        spec,
        n_sweeps,
        rp,
        sweep_freq,
        seed,
        range_start_m=range_start,
        range_step_m=range_step_m,
    )
    rec.label = class_id
    rec.user_id = user_id
    rec.session_id = session_id
    return rec


def build_synthetic_corpus(
    per_class: int = 200,
    *,
    seed: int = 0,
    n_users: int = 10,
    **kwargs,
) -> list[SweepRecording]:
    """Labeled corpus over all gesture classes, users assigned round-robin."""
    recs = []
    for class_id in range(len(GESTURE_CLASSES)):
        for k in range(per_class):
            recs.append(
                make_gesture_recording(
                    class_id,
                    seed=seed + class_id * per_class + k,
                    user_id=k % n_users,
                    session_id=k // n_users,
                    **kwargs,
                )
            )
    return recs
