"""Post-training quantization and the integer inference path.

Weights are 16-bit symmetric per layer; activations are 8-bit asymmetric
(uint8) with ranges calibrated from representative sequences and nudged to
include zero, so both causal padding and ReLU are exact in the integer
domain.  Biases live in the 32-bit accumulator scale (input scale times
weight scale).  Convolutions accumulate in 32-bit integers; a worst-case
bound over the actual quantized weights is certified at build time, so
overflow is impossible for any input.

Requantization multiplies the accumulator by a double-precision factor and
rounds half-to-even; all operations are deterministic, so repeated runs are
bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .layers import MaxPool2D
from .model import ModelConfig, Network

TRQ1_MAGIC = b"TRQ1"
TRQ1_VERSION = 1

INT32_MAX = 2**31 - 1
WEIGHT_QMAX = 32767  # symmetric int16
ACT_QMAX = 255  # asymmetric uint8


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    bit_width: int = 8
    symmetric: bool = False

    def __post_init__(self):
        if self.scale <= 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")

    def quantize(self, x: np.ndarray) -> np.ndarray:
        q = np.round(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, 0, ACT_QMAX).astype(np.uint8)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return (q.astype(np.float64) - self.zero_point) * self.scale


def activation_params(observed_min: float, observed_max: float) -> QuantParams:
    """Asymmetric 8-bit parameters for a calibrated range, nudged to cover 0."""
    lo = min(0.0, float(observed_min))
    hi = max(0.0, float(observed_max))
    if hi == lo:
        return QuantParams(scale=1.0 / ACT_QMAX, zero_point=0)
    scale = (hi - lo) / ACT_QMAX
    zp = int(np.clip(round(-lo / scale), 0, ACT_QMAX))
    return QuantParams(scale=scale, zero_point=zp)


def quantize_weights(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric 16-bit quantization; round-trip error is at most scale/2."""
    max_abs = float(np.max(np.abs(w)))
    scale = max_abs / WEIGHT_QMAX if max_abs > 0 else 1.0 / WEIGHT_QMAX
    q = np.clip(np.round(w / scale), -WEIGHT_QMAX, WEIGHT_QMAX).astype(np.int16)
    return q, scale


def _quantize_bias(b: np.ndarray, acc_scale: float) -> np.ndarray:
    q = np.round(b / acc_scale)
    if np.any(np.abs(q) > INT32_MAX):
        raise OverflowError("bias does not fit the 32-bit accumulator scale")
    return q.astype(np.int64)


def _check_accumulator(weight_q: np.ndarray, bias_q: np.ndarray, in_qp: QuantParams, name: str):
    """Certify that no input can overflow a 32-bit accumulator."""
    maxdev = max(in_qp.zero_point, ACT_QMAX - in_qp.zero_point)
    sum_abs = np.abs(weight_q.astype(np.int64)).reshape(-1, weight_q.shape[-1]).sum(axis=0)
    bound = int((sum_abs * maxdev + np.abs(bias_q)).max())
    if bound > INT32_MAX:
        raise OverflowError(
            f"{name}: worst-case accumulator {bound} exceeds int32 range; "
            "narrow the activation range or weight bit width"
        )


def _requantize(acc: np.ndarray, acc_scale: float, out_qp: QuantParams | None, relu: bool):
    if relu:
        acc = np.maximum(acc, 0)
    if out_qp is None:
        return acc.astype(np.float64) * acc_scale
    y = np.round(acc.astype(np.float64) * (acc_scale / out_qp.scale)) + out_qp.zero_point
    return np.clip(y, 0, ACT_QMAX).astype(np.uint8)


# -- quantized ops -------------------------------------------------------------


@dataclass
class QConv2D:
    kind = "conv2d"
    name: str
    weight: np.ndarray  # int16 (kh, kw, cin, cout)
    w_scale: float
    bias_q: np.ndarray  # accumulator scale
    in_qp: QuantParams
    out_qp: QuantParams | None
    relu: bool

    def forward(self, x_q: np.ndarray):
        kh, kw = self.weight.shape[:2]
        n, h, w, _ = x_q.shape
        pt, pl = kh // 2, kw // 2
        zx = self.in_qp.zero_point
        # Padding with the zero point is exact zero padding.
        xp = np.pad(
            x_q, ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0)),
            constant_values=zx,
        ).astype(np.int64) - zx
        wq = self.weight.astype(np.int64)
        acc = np.broadcast_to(self.bias_q, (n, h, w, self.weight.shape[-1])).copy()
        for i in range(kh):
            for j in range(kw):
                acc += xp[:, i : i + h, j : j + w, :] @ wq[i, j]
        return _requantize(acc, self.in_qp.scale * self.w_scale, self.out_qp, self.relu)


@dataclass
class QMaxPool2D:
    kind = "maxpool2d"
    name: str
    kh: int
    kw: int

    def forward(self, x_q):
        # Max pooling commutes with the monotone quantization map: exact.
        return MaxPool2D(self.kh, self.kw, name=self.name).forward(x_q)


@dataclass
class QFlatten:
    kind = "flatten"
    name: str

    def forward(self, x_q):
        return x_q.reshape(x_q.shape[0], -1)


@dataclass
class QCausalConv1D:
    kind = "causal_conv1d"
    name: str
    dilation: int
    weight: np.ndarray  # int16 (k, cin, cout)
    w_scale: float
    bias_q: np.ndarray
    in_qp: QuantParams
    out_qp: QuantParams | None
    relu: bool

    def forward(self, x_q):
        k = self.weight.shape[0]
        n, t, _ = x_q.shape
        zx = self.in_qp.zero_point
        pad = (k - 1) * self.dilation
        xp = np.pad(x_q, ((0, 0), (pad, 0), (0, 0)), constant_values=zx).astype(np.int64) - zx
        wq = self.weight.astype(np.int64)
        acc = np.broadcast_to(self.bias_q, (n, t, self.weight.shape[-1])).copy()
        for i in range(k):
            acc += xp[:, i * self.dilation : i * self.dilation + t, :] @ wq[i]
        return _requantize(acc, self.in_qp.scale * self.w_scale, self.out_qp, self.relu)


@dataclass
class QResidualBlock:
    kind = "residual_block"
    name: str
    conv: QCausalConv1D  # relu branch, quantized to its own params
    in_qp: QuantParams
    out_qp: QuantParams

    def forward(self, x_q):
        r_q = self.conv.forward(x_q)
        xs = (x_q.astype(np.float64) - self.in_qp.zero_point) * self.in_qp.scale
        rs = (r_q.astype(np.float64) - self.conv.out_qp.zero_point) * self.conv.out_qp.scale
        y = np.round((xs + rs) / self.out_qp.scale) + self.out_qp.zero_point
        return np.clip(y, 0, ACT_QMAX).astype(np.uint8)


@dataclass
class QDense:
    kind = "dense"
    name: str
    weight: np.ndarray  # int16 (n_in, n_out)
    w_scale: float
    bias_q: np.ndarray
    in_qp: QuantParams
    out_qp: QuantParams | None
    relu: bool

    def forward(self, x_q):
        x = x_q.astype(np.int64) - self.in_qp.zero_point
        acc = x @ self.weight.astype(np.int64) + self.bias_q
        return _requantize(acc, self.in_qp.scale * self.w_scale, self.out_qp, self.relu)


@dataclass
class QuantizedNetwork:
    config: ModelConfig
    input_qp: QuantParams
    cnn_ops: list
    tcn_ops: list

    def weight_tensors(self):
        for op in self.cnn_ops + self.tcn_ops:
            if hasattr(op, "weight"):
                yield op
            elif isinstance(op, QResidualBlock):
                yield op.conv

    def forward_sequence(self, frames) -> np.ndarray:
        """Integer inference; accepts float feature frames or uint8 tensors."""
        if isinstance(frames, (list, tuple)):
            frames = np.stack([getattr(f, "data", f) for f in frames])
        x = np.asarray(frames)
        batched = x.ndim == 5
        if not batched:
            x = x[None]
        cfg = self.config
        if x.shape[1] != cfg.time_steps or x.shape[2:] != cfg.frame_shape:
            raise ValidationError(
                f"expected {cfg.time_steps} frames of {cfg.frame_shape}, got {x.shape[1:]}"
            )
        if x.dtype != np.uint8:
            x = self.input_qp.quantize(x)
        b, t = x.shape[:2]
        h = x.reshape(b * t, *cfg.frame_shape)
        for op in self.cnn_ops:
            h = op.forward(h)
        h = h.reshape(b, t, -1)
        for op in self.tcn_ops:
            h = op.forward(h)
        return h if batched else h[0]


# -- calibration ----------------------------------------------------------------


class _RangeTracker:
    def __init__(self):
        self.ranges: dict[str, tuple[float, float]] = {}

    def record(self, name: str, x: np.ndarray):
        lo, hi = float(x.min()), float(x.max())
        if name in self.ranges:
            plo, phi = self.ranges[name]
            lo, hi = min(lo, plo), max(hi, phi)
        self.ranges[name] = (lo, hi)

    def params(self, name: str) -> QuantParams:
        return activation_params(*self.ranges[name])


def calibrate_and_quantize(net: Network, calibration_frames) -> QuantizedNetwork:
    """Observe activation ranges on calibration sequences, then quantize.

    ``calibration_frames`` is one sequence (T, tw, rp, c) or a batch of them;
    at least one sequence is required.
    """
    x = np.asarray(calibration_frames, dtype=np.float64)
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[0] == 0:
        raise ValidationError("need at least one calibration sequence (S, T, tw, rp, c)")
    cfg = net.config
    b, t = x.shape[:2]

    tracker = _RangeTracker()
    tracker.record("input", x)
    h = x.reshape(b * t, *cfg.frame_shape)
    for layer in net.cnn:
        h = layer.forward(h)
        if layer.kind == "relu":
            tracker.record(layer.name, h)
    h = h.reshape(b, t, -1)
    for layer in net.tcn:
        if layer.kind == "residual_block":
            branch = np.maximum(layer.conv.forward(h), 0.0)
            tracker.record(f"{layer.name}.branch", branch)
            h = h + branch
            tracker.record(layer.name, h)
            continue
        h = layer.forward(h)
        if layer.kind in ("causal_conv1d", "relu"):
            tracker.record(layer.name, h)

    input_qp = tracker.params("input")

    def conv_op(cls, layer, in_qp, out_qp, relu, **extra):
        wq, ws = quantize_weights(layer.weight.value)
        bq = _quantize_bias(layer.bias.value, in_qp.scale * ws)
        _check_accumulator(wq, bq, in_qp, layer.name)
        return cls(
            name=layer.name, weight=wq, w_scale=ws, bias_q=bq,
            in_qp=in_qp, out_qp=out_qp, relu=relu, **extra,
        )

    cnn_ops: list = []
    qp = input_qp
    pending_conv = None
    for layer in net.cnn:
        if layer.kind == "conv2d":
            pending_conv = layer
        elif layer.kind == "relu":
            out_qp = tracker.params(layer.name)
            cnn_ops.append(conv_op(QConv2D, pending_conv, qp, out_qp, relu=True))
            qp = out_qp
            pending_conv = None
        elif layer.kind == "maxpool2d":
            cnn_ops.append(QMaxPool2D(name=layer.name, kh=layer.kh, kw=layer.kw))
        elif layer.kind == "flatten":
            cnn_ops.append(QFlatten(name=layer.name))

    tcn_ops: list = []
    tcn = list(net.tcn)
    i = 0
    while i < len(tcn):
        layer = tcn[i]
        if layer.kind == "causal_conv1d":
            out_qp = tracker.params(layer.name)
            tcn_ops.append(
                conv_op(QCausalConv1D, layer, qp, out_qp, relu=False, dilation=layer.dilation)
            )
            qp = out_qp
        elif layer.kind == "residual_block":
            branch_qp = tracker.params(f"{layer.name}.branch")
            out_qp = tracker.params(layer.name)
            qconv = conv_op(
                QCausalConv1D, layer.conv, qp, branch_qp, relu=True, dilation=layer.dilation
            )
            tcn_ops.append(QResidualBlock(name=layer.name, conv=qconv, in_qp=qp, out_qp=out_qp))
            qp = out_qp
        elif layer.kind == "dense":
            followed_by_relu = i + 1 < len(tcn) and tcn[i + 1].kind == "relu"
            if followed_by_relu:
                out_qp = tracker.params(tcn[i + 1].name)
                tcn_ops.append(conv_op(QDense, layer, qp, out_qp, relu=True))
                qp = out_qp
                i += 1  # consume the relu
            else:
                # Final classifier: keep full accumulator precision, emit floats.
                tcn_ops.append(conv_op(QDense, layer, qp, None, relu=False))
        i += 1

    return QuantizedNetwork(config=cfg, input_qp=input_qp, cnn_ops=cnn_ops, tcn_ops=tcn_ops)


def quantized_forward_sequence(qnet: QuantizedNetwork, frames) -> np.ndarray:
    return qnet.forward_sequence(frames)


def model_size_bytes(qnet: QuantizedNetwork) -> int:
    """Weight and bias storage at the declared widths (activations excluded)."""
    total = 0
    for op in qnet.weight_tensors():
        total += op.weight.size * 2  # int16
        total += op.bias_q.size * 4  # int32 accumulators
    return total


# -- TRQ1 container --------------------------------------------------------------

_OP_IDS = {"conv2d": 0, "maxpool2d": 1, "flatten": 2, "causal_conv1d": 3,
           "residual_block": 4, "dense": 5}


def _pack_qp(out, qp: QuantParams | None):
    if qp is None:
        out.append(struct.pack("<B", 0))
        return
    out.append(struct.pack("<BdiBB", 1, qp.scale, qp.zero_point, qp.bit_width,
                           1 if qp.symmetric else 0))


def _pack_weighted(out, op, extra=()):
    name = op.name.encode()
    out.append(struct.pack("<H", len(name)))
    out.append(name)
    out.append(struct.pack(f"<{len(extra)}I", *extra) if extra else b"")
    out.append(struct.pack("<BB", 1 if op.relu else 0, 0 if op.out_qp is None else 1))
    w = op.weight
    out.append(struct.pack("<I", w.ndim))
    out.append(struct.pack(f"<{w.ndim}I", *w.shape))
    out.append(w.astype("<i2").tobytes())
    out.append(struct.pack("<d", op.w_scale))
    out.append(struct.pack("<I", op.bias_q.size))
    out.append(op.bias_q.astype("<i4").tobytes())
    _pack_qp(out, op.in_qp)
    _pack_qp(out, op.out_qp)


def save_quantized(path, qnet: QuantizedNetwork) -> None:
    cfg = qnet.config
    out: list[bytes] = [TRQ1_MAGIC]
    head = [TRQ1_VERSION, cfg.tw, cfg.rp, cfg.sensors, cfg.classes,
            cfg.tcn_filters, cfg.time_steps, len(cfg.dilations), *cfg.dilations]
    out.append(struct.pack(f"<{len(head)}I", *head))
    _pack_qp(out, qnet.input_qp)
    ops = qnet.cnn_ops + [None] + qnet.tcn_ops  # None marks the cnn/tcn boundary
    out.append(struct.pack("<I", len(ops)))
    for op in ops:
        if op is None:
            out.append(struct.pack("<B", 255))
            continue
        out.append(struct.pack("<B", _OP_IDS[op.kind]))
        if op.kind == "maxpool2d":
            out.append(struct.pack("<H", len(op.name.encode())))
            out.append(op.name.encode())
            out.append(struct.pack("<II", op.kh, op.kw))
        elif op.kind == "flatten":
            out.append(struct.pack("<H", len(op.name.encode())))
            out.append(op.name.encode())
        elif op.kind == "residual_block":
            name = op.name.encode()
            out.append(struct.pack("<H", len(name)))
            out.append(name)
            _pack_weighted(out, op.conv, extra=(op.conv.dilation,))
            _pack_qp(out, op.in_qp)
            _pack_qp(out, op.out_qp)
        elif op.kind == "causal_conv1d":
            _pack_weighted(out, op, extra=(op.dilation,))
        else:
            _pack_weighted(out, op)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, blob: bytes, offset: int):
        self.blob = blob
        self.off = offset

    def unpack(self, fmt: str):
        vals = struct.unpack_from(fmt, self.blob, self.off)
        self.off += struct.calcsize(fmt)
        return vals

    def raw(self, n: int) -> bytes:
        chunk = self.blob[self.off : self.off + n]
        if len(chunk) != n:
            raise FormatError("truncated TRQ1 payload")
        self.off += n
        return chunk


def _read_qp(r: _Reader) -> QuantParams | None:
    (present,) = r.unpack("<B")
    if not present:
        return None
    scale, zp, bits, sym = r.unpack("<diBB")
    return QuantParams(scale=scale, zero_point=zp, bit_width=bits, symmetric=bool(sym))


def _read_weighted(r: _Reader, cls, n_extra=0):
    (nlen,) = r.unpack("<H")
    name = r.raw(nlen).decode()
    extra = r.unpack(f"<{n_extra}I") if n_extra else ()
    relu, has_out = r.unpack("<BB")
    (ndim,) = r.unpack("<I")
    shape = r.unpack(f"<{ndim}I")
    count = int(np.prod(shape))
    weight = np.frombuffer(r.raw(2 * count), dtype="<i2").reshape(shape)
    (w_scale,) = r.unpack("<d")
    (bsize,) = r.unpack("<I")
    bias = np.frombuffer(r.raw(4 * bsize), dtype="<i4").astype(np.int64)
    in_qp = _read_qp(r)
    out_qp = _read_qp(r)
    kwargs = dict(name=name, weight=weight, w_scale=w_scale, bias_q=bias,
                  in_qp=in_qp, out_qp=out_qp, relu=bool(relu))
    if n_extra:
        kwargs["dilation"] = extra[0]
    return cls(**kwargs)


def load_quantized(path) -> QuantizedNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TRQ1_MAGIC:
        raise FormatError(f"not a TRQ1 blob (magic {blob[:4]!r})")
    r = _Reader(blob, 4)
    (version,) = r.unpack("<I")
    if version != TRQ1_VERSION:
        raise FormatError(f"unsupported TRQ1 version {version} (expected {TRQ1_VERSION})")
    tw, rp, sensors, classes, filters, steps, n_dil = r.unpack("<7I")
    dilations = r.unpack(f"<{n_dil}I")
    cfg = ModelConfig(tw, rp, sensors, classes, filters, steps, dilations)
    input_qp = _read_qp(r)
    (n_ops,) = r.unpack("<I")
    cnn_ops: list = []
    tcn_ops: list = []
    target = cnn_ops
    for _ in range(n_ops):
        (op_id,) = r.unpack("<B")
        if op_id == 255:
            target = tcn_ops
            continue
        if op_id == _OP_IDS["maxpool2d"]:
            (nlen,) = r.unpack("<H")
            name = r.raw(nlen).decode()
            kh, kw = r.unpack("<II")
            target.append(QMaxPool2D(name=name, kh=kh, kw=kw))
        elif op_id == _OP_IDS["flatten"]:
            (nlen,) = r.unpack("<H")
            target.append(QFlatten(name=r.raw(nlen).decode()))
        elif op_id == _OP_IDS["residual_block"]:
            (nlen,) = r.unpack("<H")
            name = r.raw(nlen).decode()
            conv = _read_weighted(r, QCausalConv1D, n_extra=1)
            in_qp = _read_qp(r)
            out_qp = _read_qp(r)
            target.append(QResidualBlock(name=name, conv=conv, in_qp=in_qp, out_qp=out_qp))
        elif op_id == _OP_IDS["causal_conv1d"]:
            target.append(_read_weighted(r, QCausalConv1D, n_extra=1))
        elif op_id == _OP_IDS["conv2d"]:
            target.append(_read_weighted(r, QConv2D))
        elif op_id == _OP_IDS["dense"]:
            target.append(_read_weighted(r, QDense))
        else:
            raise FormatError(f"unknown op id {op_id}")
    return QuantizedNetwork(config=cfg, input_qp=input_qp, cnn_ops=cnn_ops, tcn_ops=tcn_ops)
