"""Network assembly, sequence inference, and parameter/MAC accounting.

The classifier is a per-frame 2-D CNN feeding a causal dilated TCN:

  CNN (per frame):  Conv 3x5 ->16, pool 3x5, Conv 3x5 ->32, pool 3x5,
                    Conv 1x7 ->64, pool 1x7, flatten (each conv + ReLU)
  TCN (per seq):    pointwise causal conv -> F channels, residual blocks
                    with dilations (1, 2, 4), dense F -> 2F -> F -> classes
                    shared across time steps

Pooling windows clamp to the remaining extent so small test geometries stay
buildable; the reference geometries are unaffected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .layers import CausalConv1D, Conv2D, Dense, Flatten, Layer, MaxPool2D, Param, ReLU, ResidualBlock

CNN_CHANNELS = (16, 32, 64)
CNN_KERNELS = ((3, 5), (3, 5), (1, 7))

TRNW_MAGIC = b"TRNW"
TRNW_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    tw: int = 32
    rp: int = 492
    sensors: int = 2
    classes: int = 11
    tcn_filters: int = 32
    time_steps: int = 5
    dilations: tuple[int, ...] = (1, 2, 4)

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(self.dilations))
        if self.tw < 1 or self.rp < 1:
            raise ValidationError(f"tw and rp must be >= 1, got {self.tw}, {self.rp}")
        if self.sensors not in (1, 2):
            raise ValidationError(f"sensors must be 1 or 2, got {self.sensors}")
        if self.classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.classes}")
        if self.tcn_filters < 1 or self.time_steps < 1:
            raise ValidationError("tcn_filters and time_steps must be >= 1")
        if any(d < 1 for d in self.dilations):
            raise ValidationError(f"dilations must be >= 1, got {self.dilations}")

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.tw, self.rp, self.sensors)


@dataclass
class LayerRow:
    """One row of the architecture description (activations excluded)."""

    name: str
    kind: str
    in_shape: tuple
    out_shape: tuple
    kernel: tuple | None = None
    mode: str = ""
    param_count: int = 0


class Network:
    """Frame CNN + sequence TCN with cached-activation backward."""

    def __init__(self, cnn: list[Layer], tcn: list[Layer], config: ModelConfig):
        self.cnn = cnn
        self.tcn = tcn
        self.config = config
        self._fwd = None

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> list[Param]:
        out = []
        for layer in self.cnn + self.tcn:
            out.extend(layer.params())
        return out

    def zero_grad(self) -> None:
        for layer in self.cnn + self.tcn:
            layer.zero_grad()

    # -- inference ----------------------------------------------------------

    def _as_batch(self, frames) -> tuple[np.ndarray, bool]:
        if isinstance(frames, (list, tuple)):
            frames = np.stack([getattr(f, "data", f) for f in frames])
        x = np.asarray(frames, dtype=np.float64)
        batched = x.ndim == 5
        if not batched:
            if x.ndim != 4:
                raise ValidationError(f"expected (T, tw, rp, c) frames, got shape {x.shape}")
            x = x[None]
        cfg = self.config
        if x.shape[1] != cfg.time_steps or x.shape[2:] != cfg.frame_shape:
            raise ValidationError(
                f"expected {cfg.time_steps} frames of shape {cfg.frame_shape}, "
                f"got {x.shape[1:]}"
            )
        return x, batched

    def forward_sequence(self, frames) -> np.ndarray:
        """Logits of shape (T, classes), or (B, T, classes) for batches.

        The CNN runs independently on every frame; the flattened feature
        vectors are stacked along time and pushed through the TCN and the
        per-step classifier.
        """
        x, batched = self._as_batch(frames)
        b, t = x.shape[:2]
        h = x.reshape(b * t, *self.config.frame_shape)
        for layer in self.cnn:
            h = layer.forward(h)
        h = h.reshape(b, t, -1)
        for layer in self.tcn:
            h = layer.forward(h)
        self._fwd = (b, t, batched)
        return h if batched else h[0]

    def backward(self, upstream_grad: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(logits); returns d(loss)/d(frames)."""
        if self._fwd is None:
            raise RuntimeError("backward called before forward_sequence")
        b, t, batched = self._fwd
        g = np.asarray(upstream_grad, dtype=np.float64)
        if not batched:
            g = g[None]
        for layer in reversed(self.tcn):
            g = layer.backward(g)
        g = g.reshape(b * t, -1)
        for layer in reversed(self.cnn):
            g = layer.backward(g)
        g = g.reshape(b, t, *self.config.frame_shape)
        return g if batched else g[0]

    # -- shape bookkeeping ---------------------------------------------------

    def cnn_output_shape(self) -> tuple:
        shape = self.config.frame_shape
        for layer in self.cnn[:-1]:  # up to the flatten
            shape = layer.out_shape(shape)
        return shape

    def flatten_width(self) -> int:
        return int(np.prod(self.cnn_output_shape()))

    def describe(self) -> list[LayerRow]:
        """Architecture rows: CNN per frame, then TCN per sequence.

        Residual blocks expand into their convolution plus an adding row so
        the listing mirrors the layer tables used in reports.
        """
        rows = []
        shape = self.config.frame_shape
        for layer in self.cnn:
            if layer.kind == "relu":
                continue
            out = layer.out_shape(shape)
            kernel = None
            mode = ""
            if layer.kind == "conv2d":
                kernel, mode = (layer.kh, layer.kw), "same"
            elif layer.kind == "maxpool2d":
                kernel, mode = (layer.kh, layer.kw), "valid"
            rows.append(
                LayerRow(layer.name, layer.kind, shape, out, kernel, mode,
                         sum(p.size for p in layer.params()))
            )
            shape = out
        t = self.config.time_steps
        shape = (t, self.flatten_width())
        for layer in self.tcn:
            if layer.kind == "relu":
                continue
            if layer.kind == "residual_block":
                conv = layer.conv
                out = conv.out_shape(shape)
                rows.append(
                    LayerRow(conv.name, conv.kind, shape, out, (conv.k,),
                             f"dilation={conv.dilation}",
                             sum(p.size for p in conv.params()))
                )
                rows.append(LayerRow(f"{layer.name}.add", "add", out, out))
                shape = out
                continue
            out = layer.out_shape(shape)
            kernel = (layer.k,) if layer.kind == "causal_conv1d" else None
            mode = f"dilation={layer.dilation}" if layer.kind == "causal_conv1d" else ""
            rows.append(
                LayerRow(layer.name, layer.kind, shape, out, kernel, mode,
                         sum(p.size for p in layer.params()))
            )
            shape = out
        return rows


def build_network(cfg: ModelConfig, seed: int = 0) -> Network:
    """Assemble the network for a configuration; deterministic per seed."""
    rng = np.random.default_rng(seed)
    cnn: list[Layer] = []
    shape = cfg.frame_shape
    cin = cfg.sensors
    for idx, ((kh, kw), cout) in enumerate(zip(CNN_KERNELS, CNN_CHANNELS), start=1):
        conv = Conv2D(kh, kw, cin, cout, rng=rng, name=f"conv{idx}")
        shape = conv.out_shape(shape)
        pool = MaxPool2D(min(kh, shape[0]), min(kw, shape[1]), name=f"pool{idx}")
        shape = pool.out_shape(shape)
        if min(shape) < 1:
            raise ValidationError(f"pool{idx}: output collapsed to {shape}")
        cnn.extend([conv, ReLU(name=f"relu{idx}"), pool])
        cin = cout
    cnn.append(Flatten(name="flatten"))
    feat = int(np.prod(shape))

    f = cfg.tcn_filters
    tcn: list[Layer] = [CausalConv1D(1, feat, f, rng=rng, name="compress")]
    for d in cfg.dilations:
        tcn.append(ResidualBlock(f, dilation=d, rng=rng, name=f"block_d{d}"))
    tcn.extend(
        [
            Dense(f, 2 * f, rng=rng, name="fc1"),
            ReLU(name="fc1_relu"),
            Dense(2 * f, f, rng=rng, name="fc2"),
            ReLU(name="fc2_relu"),
            Dense(f, cfg.classes, rng=rng, name="classifier"),
        ]
    )
    net = Network(cnn, tcn, cfg)
    # Verify the chain end to end; raises naming the offending layer.
    seq_shape = (cfg.time_steps, feat)
    for layer in tcn:
        seq_shape = layer.out_shape(seq_shape)
    return net


def forward_sequence(net: Network, frames) -> np.ndarray:
    """Per-step logits for a stack of feature frames; see Network.forward_sequence."""
    return net.forward_sequence(frames)


def network_backward(net: Network, frames, upstream_grad) -> tuple[dict, np.ndarray]:
    """Forward then reverse-mode sweep; returns ({param name: grad}, d/dframes)."""
    net.forward_sequence(frames)
    net.zero_grad()
    dx = net.backward(upstream_grad)
    return {p.name: p.grad.copy() for p in net.parameters()}, dx


# -- accounting ---------------------------------------------------------------


@dataclass
class ParamBreakdown:
    cnn: int
    tcn: int

    @property
    def total(self) -> int:
        return self.cnn + self.tcn


def count_params(net: Network) -> ParamBreakdown:
    """Scalar parameter counts; the TCN side includes the dense head."""
    cnn = sum(p.size for layer in net.cnn for p in layer.params())
    tcn = sum(p.size for layer in net.tcn for p in layer.params())
    return ParamBreakdown(cnn=cnn, tcn=tcn)


@dataclass
class MacBreakdown:
    """Multiply-accumulate counts per stage for one sequence-step inference.

    The CNN runs once per new frame; TCN and dense stages cover all
    time_steps.  Pooling is comparisons, not MACs, and is reported apart.
    """

    per_layer: list[tuple[str, int]] = field(default_factory=list)
    cnn: int = 0
    tcn: int = 0
    dense: int = 0
    pool_comparisons: int = 0

    @property
    def total(self) -> int:
        return self.cnn + self.tcn + self.dense


def count_macs(net: Network) -> MacBreakdown:
    out = MacBreakdown()
    shape = net.config.frame_shape
    for layer in net.cnn:
        nxt = layer.out_shape(shape)
        if layer.kind == "conv2d":
            macs = int(np.prod(nxt)) * layer.kh * layer.kw * layer.cin
            out.per_layer.append((layer.name, macs))
            out.cnn += macs
        elif layer.kind == "maxpool2d":
            out.pool_comparisons += int(np.prod(nxt)) * (layer.kh * layer.kw - 1)
        shape = nxt

    t = net.config.time_steps
    seq = (t, net.flatten_width())
    for layer in net.tcn:
        if layer.kind == "residual_block":
            conv = layer.conv
            macs = t * conv.cout * conv.k * conv.cin
            out.per_layer.append((conv.name, macs))
            out.tcn += macs
            continue
        nxt = layer.out_shape(seq)
        if layer.kind == "causal_conv1d":
            macs = t * layer.cout * layer.k * layer.cin
            out.per_layer.append((layer.name, macs))
            out.tcn += macs
        elif layer.kind == "dense":
            macs = t * layer.n_in * layer.n_out
            out.per_layer.append((layer.name, macs))
            out.dense += macs
        seq = nxt
    return out


def tcn_param_formula(variant: str, filters: int) -> int:
    """Parameters of the sequence-modelling stack (residual blocks only).

    proposed: three single-conv blocks, 3*(2F^2 + F)
    original: the two-conv variant, twice that
    """
    if filters < 1:
        raise ValidationError(f"filters must be >= 1, got {filters}")
    per_block = 2 * filters * filters + filters
    if variant == "proposed":
        return 3 * per_block
    if variant == "original":
        return 6 * per_block
    raise ValidationError(f"unknown variant {variant!r}")


def lstm_param_formula(filters: int) -> int:
    """Three stacked recurrent layers, 4 gates, dual biases: 3*(8F^2 + 8F)."""
    if filters < 1:
        raise ValidationError(f"filters must be >= 1, got {filters}")
    return 3 * (8 * filters * filters + 8 * filters)


def sequence_param_table(filters=(32, 64, 96, 128)) -> dict[str, list[int]]:
    """Exact sequence-model parameter counts for a set of filter widths."""
    return {
        "filters": list(filters),
        "lstm": [lstm_param_formula(f) for f in filters],
        "original_tcn": [tcn_param_formula("original", f) for f in filters],
        "proposed_tcn": [tcn_param_formula("proposed", f) for f in filters],
    }


# -- parameter serialization ("TRNW") -----------------------------------------


def save_network(path, net: Network) -> None:
    """Write parameters as a versioned little-endian float32 blob."""
    cfg = net.config
    parts = [TRNW_MAGIC]
    head = [TRNW_VERSION, cfg.tw, cfg.rp, cfg.sensors, cfg.classes,
            cfg.tcn_filters, cfg.time_steps, len(cfg.dilations), *cfg.dilations]
    parts.append(struct.pack(f"<{len(head)}I", *head))
    params = net.parameters()
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        parts.append(struct.pack("<I", p.value.ndim))
        parts.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        parts.append(p.value.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TRNW_MAGIC:
        raise FormatError(f"not a TRNW blob (magic {blob[:4]!r})")
    off = 4

    def take(n_words):
        nonlocal off
        vals = struct.unpack_from(f"<{n_words}I", blob, off)
        off += 4 * n_words
        return vals

    (version,) = take(1)
    if version != TRNW_VERSION:
        raise FormatError(f"unsupported TRNW version {version} (expected {TRNW_VERSION})")
    tw, rp, sensors, classes, tcn_filters, time_steps, n_dil = take(7)
    dilations = take(n_dil)
    cfg = ModelConfig(tw, rp, sensors, classes, tcn_filters, time_steps, dilations)
    net = build_network(cfg, seed=0)
    (n_params,) = take(1)
    params = net.parameters()
    if n_params != len(params):
        raise FormatError(f"blob has {n_params} tensors, network expects {len(params)}")
    for p in params:
        (ndim,) = take(1)
        shape = take(ndim)
        if tuple(shape) != p.value.shape:
            raise FormatError(f"{p.name}: stored shape {shape} != expected {p.value.shape}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        off += 4 * count
        p.value[...] = data.reshape(shape).astype(np.float64)
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes after parameters")
    return net
