"""Static activation-buffer accounting for the built network.

With statically allocated buffers, each fused block needs its input and its
output feature map live at the same time; the peak requirement is the
maximum of that sum over all blocks.  Convolution+pool pairs are fused, so a
block's output is the post-pool map and the intermediate conv map never
counts against the budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Network


@dataclass
class MemoryBlock:
    name: str
    layers: tuple[str, ...]
    input_shape: tuple
    output_shape: tuple
    input_bytes: int
    output_bytes: int

    @property
    def live_bytes(self) -> int:
        return self.input_bytes + self.output_bytes


@dataclass
class MemoryPlan:
    blocks: list[MemoryBlock] = field(default_factory=list)
    activation_bits: int = 8

    @property
    def peak_bytes(self) -> int:
        return max(b.live_bytes for b in self.blocks)

    @property
    def peak_block(self) -> MemoryBlock:
        return max(self.blocks, key=lambda b: b.live_bytes)

    @property
    def peak_block_index(self) -> int:
        return self.blocks.index(self.peak_block)

    @property
    def fusion_map(self) -> dict[str, tuple[str, ...]]:
        return {b.name: b.layers for b in self.blocks}


def _nbytes(shape, bits: int) -> int:
    return int(np.prod(shape)) * bits // 8


def memory_plan(net: Network, activation_bits: int = 8) -> MemoryPlan:
    """Per-block live-set accounting at the given activation width."""
    plan = MemoryPlan(activation_bits=activation_bits)

    def add(name, layers, in_shape, out_shape):
        plan.blocks.append(
            MemoryBlock(
                name=name,
                layers=tuple(layers),
                input_shape=tuple(in_shape),
                output_shape=tuple(out_shape),
                input_bytes=_nbytes(in_shape, activation_bits),
                output_bytes=_nbytes(out_shape, activation_bits),
            )
        )

    shape = net.config.frame_shape
    group: list = []
    group_in = shape
    for layer in net.cnn:
        if layer.kind in ("relu", "flatten"):  # free view changes
            continue
        shape_out = layer.out_shape(shape)
        group.append(layer.name)
        if layer.kind == "maxpool2d":
            add(f"block{len(plan.blocks) + 1}", group, group_in, shape_out)
            group, group_in = [], shape_out
        shape = shape_out

    t = net.config.time_steps
    seq = (t, net.flatten_width())
    for layer in net.tcn:
        if layer.kind == "relu":
            continue
        out = layer.out_shape(seq)
        add(layer.name, [layer.name], seq, out)
        seq = out
    return plan
