"""Central-finite-difference verification of the analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Network
from .training import cross_entropy_loss


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    net: Network,
    frames: np.ndarray,
    label: int,
    eps: float = 1e-5,
    tolerance: float = 1e-5,
    *,
    max_entries_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences of the loss.

    For every parameter tensor, entries (all, or a seeded sample of up to
    ``max_entries_per_param``) are perturbed by +-eps and the numeric slope
    is checked against the backward pass.  The relative error uses
    |a - n| / max(|a|, |n|); entries where both sides are below 1e-7 count
    as exact agreement (finite-difference noise floor).
    """
    rng = np.random.default_rng(seed)
    logits = net.forward_sequence(frames)
    _, grad = cross_entropy_loss(logits, label)
    net.zero_grad()
    net.backward(grad)
    analytic = {p.name: p.grad.copy() for p in net.parameters()}

    def loss_at() -> float:
        out = net.forward_sequence(frames)
        value, _ = cross_entropy_loss(out, label)
        return value

    per_param: dict[str, float] = {}
    for p in net.parameters():
        flat = p.value.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            entries = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            entries = range(n)
        worst = 0.0
        ana_flat = analytic[p.name].reshape(-1)
        for idx in entries:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = loss_at()
            flat[idx] = orig - eps
            minus = loss_at()
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * eps)
            ana = ana_flat[idx]
            denom = max(abs(ana), abs(numeric))
            if denom >= 1e-7:
                worst = max(worst, abs(ana - numeric) / denom)
        per_param[p.name] = worst
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(per_param=per_param, max_rel_error=max_err, tolerance=tolerance)
