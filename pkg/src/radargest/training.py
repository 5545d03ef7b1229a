"""Training loop, Adam updates, dataset splits, and accuracy metrics.

Supervision is per time step: the sequence label is applied at every TCN
output step and the cross-entropy is averaged over steps.  All shuffling and
batching is driven by a single seeded generator, so a run is reproducible
bit for bit given (seed, config, dataset).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import ModelConfig, Network

DEFAULT_EVAL_BATCH = 64


@dataclass
class GestureDataset:
    """Labeled feature sequences: frames (S, T, tw, rp, c) plus identity."""

    frames: np.ndarray
    labels: np.ndarray
    users: np.ndarray
    sessions: np.ndarray
    class_count: int
    config: ModelConfig

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.users = np.asarray(self.users, dtype=np.int64)
        self.sessions = np.asarray(self.sessions, dtype=np.int64)
        if self.frames.ndim != 5:
            raise ValidationError(f"frames must be (S, T, tw, rp, c), got {self.frames.shape}")
        if self.frames.shape[1] != self.config.time_steps:
            raise ValidationError(
                f"sequences carry {self.frames.shape[1]} frames, config expects "
                f"{self.config.time_steps}"
            )
        n = len(self.frames)
        if not (len(self.labels) == len(self.users) == len(self.sessions) == n):
            raise ValidationError("frames, labels, users, sessions must align")
        if n and self.labels.max() >= self.class_count:
            raise ValidationError("label exceeds class_count")

    def __len__(self) -> int:
        return len(self.frames)

    def subset(self, indices) -> "GestureDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return GestureDataset(
            self.frames[idx], self.labels[idx], self.users[idx], self.sessions[idx],
            self.class_count, self.config,
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("beta1 and beta2 must lie in [0, 1)")


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam_state(params) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p.value) for p in params],
        v=[np.zeros_like(p.value) for p in params],
    )


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update.  Updates parameter values in place and
    returns the advanced state."""
    if len(params) != len(state.m):
        raise ValidationError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValidationError(f"gradient shape {g.shape} != param shape {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state


# -- loss ---------------------------------------------------------------------


def cross_entropy_loss(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Per-step softmax cross-entropy against one sequence label.

    Returns (loss averaged over the T steps, gradient (softmax - onehot)/T).
    Log-sum-exp stabilized.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValidationError("non-finite logits")
    t, k = logits.shape
    if not 0 <= label < k:
        raise ValidationError(f"label {label} out of range for {k} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(t), label]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    grad = probs / t
    grad[:, label] -= 1.0 / t
    return loss, grad


def _batch_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    # Mean over the batch of the per-sequence loss above.
    b, t, k = logits.shape
    shifted = logits - logits.max(axis=2, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=2))
    picked = shifted[np.arange(b)[:, None], np.arange(t)[None, :], labels[:, None]]
    loss = float(np.mean(lse - picked))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=2, keepdims=True)
    grad = probs / (b * t)
    grad[np.arange(b)[:, None], np.arange(t)[None, :], labels[:, None]] -= 1.0 / (b * t)
    return loss, grad


# -- splits -------------------------------------------------------------------


def split_cv5(ds: GestureDataset, fold: int, seed: int = 0) -> tuple[GestureDataset, GestureDataset]:
    """Stratified 5-fold split: fold k held out, the rest train."""
    if not 0 <= fold < 5:
        raise ValidationError(f"fold must be in [0, 5), got {fold}")
    if len(ds) < 5:
        raise ValidationError(f"need at least 5 sequences for 5 folds, got {len(ds)}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(ds), dtype=np.int64)
    for cls in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == cls)
        rng.shuffle(idx)
        assignment[idx] = np.arange(len(idx)) % 5
    test_idx = np.flatnonzero(assignment == fold)
    train_idx = np.flatnonzero(assignment != fold)
    return ds.subset(train_idx), ds.subset(test_idx)


def split_loocv(ds: GestureDataset, held_out_user: int) -> tuple[GestureDataset, GestureDataset]:
    """All sequences of one user held out; errors if that empties a side."""
    mask = ds.users == held_out_user
    if not mask.any():
        raise ValidationError(f"user {held_out_user} not present in dataset")
    if mask.all():
        raise ValidationError(f"user {held_out_user} is the only user; no training data left")
    return ds.subset(np.flatnonzero(~mask)), ds.subset(np.flatnonzero(mask))


# -- training and evaluation ----------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    per_frame_acc: float
    per_seq_acc: float


def train(
    net: Network,
    ds: GestureDataset,
    cfg: TrainConfig,
    *,
    stop_at_accuracy: float | None = None,
    log=None,
) -> list[EpochRecord]:
    """Mini-batch Adam training; returns the per-epoch history.

    Accuracy in the history is measured on the training batches as they are
    seen.  ``stop_at_accuracy`` ends training early once the epoch's
    per-sequence accuracy reaches the threshold.
    """
    if len(ds) == 0:
        raise ValidationError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    state = init_adam_state(params)
    history: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(ds))
        losses = []
        frame_hits = seq_hits = frame_total = seq_total = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = ds.frames[idx]
            y = ds.labels[idx]
            logits = net.forward_sequence(x)
            loss, grad = _batch_cross_entropy(logits, y)
            net.zero_grad()
            net.backward(grad)
            adam_step(params, [p.grad for p in params], state, cfg)
            losses.append(loss)
            pf, ps = _batch_hits(logits, y)
            frame_hits += pf
            seq_hits += ps
            frame_total += logits.shape[0] * logits.shape[1]
            seq_total += logits.shape[0]
        rec = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(losses)),
            per_frame_acc=frame_hits / frame_total,
            per_seq_acc=seq_hits / seq_total,
        )
        history.append(rec)
        if log is not None:
            log(rec)
        if stop_at_accuracy is not None and rec.per_seq_acc >= stop_at_accuracy:
            break
    return history


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate_sequence(logits: np.ndarray, *, rule: str = "mean_softmax") -> int:
    """Collapse per-step logits (T, K) into one class prediction."""
    if rule == "mean_softmax":
        return int(np.argmax(_softmax(logits).mean(axis=0)))
    if rule == "majority":
        votes = np.argmax(logits, axis=1)
        counts = np.bincount(votes, minlength=logits.shape[1])
        return int(np.argmax(counts))
    raise ValidationError(f"unknown aggregation rule {rule!r}")


def _batch_hits(logits: np.ndarray, labels: np.ndarray) -> tuple[int, int]:
    frame_pred = logits.argmax(axis=2)
    frame_hits = int((frame_pred == labels[:, None]).sum())
    seq_pred = _softmax(logits).mean(axis=1).argmax(axis=1)
    seq_hits = int((seq_pred == labels).sum())
    return frame_hits, seq_hits


@dataclass
class EvalResult:
    per_frame_acc: float
    per_seq_acc: float
    confusion: np.ndarray  # rows true class, columns predicted (per sequence)


def evaluate(
    net: Network,
    ds: GestureDataset,
    *,
    rule: str = "mean_softmax",
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> EvalResult:
    """Per-frame and per-sequence accuracy plus the sequence confusion matrix.

    per-frame: every (sequence, step) prediction scored on its own.
    per-sequence: softmax averaged across the T steps (or majority vote),
    then argmax against the label.
    """
    k = ds.class_count
    confusion = np.zeros((k, k), dtype=np.int64)
    frame_hits = 0
    for start in range(0, len(ds), batch_size):
        x = ds.frames[start : start + batch_size]
        y = ds.labels[start : start + batch_size]
        logits = net.forward_sequence(x)
        frame_hits += int((logits.argmax(axis=2) == y[:, None]).sum())
        for row, label in zip(logits, y):
            confusion[label, aggregate_sequence(row, rule=rule)] += 1
    n = len(ds)
    t = ds.config.time_steps
    return EvalResult(
        per_frame_acc=frame_hits / (n * t) if n else 0.0,
        per_seq_acc=float(np.trace(confusion) / n) if n else 0.0,
        confusion=confusion,
    )
