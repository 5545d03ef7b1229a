"""Report emission: delimited tables plus matplotlib figures.

This is the only module that touches matplotlib; the numeric core stays
plotting-free.  Every CSV starts with a comment line carrying the config
hash so artifacts can be traced back to the run that produced them.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_table(path, header, rows, *, conf_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if conf_hash:
            fh.write(f"# config_hash={conf_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_run_config(out_dir, config: dict) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(config)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump({**config, "config_hash": h}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return h


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_history_figure(path, history) -> Path:
    epochs = [r.epoch for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r.loss for r in history], marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [r.per_frame_acc for r in history], marker="o", label="per frame")
    ax2.plot(epochs, [r.per_seq_acc for r in history], marker="s", label="per sequence")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.grid(alpha=0.3)
    ax2.legend()
    return _finish(fig, path)


def save_confusion_figure(path, confusion: np.ndarray, class_names=None) -> Path:
    k = confusion.shape[0]
    names = class_names if class_names is not None else [str(i) for i in range(k)]
    fig, ax = plt.subplots(figsize=(0.6 * k + 2.5, 0.6 * k + 2))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(k), names, rotation=45, ha="right")
    ax.set_yticks(range(k), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(confusion[i, j]), ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _finish(fig, path)


def save_memplan_figure(path, plan) -> Path:
    names = [b.name for b in plan.blocks]
    live = [b.live_bytes for b in plan.blocks]
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(names)), 3.5))
    bars = ax.bar(names, live, color="steelblue")
    bars[plan.peak_block_index].set_color("firebrick")
    ax.set_ylabel("live bytes (input + output)")
    ax.set_yscale("log")
    ax.grid(axis="y", alpha=0.3)
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    ax.set_title(f"peak {plan.peak_bytes} bytes at {plan.peak_block.name}")
    return _finish(fig, path)


def save_param_curve_figure(path, table: dict) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for key, marker in (("lstm", "o"), ("original_tcn", "s"), ("proposed_tcn", "^")):
        ax.plot(table["filters"], [v / 1000 for v in table[key]], marker=marker, label=key)
    ax.set_xlabel("sequence-model filters")
    ax.set_ylabel("parameters (k)")
    ax.grid(alpha=0.3)
    ax.legend()
    return _finish(fig, path)


def save_rfdm_figure(path, feature: np.ndarray, sensor: int = 0) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    im = ax.imshow(feature[:, :, sensor], aspect="auto", origin="lower", cmap="viridis")
    ax.set_xlabel("range bin")
    ax.set_ylabel("frequency bin")
    fig.colorbar(im, ax=ax, label="normalized magnitude")
    return _finish(fig, path)


def save_quant_error_figure(path, float_logits: np.ndarray, quant_logits: np.ndarray) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(float_logits.ravel(), quant_logits.ravel(), s=8, alpha=0.5)
    lo = min(float_logits.min(), quant_logits.min())
    hi = max(float_logits.max(), quant_logits.max())
    ax.plot([lo, hi], [lo, hi], "k--", linewidth=1)
    ax.set_xlabel("float logit")
    ax.set_ylabel("quantized logit")
    ax.grid(alpha=0.3)
    return _finish(fig, path)
