"""Recording-to-dataset plumbing: frames, features, sliding sequences.

Training data uses non-overlapping frames (stride = tw) and sequences of
time_steps consecutive frames sliding one frame at a time.  Recordings too
short for a full sequence are dropped and counted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import compute_rfdm, normalize_frame
from .model import ModelConfig
from .recording import SweepRecording, frame_stream, read_recording
from .training import GestureDataset


def frame_features(raw) -> np.ndarray:
    """RFDM magnitude, normalized per channel: the network's input tensor."""
    return normalize_frame(compute_rfdm(raw)).data


def sequences_from_recording(
    rec: SweepRecording, cfg: ModelConfig, *, seq_stride: int = 1
) -> np.ndarray:
    """Feature sequences (S, T, tw, rp, c) from one recording; S may be 0."""
    tw, t = cfg.tw, cfg.time_steps
    if rec.n_sweeps < tw * t:
        return np.empty((0, t, tw, rec.range_points, rec.sensors))
    feats = np.stack([frame_features(f) for f in frame_stream(rec, tw=tw, stride=tw)])
    n_seq = (len(feats) - t) // seq_stride + 1
    return np.stack([feats[k * seq_stride : k * seq_stride + t] for k in range(n_seq)])


def dataset_from_recordings(
    recordings, cfg: ModelConfig, *, class_count: int | None = None
) -> tuple[GestureDataset, int]:
    """Build a labeled dataset; returns (dataset, dropped recording count)."""
    frames, labels, users, sessions = [], [], [], []
    dropped = 0
    for rec in recordings:
        seqs = sequences_from_recording(rec, cfg)
        if len(seqs) == 0:
            dropped += 1
            continue
        frames.append(seqs)
        labels.extend([rec.label] * len(seqs))
        users.extend([rec.user_id] * len(seqs))
        sessions.extend([rec.session_id] * len(seqs))
    if not frames:
        raise ValidationError("no recording was long enough to produce a sequence")
    labels = np.asarray(labels)
    if class_count is None:
        class_count = int(labels.max()) + 1
    ds = GestureDataset(
        frames=np.concatenate(frames),
        labels=labels,
        users=np.asarray(users),
        sessions=np.asarray(sessions),
        class_count=class_count,
        config=cfg,
    )
    return ds, dropped


def load_recording_dir(path) -> list[SweepRecording]:
    """All *.trd1 files under a directory, sorted by name."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"recording directory not found: {root}")
    files = sorted(root.glob("*.trd1"))
    if not files:
        raise FileNotFoundError(f"no .trd1 recordings in {root}")
    return [read_recording(f) for f in files]


def save_dataset(path, ds: GestureDataset) -> None:
    np.savez_compressed(
        path,
        frames=ds.frames.astype(np.float32),
        labels=ds.labels,
        users=ds.users,
        sessions=ds.sessions,
        class_count=ds.class_count,
        config=np.asarray(
            [ds.config.tw, ds.config.rp, ds.config.sensors, ds.config.classes,
             ds.config.tcn_filters, ds.config.time_steps, *ds.config.dilations]
        ),
    )


def load_dataset(path) -> GestureDataset:
    with np.load(path) as blob:
        cfg_row = blob["config"]
        cfg = ModelConfig(
            tw=int(cfg_row[0]), rp=int(cfg_row[1]), sensors=int(cfg_row[2]),
            classes=int(cfg_row[3]), tcn_filters=int(cfg_row[4]),
            time_steps=int(cfg_row[5]), dilations=tuple(int(d) for d in cfg_row[6:]),
        )
        return GestureDataset(
            frames=blob["frames"].astype(np.float64),
            labels=blob["labels"],
            users=blob["users"],
            sessions=blob["sessions"],
            class_count=int(blob["class_count"]),
            config=cfg,
        )
