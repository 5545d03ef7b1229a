"""Command-line entry point wiring the pipeline into reproducible runs.

Subcommands: synth, preprocess, train, eval, quantize, infer, stats,
memplan.  Every command resolves a flat key-value configuration (defaults <-
--config JSON <- command-line flags), rejects unknown keys, emits the
resolved config next to its outputs, and stamps delimited reports with the
config hash.  Reports come as CSV tables plus rendered figures (disable with
--no-figures).

Exit codes: 0 success, 2 validation/config error, 3 missing input,
4 malformed or version-mismatched container.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .memplan import memory_plan
from .model import (
    ModelConfig,
    build_network,
    count_macs,
    count_params,
    load_network,
    save_network,
    sequence_param_table,
)
from .pipeline import (
    dataset_from_recordings,
    load_dataset,
    load_recording_dir,
    save_dataset,
    sequences_from_recording,
)
from .quantize import (
    calibrate_and_quantize,
    load_quantized,
    model_size_bytes,
    quantized_forward_sequence,
    save_quantized,
)
from .recording import read_recording, write_recording
from .synth import GESTURE_CLASSES, make_gesture_recording
from .training import TrainConfig, aggregate_sequence, evaluate, split_cv5, split_loocv, train

DATA_DIR_ENV = "RADARGEST_DATA_DIR"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4

DEFAULTS: dict = {
    # model geometry
    "tw": 32,
    "rp": 492,
    "sensors": 2,
    "classes": 11,
    "filters": 32,
    "time_steps": 5,
    "dilations": [1, 2, 4],
    # training
    "batch_size": 128,
    "epochs": 100,
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1e-8,
    "seed": 0,
    "fold": None,
    "held_out_user": None,
    "aggregation": "mean_softmax",
    # synthetic corpus
    "per_class": 200,
    "synth_rp": 64,
    "synth_sweeps": 160,
    "sweep_freq": 160.0,
    "noise_std": 0.05,
    # io
    "data_dir": None,
    "out_dir": "out",
    "model_path": None,
    "figures": True,
}


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit CLI flags; unknown keys rejected."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object of key-value pairs")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    overrides = {
        "seed": "seed", "fold": "fold", "held_out_user": "held_out_user",
        "filters": "filters", "time_steps": "time_steps", "epochs": "epochs",
        "batch_size": "batch_size", "learning_rate": "learning_rate",
        "per_class": "per_class", "tw": "tw", "rp": "rp", "sensors": "sensors",
        "classes": "classes", "data": "data_dir", "out": "out_dir",
        "model": "model_path", "aggregation": "aggregation",
    }
    for flag, key in overrides.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "no_figures", False):
        cfg["figures"] = False
    if cfg["data_dir"] is None:
        cfg["data_dir"] = os.environ.get(DATA_DIR_ENV)
    return cfg


def _model_config(cfg: dict, **overrides) -> ModelConfig:
    fields = dict(
        tw=cfg["tw"], rp=cfg["rp"], sensors=cfg["sensors"], classes=cfg["classes"],
        tcn_filters=cfg["filters"], time_steps=cfg["time_steps"],
        dilations=tuple(cfg["dilations"]),
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"], beta1=cfg["beta1"], beta2=cfg["beta2"],
        eps=cfg["adam_eps"], seed=cfg["seed"],
    )


def _require_data(cfg: dict) -> Path:
    if not cfg["data_dir"]:
        raise ValidationError(
            f"no data path given: pass --data or set {DATA_DIR_ENV}"
        )
    path = Path(cfg["data_dir"])
    if not path.exists():
        raise FileNotFoundError(f"data path not found: {path}")
    return path


def _load_training_data(cfg: dict):
    """Dataset from a features .npz or a directory of .trd1 recordings."""
    path = _require_data(cfg)
    if path.is_file() and path.suffix == ".npz":
        ds = load_dataset(path)
        if ds.config.time_steps != cfg["time_steps"]:
            raise ValidationError(
                f"dataset was preprocessed with time_steps={ds.config.time_steps}, "
                f"requested {cfg['time_steps']}"
            )
        mc = _model_config(
            cfg, tw=ds.config.tw, rp=ds.config.rp, sensors=ds.config.sensors,
            classes=ds.config.classes, time_steps=ds.config.time_steps,
        )
        return ds.__class__(ds.frames, ds.labels, ds.users, ds.sessions, ds.class_count, mc)
    recs = load_recording_dir(path)
    rp, sensors = recs[0].range_points, recs[0].sensors
    classes = int(max(r.label for r in recs)) + 1
    mc = _model_config(cfg, rp=rp, sensors=sensors, classes=classes)
    ds, dropped = dataset_from_recordings(recs, mc, class_count=classes)
    if dropped:
        print(f"dropped {dropped} recordings shorter than tw*time_steps")
    return ds


def _split(ds, cfg: dict):
    if cfg["fold"] is not None and cfg["held_out_user"] is not None:
        raise ValidationError("--fold and --held-out-user are mutually exclusive")
    if cfg["fold"] is not None:
        return split_cv5(ds, int(cfg["fold"]), seed=cfg["seed"])
    if cfg["held_out_user"] is not None:
        return split_loocv(ds, int(cfg["held_out_user"]))
    return ds, None


def _out(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_config(cfg: dict, out: Path) -> str:
    from . import report

    clean = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
    return report.write_run_config(out, clean)


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    from . import report

    cfg = resolve_config(args)
    out = _out(cfg)
    h = _emit_config(cfg, out)
    rows = []
    n_users = 10
    for class_id, (name, velocity) in enumerate(GESTURE_CLASSES):
        for k in range(cfg["per_class"]):
            seed = cfg["seed"] + class_id * cfg["per_class"] + k
            rec = make_gesture_recording(
                class_id, seed=seed, n_sweeps=cfg["synth_sweeps"], rp=cfg["synth_rp"],
                sweep_freq=cfg["sweep_freq"], noise_std=cfg["noise_std"],
                user_id=k % n_users, session_id=k // n_users,
            )
            fname = f"gesture_c{class_id}_{k:04d}.trd1"
            write_recording(out / fname, rec)
            rows.append([fname, class_id, name, velocity, rec.user_id, rec.session_id, seed])
    report.write_table(
        out / "manifest.csv",
        ["file", "class_id", "class_name", "velocity_mps", "user_id", "session_id", "seed"],
        rows, conf_hash=h,
    )
    print(f"wrote {len(rows)} recordings ({len(GESTURE_CLASSES)} classes) to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from . import report

    cfg = resolve_config(args)
    out = _out(cfg)
    h = _emit_config(cfg, out)
    ds = _load_training_data(cfg)
    save_dataset(out / "features.npz", ds)
    counts = np.bincount(ds.labels, minlength=ds.class_count)
    report.write_table(
        out / "summary.csv", ["class_id", "sequences"],
        [[i, int(c)] for i, c in enumerate(counts)], conf_hash=h,
    )
    print(f"wrote {len(ds)} sequences ({ds.class_count} classes) to {out / 'features.npz'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import report

    cfg = resolve_config(args)
    out = _out(cfg)
    h = _emit_config(cfg, out)
    ds = _load_training_data(cfg)
    train_ds, test_ds = _split(ds, cfg)
    net = build_network(train_ds.config, seed=cfg["seed"])
    tc = _train_config(cfg)
    history = train(
        net, train_ds, tc,
        log=lambda r: print(
            f"epoch {r.epoch:3d}  loss {r.loss:.4f}  "
            f"frame {r.per_frame_acc:.3f}  seq {r.per_seq_acc:.3f}"
        ),
    )
    save_network(out / "model.trnw", net)
    report.write_table(
        out / "history.csv", ["epoch", "loss", "per_frame_acc", "per_seq_acc"],
        [[r.epoch, r.loss, r.per_frame_acc, r.per_seq_acc] for r in history], conf_hash=h,
    )
    if cfg["figures"]:
        report.save_history_figure(out / "training_curves.png", history)
    if test_ds is not None and len(test_ds):
        res = evaluate(net, test_ds, rule=cfg["aggregation"])
        print(f"held-out: per-frame {res.per_frame_acc:.4f}  per-seq {res.per_seq_acc:.4f}")
        report.write_table(
            out / "metrics.csv", ["metric", "value"],
            [["per_frame_acc", res.per_frame_acc], ["per_seq_acc", res.per_seq_acc]],
            conf_hash=h,
        )
    print(f"model written to {out / 'model.trnw'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import report

    cfg = resolve_config(args)
    if not cfg["model_path"]:
        raise ValidationError("--model is required for eval")
    out = _out(cfg)
    h = _emit_config(cfg, out)
    net = load_network(_existing(cfg["model_path"]))
    cfg["time_steps"] = net.config.time_steps
    cfg["tw"] = net.config.tw
    ds = _load_training_data(cfg)
    _, test_ds = _split(ds, cfg)
    target = test_ds if test_ds is not None else ds
    res = evaluate(net, target, rule=cfg["aggregation"])
    print(f"sequences evaluated: {len(target)}")
    print(f"per-frame accuracy:    {res.per_frame_acc:.4f}")
    print(f"per-sequence accuracy: {res.per_seq_acc:.4f}")
    print("confusion matrix (rows true, cols predicted):")
    for row in res.confusion:
        print("  " + " ".join(f"{v:5d}" for v in row))
    report.write_table(
        out / "metrics.csv", ["metric", "value"],
        [["per_frame_acc", res.per_frame_acc], ["per_seq_acc", res.per_seq_acc]],
        conf_hash=h,
    )
    report.write_table(
        out / "confusion.csv", [f"pred_{i}" for i in range(target.class_count)],
        res.confusion.tolist(), conf_hash=h,
    )
    if cfg["figures"]:
        report.save_confusion_figure(out / "confusion.png", res.confusion)
    return EXIT_OK


def cmd_quantize(args) -> int:
    from . import report

    cfg = resolve_config(args)
    if not cfg["model_path"]:
        raise ValidationError("--model is required for quantize")
    out = _out(cfg)
    h = _emit_config(cfg, out)
    net = load_network(_existing(cfg["model_path"]))
    cfg["time_steps"] = net.config.time_steps
    cfg["tw"] = net.config.tw
    ds = _load_training_data(cfg)
    qnet = calibrate_and_quantize(net, ds.frames)
    save_quantized(out / "model.trq1", qnet)

    float_logits = np.stack([net.forward_sequence(f) for f in ds.frames])
    quant_logits = np.stack([quantized_forward_sequence(qnet, f) for f in ds.frames])
    agree = float(
        np.mean(float_logits.argmax(axis=2).ravel() == quant_logits.argmax(axis=2).ravel())
    )
    seq_agree = float(
        np.mean(
            [
                aggregate_sequence(fl) == aggregate_sequence(ql)
                for fl, ql in zip(float_logits, quant_logits)
            ]
        )
    )
    max_err = float(np.max(np.abs(float_logits - quant_logits)))
    size = model_size_bytes(qnet)
    print(f"quantized model: {size} bytes of weights+biases")
    print(f"argmax agreement: per-frame {agree:.4f}, per-sequence {seq_agree:.4f}")
    print(f"max |float - quant| logit error: {max_err:.4f}")
    report.write_table(
        out / "quant_report.csv", ["metric", "value"],
        [["model_size_bytes", size], ["frame_argmax_agreement", agree],
         ["sequence_argmax_agreement", seq_agree], ["max_logit_abs_error", max_err]],
        conf_hash=h,
    )
    if cfg["figures"]:
        report.save_quant_error_figure(out / "quant_error.png", float_logits, quant_logits)
    print(f"quantized model written to {out / 'model.trq1'}")
    return EXIT_OK


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def _sniff_model(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"TRNW":
        return load_network(path), False
    if magic == b"TRQ1":
        return load_quantized(path), True
    raise FormatError(f"unrecognized model container (magic {magic!r})")


def cmd_infer(args) -> int:
    from . import report
    from .pipeline import frame_features

    cfg = resolve_config(args)
    if not cfg["model_path"]:
        raise ValidationError("--model is required for infer")
    net, quantized = _sniff_model(_existing(cfg["model_path"]))
    rec = read_recording(_existing(args.recording))
    mc = net.config
    if rec.range_points != mc.rp or rec.sensors != mc.sensors:
        raise ValidationError(
            f"recording geometry ({rec.range_points} range points, {rec.sensors} sensors) "
            f"does not match the model ({mc.rp}, {mc.sensors})"
        )
    seqs = sequences_from_recording(rec, mc)
    if len(seqs) == 0:
        raise ValidationError(
            f"recording too short: need at least {mc.tw * mc.time_steps} sweeps"
        )
    forward = quantized_forward_sequence if quantized else (lambda n, f: n.forward_sequence(f))
    preds = []
    rows = []
    for s, seq in enumerate(seqs):
        logits = forward(net, seq)
        pred = aggregate_sequence(np.asarray(logits), rule=cfg["aggregation"])
        preds.append(pred)
        for t, row in enumerate(np.asarray(logits)):
            rows.append([s, t, int(np.argmax(row))] + [float(v) for v in row])
    final = int(np.bincount(preds, minlength=mc.classes).argmax())
    print(f"sequences: {len(seqs)}, per-sequence predictions: {preds}")
    print(f"predicted class: {final}")
    out = _out(cfg)
    h = _emit_config(cfg, out)
    report.write_table(
        out / "logits.csv",
        ["sequence", "step", "argmax"] + [f"logit_{k}" for k in range(mc.classes)],
        rows, conf_hash=h,
    )
    if cfg["figures"]:
        from .recording import frame_stream

        first = frame_stream(rec, tw=mc.tw)[0]
        report.save_rfdm_figure(out / "rfdm.png", frame_features(first))
    return EXIT_OK


def cmd_stats(args) -> int:
    from . import report

    cfg = resolve_config(args)
    out = _out(cfg)
    h = _emit_config(cfg, out)
    net = build_network(_model_config(cfg), seed=cfg["seed"])
    params = count_params(net)
    macs = count_macs(net)

    print("architecture:")
    arch_rows = []
    for row in net.describe():
        kernel = "x".join(map(str, row.kernel)) if row.kernel else "-"
        print(
            f"  {row.name:16s} {str(row.in_shape):>15s} -> {str(row.out_shape):>15s}"
            f"  kernel {kernel:5s} {row.mode}"
        )
        arch_rows.append(
            [row.name, row.kind, str(row.in_shape), str(row.out_shape), kernel, row.mode,
             row.param_count]
        )
    report.write_table(
        out / "architecture.csv",
        ["layer", "kind", "input", "output", "kernel", "mode", "params"],
        arch_rows, conf_hash=h,
    )

    print(f"parameters: cnn {params.cnn}, tcn {params.tcn}, total {params.total}")
    report.write_table(
        out / "params.csv", ["component", "parameters"],
        [["cnn", params.cnn], ["tcn", params.tcn], ["total", params.total]], conf_hash=h,
    )

    print(
        f"macs: cnn {macs.cnn}, tcn {macs.tcn}, dense {macs.dense}, total {macs.total} "
        f"(pool comparisons {macs.pool_comparisons}, excluded)"
    )
    report.write_table(
        out / "macs.csv", ["stage", "macs"],
        [["cnn", macs.cnn], ["tcn", macs.tcn], ["dense", macs.dense],
         ["total", macs.total]], conf_hash=h,
    )

    table = sequence_param_table()
    print("sequence-model parameters (exact counts):")
    seq_rows = []
    for i, f in enumerate(table["filters"]):
        row = [f, table["lstm"][i], table["original_tcn"][i], table["proposed_tcn"][i]]
        seq_rows.append(row)
        print(f"  filters {f:4d}: lstm {row[1]:7d}  original {row[2]:7d}  proposed {row[3]:7d}")
    report.write_table(
        out / "seq_params.csv", ["filters", "lstm", "original_tcn", "proposed_tcn"],
        seq_rows, conf_hash=h,
    )
    if cfg["figures"]:
        report.save_param_curve_figure(out / "seq_params.png", table)
    return EXIT_OK


def cmd_memplan(args) -> int:
    from . import report

    cfg = resolve_config(args)
    out = _out(cfg)
    h = _emit_config(cfg, out)
    net = build_network(_model_config(cfg), seed=cfg["seed"])
    plan = memory_plan(net, activation_bits=8)
    rows = []
    for b in plan.blocks:
        print(
            f"  {b.name:14s} in {str(b.input_shape):>15s} ({b.input_bytes:6d} B)  "
            f"out {str(b.output_shape):>15s} ({b.output_bytes:6d} B)  live {b.live_bytes:6d} B"
        )
        rows.append(
            [b.name, "+".join(b.layers), str(b.input_shape), str(b.output_shape),
             b.input_bytes, b.output_bytes, b.live_bytes]
        )
    print(f"peak: {plan.peak_bytes} bytes at {plan.peak_block.name}")
    report.write_table(
        out / "memplan.csv",
        ["block", "layers", "input_shape", "output_shape", "input_bytes", "output_bytes",
         "live_bytes"],
        rows, conf_hash=h,
    )
    if cfg["figures"]:
        report.save_memplan_figure(out / "memplan.png", plan)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radargest",
        description="Radar hand-gesture pipeline: synthesize, train, quantize, account.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of key-value settings")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--fold", type=int, help="CV5 fold to hold out (0..4)")
        p.add_argument("--held-out-user", dest="held_out_user", type=int,
                       help="user id to hold out (LOOCV)")
        p.add_argument("--filters", type=int, help="TCN filter count")
        p.add_argument("--time-steps", dest="time_steps", type=int,
                       help="sequence length in frames")
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", dest="no_figures", action="store_true",
                       help="skip figure rendering")
        return p

    p = common(sub.add_parser("synth", help="generate a labeled synthetic corpus"))
    p.add_argument("--per-class", dest="per_class", type=int, help="recordings per class")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("preprocess", help="recordings -> feature sequences (.npz)"))
    p.add_argument("--data", help="directory of .trd1 recordings")
    p.add_argument("--tw", type=int, help="sweeps per frame")
    p.set_defaults(func=cmd_preprocess)

    p = common(sub.add_parser("train", help="train a model"))
    p.add_argument("--data", help=".trd1 directory or features .npz")
    p.add_argument("--tw", type=int, help="sweeps per frame")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a trained model"))
    p.add_argument("--model", help="model.trnw path")
    p.add_argument("--data", help=".trd1 directory or features .npz")
    p.add_argument("--aggregation", choices=["mean_softmax", "majority"])
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("quantize", help="post-training quantization"))
    p.add_argument("--model", help="model.trnw path")
    p.add_argument("--data", help="calibration data (.trd1 dir or .npz)")
    p.set_defaults(func=cmd_quantize)

    p = common(sub.add_parser("infer", help="classify a single recording"))
    p.add_argument("--model", help="model.trnw or model.trq1")
    p.add_argument("--aggregation", choices=["mean_softmax", "majority"])
    p.add_argument("recording", help=".trd1 file to classify")
    p.set_defaults(func=cmd_infer)

    p = common(sub.add_parser("stats", help="parameter and MAC accounting"))
    p.add_argument("--tw", type=int)
    p.add_argument("--rp", type=int)
    p.add_argument("--sensors", type=int)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_stats)

    p = common(sub.add_parser("memplan", help="static activation-buffer plan"))
    p.add_argument("--tw", type=int)
    p.add_argument("--rp", type=int)
    p.add_argument("--sensors", type=int)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_memplan)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
