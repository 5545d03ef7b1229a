"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.  The desk-scale training criterion dominates the
runtime (a few minutes on a laptop CPU); everything else finishes in
seconds.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from radargest import (
    ModelConfig,
    SynthTargetSpec,
    TrainConfig,
    build_network,
    build_synthetic_corpus,
    calibrate_and_quantize,
    compute_rfdm,
    count_macs,
    count_params,
    evaluate,
    frame_stream,
    lstm_param_formula,
    memory_plan,
    model_size_bytes,
    predict_doppler_bin,
    quantized_forward_sequence,
    split_cv5,
    synth_recording,
    tcn_param_formula,
    train,
)
from radargest.gradcheck import grad_check
from radargest.pipeline import dataset_from_recordings
from radargest.training import aggregate_sequence

from test_features import dft_magnitude_oracle
from test_model import EXPECTED_CHAIN_11G


@contextmanager
def criterion(number: int, label: str):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number:2d} FAIL  {label}")
        raise
    print(f"ACCEPTANCE {number:2d} PASS  {label}")


# Published sequence-model parameter table, in thousands (one decimal).
PUBLISHED_K = {
    "lstm": [25.4, 99.8, 223.5, 396.3],
    "original_tcn": [12.4, 49.6, 111.2, 197.4],
    "proposed_tcn": [6.2, 24.8, 55.6, 98.7],
}
FILTER_WIDTHS = [32, 64, 96, 128]


def test_criterion_1_parameter_formulas():
    with criterion(1, "sequence-model parameter formulas reproduce the reference table"):
        for i, f in enumerate(FILTER_WIDTHS):
            counts = {
                "lstm": lstm_param_formula(f),
                "original_tcn": tcn_param_formula("original", f),
                "proposed_tcn": tcn_param_formula("proposed", f),
            }
            for key, count in counts.items():
                cell = PUBLISHED_K[key][i]
                # Agreement at the table's display precision (0.1k quantum).
                assert abs(count / 1000.0 - cell) <= 0.1, (key, f, count, cell)
            # The proposed row rounds exactly; the original row is its double.
            assert round(counts["proposed_tcn"] / 1000.0, 1) == PUBLISHED_K["proposed_tcn"][i]
            assert counts["original_tcn"] == 2 * counts["proposed_tcn"]


def test_criterion_2_model_accounting():
    with criterion(2, "parameter totals within 2% and model size in [88, 94] kB"):
        net = build_network(ModelConfig(), seed=0)
        pc = count_params(net)
        assert abs(pc.cnn - 22368) / 22368 <= 0.02
        assert abs(pc.tcn - 22917) / 22917 <= 0.02
        assert abs(pc.total - 45285) / 45285 <= 0.02
        qnet = calibrate_and_quantize(
            net, np.random.default_rng(0).random((1, 5, 32, 492, 2))
        )
        size = model_size_bytes(qnet)
        assert 88_000 <= size <= 94_000, size


def test_criterion_3_memory_plan():
    with criterion(3, "activation peak 47168 bytes in the first fused block"):
        plan = memory_plan(build_network(ModelConfig(), seed=0), activation_bits=8)
        assert plan.peak_bytes == 47168
        assert plan.peak_block_index == 0
        assert plan.fusion_map["block1"] == ("conv1", "pool1")


def test_criterion_4_shape_chain():
    with criterion(4, "layer shape chain matches the reference tables, zero mismatches"):
        rows = build_network(ModelConfig(), seed=0).describe()
        got = [(r.kind, r.in_shape, r.out_shape, r.kernel) for r in rows]
        diff = [pair for pair in zip(got, EXPECTED_CHAIN_11G) if pair[0] != pair[1]]
        assert len(got) == len(EXPECTED_CHAIN_11G)
        assert diff == []


def test_criterion_5_dft_against_brute_force():
    with criterion(5, "transform matches the O(T^2) oracle on 1000 frames; energy conserved"):
        from radargest import RawFrame

        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            tw = int(rng.integers(2, 10))
            rp = int(rng.integers(1, 6))
            c = int(rng.integers(1, 3))
            data = rng.standard_normal((tw, rp, c)) + 1j * rng.standard_normal((tw, rp, c))
            got = compute_rfdm(RawFrame(data=data)).data
            want = dft_magnitude_oracle(data)
            rel = np.abs(got - want).max() / max(np.abs(want).max(), 1e-30)
            worst = max(worst, rel)
        assert worst < 1e-10, worst

        for _ in range(50):
            data = rng.standard_normal((32, 8, 2)) + 1j * rng.standard_normal((32, 8, 2))
            spec = compute_rfdm(RawFrame(data=data)).data
            lhs = (spec**2).sum(axis=0)
            rhs = 32 * (np.abs(data) ** 2).sum(axis=0)
            assert np.abs(lhs - rhs).max() / rhs.max() < 1e-9


def test_criterion_6_physics_oracle():
    with criterion(6, "Doppler argmax equals the closed-form bin for sub-Nyquist velocities"):
        from radargest.errors import ValidationError

        checked = 0
        for v in (0.05, -0.05, 0.1, -0.1):
            duration = 1.0
            spec = SynthTargetSpec(
                initial_range_m=0.18 - v * duration / 2.0, velocity_mps=v, noise_std=0.0
            )
            rec = synth_recording(
                spec, 160, 128, 160.0, seed=0, range_start_m=0.02, range_step_m=2.5e-3
            )
            assert not rec.clipped
            want = predict_doppler_bin(v, 160.0, 32)
            for frame in frame_stream(rec, tw=32, stride=32):
                rf = compute_rfdm(frame).data[:, :, 0]
                r_bin = int(np.argmax(rf.sum(axis=0)))
                assert int(np.argmax(rf[:, r_bin])) == want, (v, frame.window_index)
                checked += 1
        assert checked == 20  # 4 sub-Nyquist velocities x 5 frames, 100% agreement
        # +-0.2 m/s sits just past the Nyquist bound at 160 Hz (f_d ~ 80.06 Hz
        # vs 80 Hz): the oracle must refuse rather than silently alias.
        for v in (0.2, -0.2):
            with pytest.raises(ValidationError, match="Nyquist"):
                predict_doppler_bin(v, 160.0, 32)


def test_criterion_7_gradient_check():
    with criterion(7, "finite-difference gradient check < 1e-5 across 10 seeds"):
        start = time.time()
        cfg = ModelConfig(tw=8, rp=32, sensors=1, classes=5, tcn_filters=8, time_steps=5)
        worst = 0.0
        for seed in range(10):
            net = build_network(cfg, seed=seed)
            rng = np.random.default_rng(100 + seed)
            frames = rng.random((5, 8, 32, 1))
            report = grad_check(
                net, frames, label=seed % 5, eps=1e-5, tolerance=1e-5,
                max_entries_per_param=20, seed=seed,
            )
            worst = max(worst, report.max_rel_error)
            assert report.passed, (seed, report.per_param)
        elapsed = time.time() - start
        assert elapsed < 60.0, elapsed
        print(f"  worst relative error {worst:.2e} in {elapsed:.1f}s")


def test_criterion_8_causality_and_receptive_field():
    with criterion(8, "future frames leave past logits bit-identical; step t-4 is visible"):
        cfg = ModelConfig(tw=8, rp=32, sensors=1, classes=5, tcn_filters=8, time_steps=5)
        net = build_network(cfg, seed=1)
        rng = np.random.default_rng(2)
        x = rng.random((5, 8, 32, 1))
        base = net.forward_sequence(x)
        for t in range(1, 5):
            bumped = x.copy()
            bumped[t:] += rng.random((5 - t, 8, 32, 1))
            out = net.forward_sequence(bumped)
            assert np.array_equal(base[:t], out[:t])
        # dilations (1, 2, 4), k=2: step 4 depends on step 0
        bumped = x.copy()
        bumped[0] += 1.0
        assert not np.allclose(base[4], net.forward_sequence(bumped)[4])


@pytest.fixture(scope="module")
def desk_scale_run():
    """Criterion 9 artifact: corpus, trained reduced-config net, timings."""
    t0 = time.time()
    recs = build_synthetic_corpus(per_class=200, seed=123)
    cfg = ModelConfig(tw=32, rp=64, sensors=1, classes=5, tcn_filters=16, time_steps=5)
    ds, dropped = dataset_from_recordings(recs, cfg)
    assert dropped == 0 and len(ds) == 1000
    train_ds, test_ds = split_cv5(ds, fold=0, seed=0)
    net = build_network(cfg, seed=0)
    tc = TrainConfig(batch_size=64, epochs=20, learning_rate=1e-3, seed=0)
    history = train(net, train_ds, tc, stop_at_accuracy=0.98)
    elapsed = time.time() - t0
    return dict(net=net, train_ds=train_ds, test_ds=test_ds, history=history,
                elapsed=elapsed)


def test_criterion_9_desk_scale_training(desk_scale_run):
    with criterion(9, "synthetic 5-class corpus: >= 90% per-sequence accuracy in < 10 min"):
        run = desk_scale_run
        assert len(run["history"]) <= 20
        assert run["elapsed"] < 600.0, run["elapsed"]
        res = evaluate(run["net"], run["test_ds"])
        print(
            f"  {len(run['history'])} epochs, {run['elapsed']:.0f}s, "
            f"held-out per-seq {res.per_seq_acc:.3f}, per-frame {res.per_frame_acc:.3f}"
        )
        assert res.per_seq_acc >= 0.90, res.per_seq_acc


def test_criterion_10_quantization_fidelity(desk_scale_run):
    with criterion(10, "quantized argmax agrees with float >= 90%; runs bit-identical"):
        net = desk_scale_run["net"]
        test_ds = desk_scale_run["test_ds"]
        calib = desk_scale_run["train_ds"].frames[:50]
        qnet = calibrate_and_quantize(net, calib)
        agree = 0
        for frames in test_ds.frames:
            fl = net.forward_sequence(frames)
            ql = quantized_forward_sequence(qnet, frames)
            agree += int(aggregate_sequence(fl) == aggregate_sequence(np.asarray(ql)))
        ratio = agree / len(test_ds)
        print(f"  sequence argmax agreement {ratio:.3f} over {len(test_ds)} sequences")
        assert ratio >= 0.90, ratio

        sample = test_ds.frames[0]
        a = quantized_forward_sequence(qnet, sample)
        b = quantized_forward_sequence(qnet, sample)
        assert np.array_equal(a, b)


def test_criterion_11_mac_accounting():
    with criterion(11, "MAC totals in the sanity band; dense stage exactly 22240"):
        macs = count_macs(build_network(ModelConfig(), seed=0))
        assert macs.dense == 22240
        assert 15e6 <= macs.total <= 21e6, macs.total
        assert 15e6 <= macs.cnn <= 21e6, macs.cnn
        # Reported, not asserted equal: the reference breakdown lists the CNN
        # at 20470e3 and the sequence stage at 256e3 under a different
        # counting convention.
        print(
            f"  derived: cnn {macs.cnn}, tcn {macs.tcn}, dense {macs.dense}, "
            f"total {macs.total} (reference rows: cnn 20470e3, tcn 256e3, dense 22e3)"
        )
