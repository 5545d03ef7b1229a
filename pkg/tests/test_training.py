import numpy as np
import pytest

from radargest import (
    ModelConfig,
    TrainConfig,
    adam_step,
    build_network,
    cross_entropy_loss,
    evaluate,
    split_cv5,
    split_loocv,
    train,
)
from radargest.errors import ValidationError
from radargest.layers import Param
from radargest.training import (
    GestureDataset,
    aggregate_sequence,
    init_adam_state,
)


def scalar_param(value):
    return Param("w", np.array([value]))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = scalar_param(1.5)
        state = init_adam_state([p])
        state = adam_step([p], [np.zeros(1)], state, TrainConfig())
        assert p.value[0] == 1.5
        assert state.step == 1

    def test_first_step_magnitude_is_learning_rate(self):
        for g in (0.3, -7.0, 1e-4):
            p = scalar_param(0.0)
            state = init_adam_state([p])
            adam_step([p], [np.array([g])], state, TrainConfig(learning_rate=1e-3))
            # bias correction gives m_hat = g, v_hat = g^2
            assert abs(p.value[0]) == pytest.approx(1e-3, rel=1e-3)
            assert np.sign(p.value[0]) == -np.sign(g)

    def test_converges_on_quadratic(self):
        # Scalar oracle: minimize f(w) = w^2 from w = 1 with lr = 0.1.
        p = scalar_param(1.0)
        state = init_adam_state([p])
        cfg = TrainConfig(learning_rate=0.1)
        for _ in range(100):
            adam_step([p], [2.0 * p.value], state, cfg)
        assert abs(p.value[0]) < 0.05

    def test_degenerate_betas_are_normalized_gradient_descent(self):
        p = scalar_param(2.0)
        state = init_adam_state([p])
        cfg = TrainConfig(learning_rate=0.01, beta1=0.0, beta2=0.0)
        g = np.array([0.5])
        adam_step([p], [g], state, cfg)
        assert p.value[0] == pytest.approx(2.0 - 0.01 * 0.5 / (0.5 + 1e-8))

    def test_shape_mismatch(self):
        p = scalar_param(0.0)
        state = init_adam_state([p])
        with pytest.raises(ValidationError):
            adam_step([p], [np.zeros(3)], state, TrainConfig())


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = cross_entropy_loss(np.zeros((5, 11)), label=3)
        assert loss == pytest.approx(np.log(11))

    def test_confident_correct_logits(self):
        logits = np.zeros((5, 4))
        logits[:, 2] = 1e6
        loss, _ = cross_entropy_loss(logits, label=2)
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(0)
        _, grad = cross_entropy_loss(rng.standard_normal((5, 7)), label=4)
        assert np.allclose(grad.sum(axis=1), 0.0)

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((3, 4))
        loss, grad = cross_entropy_loss(logits, label=1)
        eps = 1e-6
        for t in range(3):
            for k in range(4):
                bumped = logits.copy()
                bumped[t, k] += eps
                lp, _ = cross_entropy_loss(bumped, label=1)
                assert (lp - loss) / eps == pytest.approx(grad[t, k], rel=1e-4, abs=1e-8)

    def test_label_out_of_range(self):
        with pytest.raises(ValidationError):
            cross_entropy_loss(np.zeros((5, 3)), label=3)


def toy_dataset(n=100, classes=5, seed=0, users=None):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(tw=4, rp=8, sensors=1, classes=classes, tcn_filters=4, time_steps=2)
    labels = np.arange(n) % classes
    return GestureDataset(
        frames=rng.random((n, 2, 4, 8, 1)),
        labels=labels,
        users=users if users is not None else np.arange(n) % 7,
        sessions=np.zeros(n, dtype=int),
        class_count=classes,
        config=cfg,
    )


class TestSplits:
    def test_cv5_sizes_and_coverage(self):
        ds = toy_dataset(100)
        seen = []
        for fold in range(5):
            tr, te = split_cv5(ds, fold, seed=3)
            assert len(te) == 20
            assert len(tr) == 80
            seen.extend(sorted(te.frames[:, 0, 0, 0, 0].tolist()))
        # union of test folds is the full set, pairwise disjoint
        assert sorted(seen) == sorted(ds.frames[:, 0, 0, 0, 0].tolist())

    def test_cv5_is_stratified(self):
        ds = toy_dataset(100, classes=5)
        _, te = split_cv5(ds, 0, seed=1)
        counts = np.bincount(te.labels, minlength=5)
        assert np.all(counts == 4)

    def test_cv5_deterministic(self):
        ds = toy_dataset(50)
        a = split_cv5(ds, 2, seed=9)[1]
        b = split_cv5(ds, 2, seed=9)[1]
        assert np.array_equal(a.frames, b.frames)

    def test_cv5_fold_range(self):
        with pytest.raises(ValidationError):
            split_cv5(toy_dataset(10), 5)

    def test_loocv_no_user_overlap(self):
        ds = toy_dataset(70)
        tr, te = split_loocv(ds, held_out_user=3)
        assert set(te.users.tolist()) == {3}
        assert 3 not in set(tr.users.tolist())
        assert len(tr) + len(te) == len(ds)

    def test_loocv_unknown_user(self):
        with pytest.raises(ValidationError, match="not present"):
            split_loocv(toy_dataset(10), held_out_user=99)

    def test_loocv_single_user_dataset(self):
        ds = toy_dataset(10, users=np.zeros(10, dtype=int))
        with pytest.raises(ValidationError, match="only user"):
            split_loocv(ds, held_out_user=0)


class TestTrain:
    def test_zero_learning_rate_keeps_params(self):
        ds = toy_dataset(20)
        net = build_network(ds.config, seed=0)
        before = [p.value.copy() for p in net.parameters()]
        train(net, ds, TrainConfig(batch_size=8, epochs=3, learning_rate=0.0, seed=0))
        for a, p in zip(before, net.parameters()):
            assert np.array_equal(a, p.value)

    def test_training_is_bitwise_reproducible(self):
        ds = toy_dataset(30)
        cfg = TrainConfig(batch_size=8, epochs=2, seed=4)
        net_a = build_network(ds.config, seed=1)
        net_b = build_network(ds.config, seed=1)
        hist_a = train(net_a, ds, cfg)
        hist_b = train(net_b, ds, cfg)
        for pa, pb in zip(net_a.parameters(), net_b.parameters()):
            assert np.array_equal(pa.value, pb.value)
        assert [r.loss for r in hist_a] == [r.loss for r in hist_b]

    def test_empty_dataset(self):
        ds = toy_dataset(10).subset([])
        net = build_network(ds.config)
        with pytest.raises(ValidationError):
            train(net, ds, TrainConfig())

    def test_learns_separable_synthetic_classes(self, small_dataset):
        tr, te = split_cv5(small_dataset, fold=0, seed=0)
        net = build_network(small_dataset.config, seed=0)
        cfg = TrainConfig(batch_size=32, epochs=20, learning_rate=1e-3, seed=0)
        history = train(net, tr, cfg, stop_at_accuracy=0.98)
        assert history[-1].loss < history[0].loss
        res = evaluate(net, te)
        assert res.per_seq_acc >= 0.9


class TestEvaluate:
    def test_constant_logits_score_chance_level(self):
        ds = toy_dataset(50, classes=5)
        net = build_network(ds.config, seed=0)
        for p in net.parameters():
            p.value[...] = 0.0
        res = evaluate(net, ds)
        assert res.per_frame_acc == pytest.approx(1 / 5)
        assert res.per_seq_acc == pytest.approx(1 / 5)

    def test_confusion_rows_sum_to_class_counts(self):
        ds = toy_dataset(40, classes=4)
        net = build_network(ds.config, seed=2)
        res = evaluate(net, ds)
        counts = np.bincount(ds.labels, minlength=4)
        assert np.array_equal(res.confusion.sum(axis=1), counts)

    def test_aggregation_rule_hand_fixture(self):
        # Step 0 says class 1 confidently; steps disagree weakly: the mean
        # softmax must follow the confident step.
        logits = np.array([[0.0, 8.0, 0.0], [1.2, 1.0, 0.9], [1.1, 1.0, 1.05]])
        assert aggregate_sequence(logits, rule="mean_softmax") == 1
        # Majority vote ignores confidence: argmax votes are (1, 0, 0).
        assert aggregate_sequence(logits, rule="majority") == 0
        with pytest.raises(ValidationError):
            aggregate_sequence(logits, rule="bogus")

    def test_hand_built_two_sequence_metrics(self):
        cfg = ModelConfig(tw=4, rp=8, sensors=1, classes=2, tcn_filters=4, time_steps=2)
        ds = GestureDataset(
            frames=np.zeros((2, 2, 4, 8, 1)),
            labels=np.array([0, 1]),
            users=np.zeros(2, dtype=int),
            sessions=np.zeros(2, dtype=int),
            class_count=2,
            config=cfg,
        )

        class Stub:
            config = cfg

            def forward_sequence(self, frames):
                # sequence 0 -> steps predict (0, 1); sequence 1 -> (1, 1)
                out = np.zeros((len(frames), 2, 2))
                out[0, 0, 0] = 3.0
                out[0, 1, 1] = 1.0
                out[1, :, 1] = 2.0
                return out

        res = evaluate(Stub(), ds)
        # frames correct: seq0 step0, seq1 both -> 3 of 4
        assert res.per_frame_acc == pytest.approx(0.75)
        # seq0 mean softmax leans to class 0 (3.0 beats 1.0); seq1 class 1
        assert res.per_seq_acc == pytest.approx(1.0)
        assert res.confusion.tolist() == [[1, 0], [0, 1]]
