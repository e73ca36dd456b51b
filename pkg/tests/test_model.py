"""Classifier, optimizer, and training-loop contracts."""

import numpy as np
import pytest

from memfuse.errors import ParameterError
from memfuse.gradcheck import central_diff
from memfuse.kernels import Rng
from memfuse.model import (
    ClassifierConfig,
    adam_step,
    build_state,
    cross_entropy,
    cross_entropy_batch,
    encode,
    evaluate,
    fit,
    forward_logits,
    head_forward,
    train_epoch,
)
from memfuse.synthdata import TaskConfig, gen_dataset, stack


def tiny_config(**overrides):
    base = dict(
        variant="memory",
        encoder_hidden=0,
        head_hidden=8,
        classes=3,
        dropout_rate=0.0,
        slots=4,
        lr=1e-3,
        batch=4,
        epochs=2,
        seed=5,
    )
    base.update(overrides)
    return ClassifierConfig(**base)


def tiny_data(n=64, seed=3, s1=4, s2=4, classes=3):
    rng = Rng(seed)
    m1 = rng.normal(n * s1).reshape(n, s1)
    m2 = rng.normal(n * s2).reshape(n, s2)
    y = rng.integers(n, classes)
    return m1, m2, y


class TestEncode:
    def test_identity_when_disabled(self):
        state = build_state(tiny_config(encoder_hidden=0), 4, 4)
        m1, m2, _ = tiny_data()
        e1, e2, p1, p2 = encode(state.params, m1, m2)
        np.testing.assert_array_equal(e1, m1)
        np.testing.assert_array_equal(e2, m2)
        assert p1 is None and p2 is None

    def test_zero_weights_zero_features(self):
        state = build_state(tiny_config(encoder_hidden=6), 4, 4)
        state.params.enc1_w[:] = 0.0
        state.params.enc1_b[:] = 0.0
        m1, m2, _ = tiny_data()
        e1, _, _, _ = encode(state.params, m1, m2)
        np.testing.assert_array_equal(e1, np.zeros((64, 6)))

    def test_matches_matvec_relu_oracle(self):
        state = build_state(tiny_config(encoder_hidden=5), 4, 4)
        m1, m2, _ = tiny_data(n=8)
        e1, e2, _, _ = encode(state.params, m1, m2)
        for b in range(8):
            want = np.maximum(m1[b] @ state.params.enc1_w + state.params.enc1_b, 0.0)
            np.testing.assert_allclose(e1[b], want, atol=1e-14)


class TestHead:
    def test_zero_weights_uniform_distribution(self):
        state = build_state(tiny_config(), 4, 4)
        for name in ("head1_w", "head1_b", "head2_w", "head2_b"):
            getattr(state.params, name)[:] = 0.0
        logits, _, _, _ = head_forward(state.params, np.ones((2, 8)))
        probs = np.exp(logits[0]) / np.exp(logits[0]).sum()
        np.testing.assert_allclose(probs, np.full(3, 1 / 3), atol=1e-15)

    def test_no_dropout_mask_passthrough(self):
        state = build_state(tiny_config(dropout_rate=0.0), 4, 4)
        fused = np.random.default_rng(1).standard_normal((3, 8))
        _, _, hid, hid_dropped = head_forward(state.params, fused)
        np.testing.assert_array_equal(hid, hid_dropped)

    def test_straight_line_oracle(self):
        state = build_state(tiny_config(), 4, 4)
        p = state.params
        fused = np.random.default_rng(2).standard_normal(8)
        logits, _, _, _ = head_forward(p, fused)
        hid = np.maximum(fused @ p.head1_w + p.head1_b, 0.0)
        want = hid @ p.head2_w + p.head2_b
        np.testing.assert_allclose(logits[0], want, atol=1e-13)


class TestCrossEntropy:
    def test_uniform_logits_log4(self):
        loss, _ = cross_entropy(np.zeros(4), 1)
        np.testing.assert_allclose(loss, np.log(4.0), atol=1e-14)

    def test_peaked_logits_near_zero_loss(self):
        logits = np.array([20.0, 0.0, 0.0])
        loss, _ = cross_entropy(logits, 0)
        assert loss < 1e-8

    def test_gradient_against_central_diff(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal(5)
        label = 3
        _, grad = cross_entropy(logits, label)
        fd = central_diff(lambda t: cross_entropy(t, label)[0], logits)
        assert np.max(np.abs(grad - fd)) < 1e-7

    def test_label_out_of_range(self):
        with pytest.raises(ParameterError):
            cross_entropy(np.zeros(3), 3)
        with pytest.raises(ParameterError):
            cross_entropy_batch(np.zeros((2, 3)), np.array([0, 5]))

    def test_batch_matches_single_mean(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        loss_b, grad_b = cross_entropy_batch(logits, labels)
        singles = [cross_entropy(logits[i], labels[i]) for i in range(4)]
        np.testing.assert_allclose(loss_b, np.mean([s[0] for s in singles]), atol=1e-12)
        np.testing.assert_allclose(
            grad_b, np.stack([s[1] for s in singles]) / 4, atol=1e-12
        )


class TestAdam:
    def test_zero_grads_leave_params(self):
        state = build_state(tiny_config(), 4, 4)
        named = state.params.named()
        before = {k: v.copy() for k, v in named.items()}
        # nonzero second moments decay; zero first moments keep the
        # update at exactly zero
        for v in state.adam_v.values():
            v += 0.5
        zero = {k: np.zeros_like(v) for k, v in named.items()}
        adam_step(state, zero)
        for k, v in state.params.named().items():
            np.testing.assert_array_equal(v, before[k])
        for v in state.adam_v.values():
            np.testing.assert_allclose(v, 0.999 * 0.5, atol=1e-15)
        for v in state.adam_m.values():
            np.testing.assert_array_equal(v, 0.0)

    def test_first_step_moves_by_lr(self):
        state = build_state(tiny_config(lr=0.01), 4, 4)
        theta0 = float(state.params.head2_b[0])
        grads = {k: np.zeros_like(v) for k, v in state.params.named().items()}
        grads["head2_b"] = np.zeros_like(state.params.head2_b)
        grads["head2_b"][0] = 3.7  # any positive value: first step is sign-scaled
        adam_step(state, grads)
        moved = float(state.params.head2_b[0]) - theta0
        np.testing.assert_allclose(moved, -0.01, rtol=1e-6)

    def test_quadratic_descent(self):
        state = build_state(tiny_config(lr=0.1), 4, 4)
        state.params.head2_b[0] = 1.0
        history = [1.0]
        for _ in range(10):
            grads = {k: np.zeros_like(v) for k, v in state.params.named().items()}
            grads["head2_b"][0] = 2.0 * state.params.head2_b[0]
            adam_step(state, grads)
            history.append(abs(float(state.params.head2_b[0])))
        assert all(b < a for a, b in zip(history, history[1:]))


class TestTrainEpoch:
    def test_lr_zero_keeps_params(self):
        state = build_state(tiny_config(lr=0.0), 4, 4)
        before = {k: v.copy() for k, v in state.params.named().items()}
        state, loss = train_epoch(state, tiny_data())
        assert np.isfinite(loss)
        for k, v in state.params.named().items():
            np.testing.assert_array_equal(v, before[k])

    def test_bit_deterministic(self):
        cfg = tiny_config(dropout_rate=0.3, epochs=3)
        data = tiny_data()
        losses = []
        finals = []
        for _ in range(2):
            state = build_state(cfg, 4, 4)
            curves = fit(state, data)
            losses.append([c["train_loss"] for c in curves])
            finals.append({k: v.copy() for k, v in state.params.named().items()})
        assert losses[0] == losses[1]
        for k in finals[0]:
            np.testing.assert_array_equal(finals[0][k], finals[1][k])

    def test_loss_improves_on_separable_task(self):
        task = TaskConfig(
            s1=6, s2=6, classes=3, regimes=3, regime_period=8,
            occlusion_prob=0.0, noise_sigma=0.1, length=600, seed=2,
        )
        data = stack(gen_dataset(task))
        cfg = tiny_config(epochs=1, batch=8, lr=3e-3)
        state = build_state(cfg, 6, 6)
        _, first = train_epoch(state, data)
        for _ in range(4):
            _, last = train_epoch(state, data)
        assert last < first

    def test_dropped_tail_rule(self):
        cfg = tiny_config(batch=10)
        state = build_state(cfg, 4, 4)
        data = tiny_data(n=37)
        state, _ = train_epoch(state, data)
        assert state.step == 3  # floor(37 / 10) optimizer updates

    def test_empty_and_undersized(self):
        state = build_state(tiny_config(batch=100), 4, 4)
        with pytest.raises(ParameterError):
            train_epoch(state, tiny_data(n=50))


class TestEvaluate:
    def _state_with_onehot_readout(self):
        # naive fusion, identity encoder: craft head weights so the
        # logits are exactly the mode-2 features
        cfg = tiny_config(variant="naive", head_hidden=3, classes=3)
        state = build_state(cfg, 4, 3)
        p = state.params
        p.head1_w[:] = 0.0
        p.head1_w[4:, :] = np.eye(3)  # pick out m2
        p.head1_b[:] = 0.0
        p.head2_w[:] = np.eye(3)
        p.head2_b[:] = 0.0
        return state

    def test_perfect_predictor(self):
        state = self._state_with_onehot_readout()
        n = 30
        rng = np.random.default_rng(8)
        y = np.arange(n) % 3
        m2 = np.eye(3)[y] * 5.0
        m1 = rng.standard_normal((n, 4))
        rep = evaluate(state, (m1, m2, y))
        assert rep.wa == 1.0 and rep.ua == 1.0

    def test_constant_predictor_on_balanced_set(self):
        state = self._state_with_onehot_readout()
        state.params.head1_w[:] = 0.0
        state.params.head2_b[:] = np.array([1.0, 0.0, 0.0])
        n = 30
        y = np.arange(n) % 3
        m1 = np.zeros((n, 4))
        m2 = np.zeros((n, 3))
        rep = evaluate(state, (m1, m2, y))
        np.testing.assert_allclose(rep.wa, 1 / 3)
        np.testing.assert_allclose(rep.ua, 1 / 3)

    def test_random_model_matches_hand_tally(self):
        cfg = tiny_config(variant="naive")
        state = build_state(cfg, 4, 4)
        m1, m2, y = tiny_data(n=40)
        rep = evaluate(state, (m1, m2, y))
        logits, _ = forward_logits(cfg, state.params, [], m1, m2)
        preds = np.argmax(logits, axis=1)
        tally = np.zeros((3, 3), dtype=int)
        for t, p in zip(y, preds):
            tally[t, p] += 1
        np.testing.assert_array_equal(rep.confusion, tally)

    def test_eval_does_not_disturb_training_memory(self):
        cfg = tiny_config(variant="memory")
        state = build_state(cfg, 4, 4)
        before = state.memories[0].matrix.copy()
        evaluate(state, tiny_data(n=20), freeze_writes=False)
        np.testing.assert_array_equal(state.memories[0].matrix, before)

    def test_freeze_writes_flag(self):
        cfg = tiny_config(variant="memory")
        state = build_state(cfg, 4, 4)
        r1 = evaluate(state, tiny_data(n=24), freeze_writes=True)
        r2 = evaluate(state, tiny_data(n=24), freeze_writes=True)
        assert r1.wa == r2.wa
        np.testing.assert_array_equal(r1.confusion, r2.confusion)


class TestVariantsTrain:
    @pytest.mark.parametrize(
        "variant,extra",
        [
            ("naive", {}),
            ("memory", {}),
            ("memory-cross", {}),
            ("memory-single", {}),
            ("memory-resampled", {"out_dim": 6}),
        ],
    )
    def test_short_training_runs(self, variant, extra):
        cfg = tiny_config(variant=variant, epochs=1, **extra)
        state = build_state(cfg, 4, 4)
        state, loss = train_epoch(state, tiny_data(n=32))
        assert np.isfinite(loss)
        rep = evaluate(state, tiny_data(n=16, seed=9))
        assert 0.0 <= rep.wa <= 1.0

    def test_memory_persists_across_epochs_by_default(self):
        cfg = tiny_config(variant="memory", epochs=2)
        state = build_state(cfg, 4, 4)
        data = tiny_data()
        train_epoch(state, data)
        after_first = state.memories[0].matrix.copy()
        train_epoch(state, data)
        assert not np.array_equal(state.memories[0].matrix, after_first)

    def test_reset_memory_each_epoch(self):
        data = tiny_data()
        cfg = tiny_config(variant="memory", epochs=2, lr=0.0, reset_memory_each_epoch=True)
        state = build_state(cfg, 4, 4)
        fit(state, data)
        cfg2 = tiny_config(variant="memory", epochs=2, lr=0.0, reset_memory_each_epoch=False)
        state2 = build_state(cfg2, 4, 4)
        fit(state2, data)
        assert not np.array_equal(state.memories[0].matrix, state2.memories[0].matrix)


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ParameterError):
            tiny_config(classes=1)
        with pytest.raises(ParameterError):
            tiny_config(dropout_rate=1.0)
        with pytest.raises(ParameterError):
            tiny_config(lr=-0.1)
        with pytest.raises(ParameterError):
            tiny_config(variant="memory-resampled")  # missing out_dim
        with pytest.raises(ParameterError):
            tiny_config(variant="nonsense")

    def test_spelling_normalized(self):
        cfg = tiny_config(variant="Memory-Cross")
        assert cfg.variant == "memory_cross"
