"""Probability transforms and random-stream determinism."""

import numpy as np
import pytest

from fednoise.numerics import (
    RngStream,
    as_stream,
    clamp_probs,
    entropy,
    sample_mix_weight,
    sharpen,
    softmax,
    softmax_vjp,
    tempered_softmax,
)


class TestRngStream:
    def test_same_path_same_draws(self):
        a = RngStream(7).child("shuffle", 3).generator().normal(size=8)
        b = RngStream(7).child("shuffle", 3).generator().normal(size=8)
        np.testing.assert_array_equal(a, b)

    def test_different_paths_differ(self):
        a = RngStream(7).child("shuffle", 3).generator().normal(size=8)
        b = RngStream(7).child("shuffle", 4).generator().normal(size=8)
        assert not np.array_equal(a, b)

    def test_string_and_int_steps_mix(self):
        s = RngStream(0).child("client", 12, "epoch", 3)
        assert len(s.path) == 4
        # string tags hash to stable integers, so the path is reproducible
        t = RngStream(0).child("client", 12, "epoch", 3)
        assert s == t

    def test_generator_restarts_at_stream_origin(self):
        s = RngStream(11, (5,))
        first = s.generator().integers(0, 1000, size=4)
        second = s.generator().integers(0, 1000, size=4)
        np.testing.assert_array_equal(first, second)

    def test_child_does_not_mutate_parent(self):
        s = RngStream(3)
        s.child(1, 2)
        assert s.path == ()

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            RngStream(-1)

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            RngStream(0).child(-2)

    def test_as_stream_coercion(self):
        assert as_stream(5) == RngStream(5)
        s = RngStream(5, (1,))
        assert as_stream(s) is s
        with pytest.raises(TypeError):
            as_stream("5")

    def test_sibling_streams_statistically_independent(self):
        # correlation across many sibling draws should be tiny
        root = RngStream(123)
        a = np.concatenate([root.child(i, 0).generator().normal(size=4) for i in range(200)])
        b = np.concatenate([root.child(i, 1).generator().normal(size=4) for i in range(200)])
        r = np.corrcoef(a, b)[0, 1]
        assert abs(r) < 0.1


class TestSoftmax:
    def test_rows_sum_to_one(self):
        gen = np.random.default_rng(0)
        for _ in range(25):
            o = gen.normal(scale=5.0, size=(6, 9))
            p = softmax(o)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(p >= 0)

    def test_shift_invariance(self):
        gen = np.random.default_rng(1)
        o = gen.normal(size=(4, 5))
        np.testing.assert_allclose(softmax(o), softmax(o + 100.0), atol=1e-12)

    def test_extreme_logits_stable(self):
        p = softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p[0], 1.0, atol=1e-12)

    def test_single_row_shape_preserved(self):
        assert softmax(np.zeros(4)).shape == (4,)
        assert softmax(np.zeros((2, 4))).shape == (2, 4)

    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(softmax(np.full(8, 3.0)), np.full(8, 0.125), atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0, np.nan]))
        with pytest.raises(ValueError):
            softmax(np.array([np.inf, 0.0]))


class TestTemperedSoftmax:
    def test_matches_scaled_logits(self):
        gen = np.random.default_rng(2)
        o = gen.normal(size=(3, 6))
        np.testing.assert_allclose(tempered_softmax(o, 0.5), softmax(o / 0.5), atol=1e-12)

    def test_temp_one_is_softmax(self):
        o = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(tempered_softmax(o, 1.0), softmax(o), atol=1e-15)

    def test_low_temp_peaks(self):
        o = np.array([1.0, 0.0, -1.0])
        hot = tempered_softmax(o, 0.25)
        assert hot[0] > softmax(o)[0]

    def test_bad_temperature(self):
        for t in (0.0, -1.0, np.nan):
            with pytest.raises(ValueError):
                tempered_softmax(np.zeros(3), t)


class TestSharpen:
    def test_pinned_value(self):
        # T = 1/2 squares then renormalizes: 0.36/0.52 and 0.16/0.52
        out = sharpen(np.array([0.6, 0.4]), 0.5)
        np.testing.assert_allclose(out, [0.6923076923, 0.3076923077], atol=1e-6)

    def test_identity_at_temp_one(self):
        gen = np.random.default_rng(3)
        p = softmax(gen.normal(size=(5, 7)))
        np.testing.assert_array_equal(sharpen(p, 1.0), p)

    def test_one_hot_fixed_point(self):
        e = np.zeros(6)
        e[2] = 1.0
        for t in (0.25, 0.5, 2.0):
            np.testing.assert_allclose(sharpen(e, t), e, atol=1e-12)

    def test_uniform_fixed_point(self):
        u = np.full(5, 0.2)
        np.testing.assert_allclose(sharpen(u, 0.5), u, atol=1e-12)

    def test_preserves_argmax_and_raises_it(self):
        gen = np.random.default_rng(4)
        for _ in range(30):
            p = softmax(gen.normal(size=9))
            s = sharpen(p, 0.5)
            assert s.argmax() == p.argmax()
            assert s.max() >= p.max() - 1e-12
            np.testing.assert_allclose(s.sum(), 1.0, atol=1e-12)

    def test_matches_power_formula(self):
        gen = np.random.default_rng(5)
        p = softmax(gen.normal(size=(4, 6)))
        u = p**2.0
        np.testing.assert_allclose(sharpen(p, 0.5), u / u.sum(axis=1, keepdims=True), atol=1e-12)

    def test_negative_probs_rejected(self):
        with pytest.raises(ValueError):
            sharpen(np.array([0.5, -0.1, 0.6]), 0.5)

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            sharpen(np.full(3, 1 / 3), 0.0)


class TestMixWeight:
    def test_uniform_range_and_determinism(self):
        s = RngStream(9).child("mixweight", 0, 0)
        lam1 = sample_mix_weight(s)
        lam2 = sample_mix_weight(s)
        assert lam1 == lam2
        assert 0.0 <= lam1 <= 1.0

    def test_beta_1_1_moments(self):
        gen = np.random.default_rng(6)
        draws = np.array([sample_mix_weight(gen) for _ in range(4000)])
        # Beta(1, 1) is Uniform(0, 1): mean 1/2, var 1/12
        assert abs(draws.mean() - 0.5) < 0.02
        assert abs(draws.var() - 1.0 / 12.0) < 0.01


class TestClampProbs:
    def test_floors_without_renormalizing(self):
        p = np.array([0.0, 0.3, 0.7])
        out = clamp_probs(p, 1e-6)
        np.testing.assert_allclose(out, [1e-6, 0.3, 0.7], atol=1e-15)
        assert out.sum() > 1.0

    def test_caps_at_one(self):
        out = clamp_probs(np.array([1.5, 0.2]), 1e-3)
        assert out[0] == 1.0

    def test_floor_range_validated(self):
        with pytest.raises(ValueError):
            clamp_probs(np.full(4, 0.25), 0.0)
        with pytest.raises(ValueError):
            clamp_probs(np.full(4, 0.25), 0.5)


class TestEntropy:
    def test_uniform_is_log_m(self):
        for m in (2, 5, 10):
            np.testing.assert_allclose(entropy(np.full(m, 1.0 / m)), np.log(m), atol=1e-12)

    def test_one_hot_is_zero(self):
        e = np.zeros(7)
        e[3] = 1.0
        assert entropy(e) == 0.0

    def test_batch_rows(self):
        p = np.stack([np.full(4, 0.25), np.array([1.0, 0.0, 0.0, 0.0])])
        h = entropy(p)
        np.testing.assert_allclose(h, [np.log(4), 0.0], atol=1e-12)

    def test_scalar_return_for_single_row(self):
        assert isinstance(entropy(np.full(3, 1 / 3)), float)


class TestSoftmaxVjp:
    def test_matches_finite_differences(self):
        gen = np.random.default_rng(7)
        eps = 1e-6
        for _ in range(20):
            o = gen.normal(size=6)
            v = gen.normal(size=6)
            for temp in (1.0, 0.5, 3.0):
                q = tempered_softmax(o, temp)
                g = softmax_vjp(q, v, temp)
                fd = np.empty(6)
                for j in range(6):
                    op = o.copy()
                    om = o.copy()
                    op[j] += eps
                    om[j] -= eps
                    fd[j] = (
                        (tempered_softmax(op, temp) * v).sum()
                        - (tempered_softmax(om, temp) * v).sum()
                    ) / (2 * eps)
                np.testing.assert_allclose(g, fd, atol=1e-6)

    def test_gradient_rows_sum_to_zero(self):
        # logit gradients of any softmax functional live on the simplex tangent
        gen = np.random.default_rng(8)
        q = softmax(gen.normal(size=(5, 8)))
        g = softmax_vjp(q, gen.normal(size=(5, 8)))
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)
