"""Flat-vector MLP: init, forward, exact gradients, checkpoints."""

import numpy as np
import pytest

from fednoise.model import (
    Gradients,
    ModelParams,
    backward,
    forward,
    init_params,
    load_params,
    param_count,
    save_params,
    sgd_step,
)
from fednoise.losses import ce_loss
from fednoise.numerics import RngStream


def tiny_net(seed=0, sizes=(5, 7, 4, 3)):
    return init_params(list(sizes), seed)


class TestParamCount:
    def test_reference_architecture(self):
        # 784*128+128 + 128*64+64 + 64*10+10
        assert param_count([784, 128, 64, 10]) == 109386

    def test_matches_init_size(self):
        sizes = [12, 8, 5]
        assert init_params(sizes, 0).flat.size == param_count(sizes)

    def test_too_few_layers_rejected(self):
        with pytest.raises(ValueError):
            param_count([10, 3])

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ValueError):
            param_count([10, 0, 3])


class TestInit:
    def test_deterministic_per_seed(self):
        a = init_params([6, 4, 3], 42)
        b = init_params([6, 4, 3], 42)
        np.testing.assert_array_equal(a.flat, b.flat)
        c = init_params([6, 4, 3], 43)
        assert not np.array_equal(a.flat, c.flat)

    def test_stream_seed_accepted(self):
        a = init_params([6, 4, 3], RngStream(42))
        b = init_params([6, 4, 3], 42)
        np.testing.assert_array_equal(a.flat, b.flat)

    def test_weights_within_glorot_bound_biases_zero(self):
        sizes = [30, 20, 10]
        p = init_params(sizes, 7)
        offset = 0
        for in_dim, out_dim in p.shapes:
            limit = np.sqrt(6.0 / (in_dim + out_dim))
            w = p.flat[offset : offset + in_dim * out_dim]
            assert np.all(np.abs(w) <= limit)
            # uniform draws should actually use the range, not collapse
            assert np.abs(w).max() > 0.5 * limit
            offset += in_dim * out_dim
            b = p.flat[offset : offset + out_dim]
            np.testing.assert_array_equal(b, np.zeros(out_dim))
            offset += out_dim

    def test_shapes_chain(self):
        p = init_params([9, 5, 4, 2], 0)
        assert p.shapes == ((9, 5), (5, 4), (4, 2))
        assert p.in_dim == 9
        assert p.out_dim == 2


class TestModelParamsValidation:
    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ModelParams(np.zeros(10), ((3, 2),))

    def test_nonfinite_rejected(self):
        flat = np.zeros(8)
        flat[3] = np.nan
        with pytest.raises(ValueError):
            ModelParams(flat, ((3, 2),))

    def test_flat_is_frozen(self):
        p = tiny_net()
        with pytest.raises(ValueError):
            p.flat[0] = 99.0


class TestForward:
    def test_batch_and_single_shapes(self):
        p = tiny_net()
        x1 = np.ones(5)
        xb = np.ones((6, 5))
        assert forward(p, x1).shape == (3,)
        assert forward(p, xb).shape == (6, 3)
        np.testing.assert_allclose(forward(p, xb)[0], forward(p, x1), atol=1e-12)

    def test_manual_two_layer_computation(self):
        # W1 = identity-ish, relu, then sum; checked by hand
        flat = np.concatenate(
            [
                np.eye(2).ravel(),  # W1 (2x2)
                np.array([0.0, -1.0]),  # b1
                np.array([[1.0], [1.0]]).ravel(),  # W2 (2x1)
                np.array([0.5]),  # b2
            ]
        )
        p = ModelParams(flat, ((2, 2), (2, 1)))
        # z1 = [3, 2-1] = [3, 1]; relu same; out = 3 + 1 + 0.5
        np.testing.assert_allclose(forward(p, np.array([3.0, 2.0])), [4.5], atol=1e-12)
        # negative pre-activation is cut by relu
        # z1 = [1, -5]; relu [1, 0]; out = 1.5
        np.testing.assert_allclose(forward(p, np.array([1.0, -4.0])), [1.5], atol=1e-12)

    def test_wrong_feature_dim_rejected(self):
        with pytest.raises(ValueError):
            forward(tiny_net(), np.ones(4))


class TestBackward:
    def test_finite_difference_through_loss(self):
        # full-network gradient check on a small net, central differences
        gen = np.random.default_rng(0)
        p = tiny_net(seed=1)
        x = gen.normal(size=(4, 5))
        y = gen.integers(0, 3, size=4)
        out = ce_loss(forward(p, x), y)
        g = backward(p, x, out.adjoint_o1).flat
        eps = 1e-5
        idx = gen.choice(p.flat.size, size=25, replace=False)
        for j in idx:
            fp = p.flat.copy()
            fm = p.flat.copy()
            fp[j] += eps
            fm[j] -= eps
            lp = ce_loss(forward(ModelParams(fp, p.shapes), x), y).scalar
            lm = ce_loss(forward(ModelParams(fm, p.shapes), x), y).scalar
            np.testing.assert_allclose(g[j], (lp - lm) / (2 * eps), atol=1e-6)

    def test_linear_in_adjoint(self):
        gen = np.random.default_rng(1)
        p = tiny_net()
        x = gen.normal(size=(3, 5))
        a1 = gen.normal(size=(3, 3))
        a2 = gen.normal(size=(3, 3))
        g1 = backward(p, x, a1).flat
        g2 = backward(p, x, a2).flat
        g12 = backward(p, x, 2.0 * a1 + a2).flat
        np.testing.assert_allclose(g12, 2.0 * g1 + g2, atol=1e-10)

    def test_zero_adjoint_zero_gradient(self):
        p = tiny_net()
        g = backward(p, np.ones((2, 5)), np.zeros((2, 3)))
        np.testing.assert_array_equal(g.flat, np.zeros(p.flat.size))

    def test_adjoint_shape_checked(self):
        p = tiny_net()
        with pytest.raises(ValueError):
            backward(p, np.ones((2, 5)), np.zeros((3, 3)))

    def test_gradients_add(self):
        gen = np.random.default_rng(2)
        p = tiny_net()
        x = gen.normal(size=(2, 5))
        a = gen.normal(size=(2, 3))
        total = backward(p, x, a) + backward(p, x, a)
        np.testing.assert_allclose(total.flat, 2.0 * backward(p, x, a).flat, atol=1e-12)


class TestSgdStep:
    def test_plain_update_no_momentum(self):
        p = tiny_net()
        g = Gradients(np.ones(p.flat.size))
        q = sgd_step(p, g, 0.1)
        np.testing.assert_allclose(q.flat, p.flat - 0.1, atol=1e-15)
        # repeating the same step from q moves again by the same amount
        r = sgd_step(q, g, 0.1)
        np.testing.assert_allclose(r.flat, p.flat - 0.2, atol=1e-15)

    def test_inputs_untouched(self):
        p = tiny_net()
        before = p.flat.copy()
        sgd_step(p, Gradients(np.ones(p.flat.size)), 0.5)
        np.testing.assert_array_equal(p.flat, before)

    def test_bad_lr_rejected(self):
        p = tiny_net()
        g = Gradients(np.zeros(p.flat.size))
        with pytest.raises(ValueError):
            sgd_step(p, g, -0.1)
        with pytest.raises(ValueError):
            sgd_step(p, g, np.nan)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            sgd_step(tiny_net(), Gradients(np.zeros(3)), 0.1)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params([11, 6, 4], 5)
        path = tmp_path / "model.ckpt"
        save_params(p, path)
        q = load_params(path)
        np.testing.assert_array_equal(p.flat, q.flat)
        assert p.shapes == q.shapes

    def test_header_is_json_line(self, tmp_path):
        import json

        p = tiny_net()
        path = tmp_path / "model.ckpt"
        save_params(p, path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
        assert header["count"] == p.flat.size
        assert header["layers"] == [[5, 7], [7, 4], [4, 3]]

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not json\n" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_params(path)

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"format": "other", "version": 1, "layers": [[1, 1]], "count": 2}\n')
        with pytest.raises(ValueError):
            load_params(path)

    def test_truncated_payload_rejected(self, tmp_path):
        p = tiny_net()
        path = tmp_path / "model.ckpt"
        save_params(p, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError):
            load_params(path)
