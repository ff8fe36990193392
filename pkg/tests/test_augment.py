"""Augmentation ops: rotation, flip, jitter, policy composition."""

import numpy as np
import pytest

from fednoise.augment import (
    AugmentPolicy,
    FeatureJitter,
    HorizontalFlip,
    Rotation,
    UnsupportedAugmentationError,
    apply,
    apply_batch,
    feature_jitter,
    horizontal_flip,
    random_rotation,
)
from fednoise.numerics import RngStream


def radial_image(size=15):
    """Rotation-invariant-friendly test image: value depends on radius only."""
    c = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
    return np.exp(-0.5 * (r / 3.0) ** 2)


class ForcedAngleGen:
    """Stand-in generator returning a fixed uniform draw (selects the angle)."""

    def __init__(self, angle, lo, hi):
        self.value = angle
        self.lo = lo
        self.hi = hi

    def uniform(self, lo, hi):
        assert (lo, hi) == (self.lo, self.hi)
        return self.value


class TestRotation:
    def test_quarter_turns_near_exact_on_radial_image(self):
        # a radially symmetric image is invariant under any rotation about
        # its center; 90/180/270 hit the grid exactly up to interpolation
        img = radial_image()
        for angle in (90.0, 180.0, 270.0):
            out = random_rotation(img, 360.0, ForcedAngleGen(angle, -360.0, 360.0))
            np.testing.assert_allclose(out, img, atol=1e-6)

    def test_forward_backward_round_trip(self):
        # smooth off-center bump: rotation-sensitive, yet band-limited enough
        # that two bilinear resamplings nearly invert each other
        yy, xx = np.mgrid[0:15, 0:15]
        img = np.exp(-0.5 * (((yy - 4.0) / 2.5) ** 2 + ((xx - 9.0) / 2.5) ** 2))
        rot = random_rotation(img, 360.0, ForcedAngleGen(23.0, -360.0, 360.0))
        assert np.abs(rot - img).max() > 0.1  # the forward rotation moved mass
        back = random_rotation(rot, 360.0, ForcedAngleGen(-23.0, -360.0, 360.0))
        # interior pixels survive the round trip; borders lose mass to the
        # zero fill, so compare away from the edge
        np.testing.assert_allclose(back[4:-4, 4:-4], img[4:-4, 4:-4], atol=0.15)

    def test_zero_degrees_is_identity(self):
        img = radial_image()
        out = random_rotation(img, 0.0, RngStream(0))
        np.testing.assert_array_equal(out, img)

    def test_shape_preserved_with_channels(self):
        gen = np.random.default_rng(1)
        img = gen.random((8, 8, 3))
        out = random_rotation(img, 30.0, gen)
        assert out.shape == (8, 8, 3)

    def test_angle_within_bounds(self):
        # draws stay inside [-max, +max]: rotating by at most ~0 degrees
        # cannot move mass far; compare against the worst case at 5 degrees
        img = radial_image()
        out = random_rotation(img, 5.0, RngStream(3))
        assert np.abs(out - img).max() < 0.1

    def test_deterministic_under_stream(self):
        gen = np.random.default_rng(2)
        img = gen.random((10, 10))
        a = random_rotation(img, 30.0, RngStream(4))
        b = random_rotation(img, 30.0, RngStream(4))
        np.testing.assert_array_equal(a, b)

    def test_flat_vector_rejected(self):
        with pytest.raises(UnsupportedAugmentationError):
            random_rotation(np.zeros(10), 30.0, RngStream(0))

    def test_negative_max_degrees_rejected(self):
        with pytest.raises(ValueError):
            Rotation(-1.0)


class TestHorizontalFlip:
    def test_forced_flip_is_exact_mirror(self):
        gen = np.random.default_rng(3)
        img = gen.random((6, 7))
        out = horizontal_flip(img, 1.0, RngStream(0))
        np.testing.assert_array_equal(out, img[:, ::-1])

    def test_double_forced_flip_is_identity(self):
        gen = np.random.default_rng(4)
        img = gen.random((6, 7, 3))
        once = horizontal_flip(img, 1.0, RngStream(0))
        twice = horizontal_flip(once, 1.0, RngStream(0))
        np.testing.assert_array_equal(twice, img)

    def test_prob_zero_never_flips(self):
        gen = np.random.default_rng(5)
        img = gen.random((4, 5))
        out = horizontal_flip(img, 0.0, RngStream(1))
        np.testing.assert_array_equal(out, img)

    def test_flip_rate_near_prob(self):
        img = np.arange(6.0).reshape(2, 3)
        flipped = 0
        gen = np.random.default_rng(6)
        for _ in range(400):
            out = horizontal_flip(img, 0.3, gen)
            flipped += int(not np.array_equal(out, img))
        assert abs(flipped / 400 - 0.3) < 0.07

    def test_prob_validated(self):
        with pytest.raises(ValueError):
            HorizontalFlip(1.5)


class TestFeatureJitter:
    def test_sigma_zero_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(feature_jitter(x, 0.0, RngStream(0)), x)

    def test_noise_statistics(self):
        x = np.zeros(20000)
        out = feature_jitter(x, 0.5, RngStream(1))
        assert abs(out.mean()) < 0.02
        assert abs(out.std() - 0.5) < 0.02

    def test_same_stream_same_jitter(self):
        x = np.ones(10)
        a = feature_jitter(x, 0.3, RngStream(2))
        b = feature_jitter(x, 0.3, RngStream(2))
        np.testing.assert_array_equal(a, b)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            FeatureJitter(-0.1)


class TestPolicy:
    def test_empty_policy_is_identity(self):
        x = np.arange(6.0)
        out = apply(AugmentPolicy(), x, RngStream(0))
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_forced_flip_plus_zero_rotation_is_exact_mirror(self):
        gen = np.random.default_rng(7)
        img = gen.random((5, 4))
        policy = AugmentPolicy((HorizontalFlip(1.0), Rotation(0.0)))
        out = apply(policy, img.reshape(-1), RngStream(0), image_shape=(5, 4, 1))
        np.testing.assert_array_equal(out.reshape(5, 4), img[:, ::-1])

    def test_image_op_on_tabular_data_rejected(self):
        policy = AugmentPolicy((Rotation(30.0),))
        with pytest.raises(UnsupportedAugmentationError):
            apply(policy, np.zeros(10), RngStream(0))
        with pytest.raises(UnsupportedAugmentationError):
            apply_batch(policy, np.zeros((2, 10)), RngStream(0))

    def test_needs_image_flag(self):
        assert AugmentPolicy((Rotation(10.0),)).needs_image()
        assert AugmentPolicy((HorizontalFlip(0.5),)).needs_image()
        assert not AugmentPolicy((FeatureJitter(0.1),)).needs_image()

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError):
            AugmentPolicy(("rotate",))

    def test_deterministic_per_path(self):
        policy = AugmentPolicy((FeatureJitter(0.5),))
        x = np.ones(8)
        a = apply(policy, x, RngStream(1).child("augment", 0, 0))
        b = apply(policy, x, RngStream(1).child("augment", 0, 0))
        c = apply(policy, x, RngStream(1).child("augment", 0, 1))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_ops_consume_independent_streams(self):
        # removing the first op must not change what the second op draws
        x = np.zeros(6)
        both = AugmentPolicy((FeatureJitter(1.0), FeatureJitter(1.0)))
        jitter_only = apply(AugmentPolicy((FeatureJitter(1.0),)), x, RngStream(5))
        combined = apply(both, x, RngStream(5))
        # first op's contribution equals the single-op run
        assert not np.array_equal(combined, jitter_only)


class TestApplyBatch:
    def test_rows_get_independent_draws(self):
        policy = AugmentPolicy((FeatureJitter(1.0),))
        out = apply_batch(policy, np.zeros((3, 5)), RngStream(0))
        assert not np.array_equal(out[0], out[1])

    def test_batch_reproducible(self):
        policy = AugmentPolicy((FeatureJitter(0.5),))
        x = np.ones((4, 6))
        a = apply_batch(policy, x, RngStream(3))
        b = apply_batch(policy, x, RngStream(3))
        np.testing.assert_array_equal(a, b)

    def test_image_ops_per_row(self):
        gen = np.random.default_rng(8)
        batch = gen.random((3, 20))
        policy = AugmentPolicy((HorizontalFlip(1.0),))
        out = apply_batch(policy, batch, RngStream(0), image_shape=(4, 5, 1))
        for b in range(3):
            np.testing.assert_array_equal(
                out[b].reshape(4, 5), batch[b].reshape(4, 5)[:, ::-1]
            )

    def test_empty_batch_passthrough(self):
        policy = AugmentPolicy((FeatureJitter(0.5),))
        out = apply_batch(policy, np.zeros((0, 4)), RngStream(0))
        assert out.shape == (0, 4)

    def test_input_never_mutated(self):
        policy = AugmentPolicy((FeatureJitter(1.0),))
        x = np.ones((2, 3))
        before = x.copy()
        apply_batch(policy, x, RngStream(0))
        np.testing.assert_array_equal(x, before)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            apply_batch(AugmentPolicy(), np.zeros(4), RngStream(0))
        with pytest.raises(ValueError):
            apply(AugmentPolicy(), np.zeros((2, 2)), RngStream(0))
