"""Mild stochastic input transformations for the dual-forward objective.

Policies are ordered lists of ops. Each op draws from its own sub-stream of
the rng handed to :func:`apply`, so inserting or removing one op never
shifts the randomness of the others. Image ops (rotation, flip) need the
dataset's ``image_shape`` metadata; purely tabular data can only be
jittered.

Augmentation here is deliberately weak: the downstream objective compares
predictions on the original and transformed input, so the transform must
preserve the label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .numerics import RngStream

__all__ = [
    "UnsupportedAugmentationError",
    "Rotation",
    "HorizontalFlip",
    "FeatureJitter",
    "AugmentPolicy",
    "random_rotation",
    "horizontal_flip",
    "feature_jitter",
    "apply",
    "apply_batch",
]


class UnsupportedAugmentationError(ValueError):
    """An op in the policy cannot run on this data (missing image metadata)."""


@dataclass(frozen=True)
class Rotation:
    """Rotate the image by an angle drawn uniformly from [-max_degrees, +max_degrees]."""

    max_degrees: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.max_degrees) and self.max_degrees >= 0):
            raise ValueError(f"max_degrees must be non-negative, got {self.max_degrees}")


@dataclass(frozen=True)
class HorizontalFlip:
    """Mirror the image left-right with the given probability."""

    prob: float = 0.5

    def __post_init__(self) -> None:
        if not (np.isfinite(self.prob) and 0.0 <= self.prob <= 1.0):
            raise ValueError(f"flip probability must lie in [0, 1], got {self.prob}")


@dataclass(frozen=True)
class FeatureJitter:
    """Add independent Gaussian noise with the given standard deviation."""

    sigma: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"jitter sigma must be non-negative, got {self.sigma}")


_IMAGE_OPS = (Rotation, HorizontalFlip)
_ALL_OPS = (Rotation, HorizontalFlip, FeatureJitter)


@dataclass(frozen=True)
class AugmentPolicy:
    """Ordered op list; an empty policy is the identity transform."""

    ops: tuple = ()

    def __post_init__(self) -> None:
        ops = tuple(self.ops)
        for op in ops:
            if not isinstance(op, _ALL_OPS):
                raise ValueError(f"unknown augmentation op {op!r}")
        object.__setattr__(self, "ops", ops)

    def needs_image(self) -> bool:
        return any(isinstance(op, _IMAGE_OPS) for op in self.ops)


def random_rotation(
    image: np.ndarray, max_degrees: float, rng: "RngStream | np.random.Generator"
) -> np.ndarray:
    """Rotate about the image center, bilinear resampling, zero fill outside.

    Accepts (H, W) or (H, W, C) arrays. max_degrees = 0 returns an exact
    copy without consuming randomness.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise UnsupportedAugmentationError(
            f"rotation needs a (H, W) or (H, W, C) image, got shape {img.shape}"
        )
    if max_degrees == 0:
        return img.copy()
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    angle = float(gen.uniform(-max_degrees, max_degrees))
    return ndimage.rotate(
        img, angle, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0
    )


def horizontal_flip(
    image: np.ndarray, prob: float, rng: "RngStream | np.random.Generator"
) -> np.ndarray:
    """Mirror columns with the given probability (left-right flip)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise UnsupportedAugmentationError(
            f"flip needs a (H, W) or (H, W, C) image, got shape {img.shape}"
        )
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if gen.random() < prob:
        return img[:, ::-1].copy()
    return img.copy()


def feature_jitter(
    x: np.ndarray, sigma: float, rng: "RngStream | np.random.Generator"
) -> np.ndarray:
    """Add N(0, sigma^2) noise elementwise; sigma = 0 is the identity."""
    arr = np.asarray(x, dtype=np.float64)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return arr + gen.normal(0.0, sigma, size=arr.shape)


def _to_image(x_flat: np.ndarray, image_shape: tuple) -> np.ndarray:
    h, w, c = image_shape
    img = x_flat.reshape(h, w, c)
    return img[:, :, 0] if c == 1 else img


def _apply_ops_single(
    ops: tuple, x_flat: np.ndarray, image_shape, gens: list
) -> np.ndarray:
    cur = x_flat
    as_image = image_shape is not None and any(isinstance(op, _IMAGE_OPS) for op in ops)
    if as_image:
        cur = _to_image(cur, image_shape)
    for op, gen in zip(ops, gens):
        if isinstance(op, Rotation):
            cur = random_rotation(cur, op.max_degrees, gen)
        elif isinstance(op, HorizontalFlip):
            cur = horizontal_flip(cur, op.prob, gen)
        else:
            cur = feature_jitter(cur, op.sigma, gen)
    return cur.reshape(-1) if as_image else cur


def apply(
    policy: AugmentPolicy,
    x: np.ndarray,
    rng: RngStream,
    image_shape: "tuple[int, int, int] | None" = None,
) -> np.ndarray:
    """Run the policy on one flat feature vector.

    Each op draws from ``rng.child(op_index)``. Identical (policy, x, rng
    path) always give the identical output. Raises
    UnsupportedAugmentationError when an image op meets tabular data.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"apply expects a flat (d,) vector, got shape {arr.shape}")
    if policy.needs_image() and image_shape is None:
        raise UnsupportedAugmentationError(
            "policy contains image ops but the data has no image shape"
        )
    if not policy.ops:
        return arr.copy()
    gens = [rng.child(i).generator() for i in range(len(policy.ops))]
    return _apply_ops_single(policy.ops, arr, image_shape, gens)


def apply_batch(
    policy: AugmentPolicy,
    batch: np.ndarray,
    rng: RngStream,
    image_shape: "tuple[int, int, int] | None" = None,
) -> np.ndarray:
    """Run the policy on a (B, d) batch, one independent draw per sample.

    Per op, a single sub-stream supplies the whole batch in row order, so
    every sample gets fresh randomness and re-running with the same rng path
    reproduces the batch bit-for-bit. The jitter op draws one vectorized
    normal block; the image ops loop over rows.
    """
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"apply_batch expects (B, d), got shape {arr.shape}")
    if policy.needs_image() and image_shape is None:
        raise UnsupportedAugmentationError(
            "policy contains image ops but the data has no image shape"
        )
    if not policy.ops or arr.shape[0] == 0:
        return arr.copy()

    out = arr.copy()
    for i, op in enumerate(policy.ops):
        gen = rng.child(i).generator()
        if isinstance(op, FeatureJitter):
            out = out + gen.normal(0.0, op.sigma, size=out.shape)
        elif isinstance(op, Rotation):
            for b in range(out.shape[0]):
                img = _to_image(out[b], image_shape)
                out[b] = random_rotation(img, op.max_degrees, gen).reshape(-1)
        else:
            for b in range(out.shape[0]):
                img = _to_image(out[b], image_shape)
                out[b] = horizontal_flip(img, op.prob, gen).reshape(-1)
    return out
