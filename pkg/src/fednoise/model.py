"""Fully-connected classifier stored as one flat parameter vector.

The flat layout is load-bearing: federated averaging, SGD, and checkpointing
all operate on the single float64 vector, so parameter arithmetic is plain
numpy and bit-reproducible. Layer structure lives in ``shapes`` as
``(in_dim, out_dim)`` pairs; each layer owns ``in_dim * out_dim`` weights
followed by ``out_dim`` biases. Hidden activations are ReLU, the final layer
emits raw logits.

Gradients are exact reverse-mode, written out by hand. :func:`backward`
accepts an adjoint at the logits, so any loss that can state dL/d(logits)
composes with it; losses that run the network twice (clean and augmented
input) call it once per pass and add the results.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, as_stream

__all__ = [
    "ModelParams",
    "Gradients",
    "param_count",
    "init_params",
    "forward",
    "backward",
    "sgd_step",
    "save_params",
    "load_params",
]

_CHECKPOINT_FORMAT = "fednoise-mlp"
_CHECKPOINT_VERSION = 1


def param_count(layer_sizes: "list[int] | tuple[int, ...]") -> int:
    """Total parameter count for an MLP with the given layer widths."""
    sizes = list(layer_sizes)
    if len(sizes) < 3:
        raise ValueError("need at least input, one hidden, and output widths")
    if any(int(s) < 1 for s in sizes):
        raise ValueError(f"layer widths must be positive, got {sizes}")
    return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class ModelParams:
    """Immutable flat parameter vector plus per-layer (in_dim, out_dim) pairs."""

    flat: np.ndarray
    shapes: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        flat = np.array(self.flat, dtype=np.float64)
        if flat.ndim != 1:
            raise ValueError(f"flat parameters must be 1-D, got shape {flat.shape}")
        shapes = tuple((int(i), int(o)) for i, o in self.shapes)
        expected = sum((i + 1) * o for i, o in shapes)
        if flat.size != expected:
            raise ValueError(
                f"flat vector has {flat.size} entries, shapes demand {expected}"
            )
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "shapes", shapes)

    @property
    def in_dim(self) -> int:
        return self.shapes[0][0]

    @property
    def out_dim(self) -> int:
        return self.shapes[-1][1]


@dataclass(frozen=True)
class Gradients:
    """Flat gradient vector aligned with ModelParams.flat."""

    flat: np.ndarray

    def __post_init__(self) -> None:
        flat = np.array(self.flat, dtype=np.float64)
        if flat.ndim != 1:
            raise ValueError(f"flat gradient must be 1-D, got shape {flat.shape}")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    def __add__(self, other: "Gradients") -> "Gradients":
        if not isinstance(other, Gradients):
            return NotImplemented
        if self.flat.size != other.flat.size:
            raise ValueError("gradient sizes differ")
        return Gradients(self.flat + other.flat)


def _layer_views(flat: np.ndarray, shapes: tuple[tuple[int, int], ...]):
    """Yield (W, b) views into the flat vector, in layer order."""
    offset = 0
    for in_dim, out_dim in shapes:
        w = flat[offset : offset + in_dim * out_dim].reshape(in_dim, out_dim)
        offset += in_dim * out_dim
        b = flat[offset : offset + out_dim]
        offset += out_dim
        yield w, b


def init_params(layer_sizes: "list[int] | tuple[int, ...]", seed: "int | RngStream") -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic under the seed."""
    count = param_count(layer_sizes)
    sizes = [int(s) for s in layer_sizes]
    shapes = tuple(zip(sizes[:-1], sizes[1:]))
    gen = as_stream(seed).child("model-init").generator()
    flat = np.zeros(count, dtype=np.float64)
    offset = 0
    for in_dim, out_dim in shapes:
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        n_w = in_dim * out_dim
        flat[offset : offset + n_w] = gen.uniform(-limit, limit, size=n_w)
        offset += n_w + out_dim  # biases stay zero
    return ModelParams(flat, shapes)


def _check_input(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != params.in_dim:
        raise ValueError(
            f"input has feature dim {arr.shape[-1] if arr.ndim else '?'}, "
            f"model expects {params.in_dim}"
        )
    return arr, single


def _forward_cached(params: ModelParams, x: np.ndarray):
    """Forward pass keeping pre-activations for the backward sweep."""
    layers = list(_layer_views(params.flat, params.shapes))
    acts = [x]
    pre = []
    h = x
    for li, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        h = z if li == len(layers) - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Logits for a sample (d,) -> (M,) or a batch (B, d) -> (B, M)."""
    arr, single = _check_input(params, x)
    acts, _ = _forward_cached(params, arr)
    out = acts[-1]
    return out[0] if single else out


def backward(params: ModelParams, x: np.ndarray, adjoint: np.ndarray) -> Gradients:
    """Exact parameter gradient given dLoss/dLogits for this batch.

    The adjoint must match the logits shape for x. Zero adjoints yield a
    zero gradient; the map is linear in the adjoint.
    """
    arr, single = _check_input(params, x)
    adj = np.asarray(adjoint, dtype=np.float64)
    if single:
        adj = adj[None, :]
    if adj.shape != (arr.shape[0], params.out_dim):
        raise ValueError(
            f"adjoint shape {adj.shape} does not match logits shape "
            f"({arr.shape[0]}, {params.out_dim})"
        )
    layers = list(_layer_views(params.flat, params.shapes))
    acts, pre = _forward_cached(params, arr)

    grad = np.zeros(params.flat.size, dtype=np.float64)
    # Walk layers in reverse, filling grad slices in forward layout order.
    offsets = []
    offset = 0
    for in_dim, out_dim in params.shapes:
        offsets.append(offset)
        offset += (in_dim + 1) * out_dim

    dz = adj
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        in_dim, out_dim = params.shapes[li]
        off = offsets[li]
        grad[off : off + in_dim * out_dim] = (acts[li].T @ dz).ravel()
        grad[off + in_dim * out_dim : off + (in_dim + 1) * out_dim] = dz.sum(axis=0)
        if li > 0:
            dz = (dz @ w.T) * (pre[li - 1] > 0.0)
    return Gradients(grad)


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """One plain gradient step; returns new params, inputs untouched."""
    if not np.isfinite(lr) or lr < 0:
        raise ValueError(f"learning rate must be finite and non-negative, got {lr}")
    if grads.flat.size != params.flat.size:
        raise ValueError("gradient does not match parameter count")
    return ModelParams(params.flat - lr * grads.flat, params.shapes)


def save_params(params: ModelParams, path: "str | os.PathLike") -> None:
    """Write a checkpoint: one JSON header line, then raw little-endian f64.

    Header fields: format, version, layers (list of [in, out]), count.
    """
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "layers": [[i, o] for i, o in params.shapes],
        "count": int(params.flat.size),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path: "str | os.PathLike") -> ModelParams:
    """Read a checkpoint written by save_params. Raises ValueError on mismatch."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"checkpoint header is not valid JSON: {exc}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format {header.get('format')!r}")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    shapes = tuple((int(i), int(o)) for i, o in header["layers"])
    count = int(header["count"])
    flat = np.frombuffer(blob, dtype="<f8")
    if flat.size != count:
        raise ValueError(
            f"checkpoint payload has {flat.size} floats, header says {count}"
        )
    return ModelParams(flat.astype(np.float64), shapes)
