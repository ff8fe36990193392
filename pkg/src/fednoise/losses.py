"""Training losses with exact adjoints at the logit heads.

Every loss returns a :class:`LossOutput` carrying the batch-mean scalar and
the gradients of that scalar with respect to the two logit inputs. Losses
that read a single logits array leave ``adjoint_o2`` at zero. The model
module turns these adjoints into parameter gradients; keeping the chain rule
explicit here is what makes the finite-difference oracles in the test suite
possible.

The regularized classification loss works on probabilities rather than
logits: the two softmax outputs are convexly mixed, the mixture is sharpened
by an exponent 1/T, and the sharpened mixture is scored with cross-entropy
against the (possibly noisy) label. Confidently wrong predictions therefore
pay more than under plain cross-entropy, which is the mechanism that slows
label memorization.

The self-distillation term compares temperature-scaled softmax outputs of
the clean and augmented passes. Both outputs are floored at ``clamp_lo``
(no renormalization) before the divergence so logs stay finite. Supported
divergences: ``js`` (Jensen-Shannon), ``l1``, ``l2``, and ``cosine``. The
cosine variant matches each side against a detached copy of the other
(gradients do not flow through the stopped side) and halves the sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import softmax, softmax_vjp, tempered_softmax

__all__ = [
    "LsrHyperParams",
    "SymCeParams",
    "LossOutput",
    "ce_loss",
    "ce_per_sample",
    "mixup_prediction",
    "lsr_cls_loss",
    "self_distill_loss",
    "lsr_total_loss",
    "lsr_plus_loss",
    "symmetric_ce_loss",
    "sharpened_ce_loss",
    "sharpened_ce_per_sample",
    "small_loss_select",
]

_DISTILL_KINDS = ("js", "l1", "l2", "cosine", "none")


@dataclass(frozen=True)
class LsrHyperParams:
    """Knobs for the self-regularized objective.

    sharpen_temp:   exponent temperature T for the sharpened mixture (T < 1
                    peaks the distribution; T = 1 disables sharpening).
    distill_temp:   temperature dividing the logits inside the distillation
                    softmax (values < 1 peak the compared distributions).
    gamma:          full weight of the distillation term after warm-up.
    entropy_weight: weight of the prediction-entropy bonus (the "plus"
                    objective); 0 disables it.
    distill_kind:   js | l1 | l2 | cosine | none.
    clamp_lo:       floor applied to compared probabilities, and to the
                    sharpened target probability inside the log.
    fix_lambda:     when set, use this constant mixing weight instead of a
                    Beta(1, 1) draw (ablation switch).
    """

    sharpen_temp: float = 0.5
    distill_temp: float = 1.0 / 3.0
    gamma: float = 0.2
    entropy_weight: float = 0.0
    distill_kind: str = "js"
    clamp_lo: float = 1e-6
    fix_lambda: "float | None" = None

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sharpen_temp) and self.sharpen_temp > 0):
            raise ValueError(f"sharpen_temp must be positive, got {self.sharpen_temp}")
        if not (np.isfinite(self.distill_temp) and self.distill_temp > 0):
            raise ValueError(f"distill_temp must be positive, got {self.distill_temp}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if not (np.isfinite(self.entropy_weight) and self.entropy_weight >= 0):
            raise ValueError(
                f"entropy_weight must be non-negative, got {self.entropy_weight}"
            )
        if self.distill_kind not in _DISTILL_KINDS:
            raise ValueError(
                f"distill_kind must be one of {_DISTILL_KINDS}, got {self.distill_kind!r}"
            )
        if not (0.0 < self.clamp_lo < 1.0):
            raise ValueError(f"clamp_lo must lie in (0, 1), got {self.clamp_lo}")
        if self.fix_lambda is not None and not (0.0 <= self.fix_lambda <= 1.0):
            raise ValueError(f"fix_lambda must lie in [0, 1], got {self.fix_lambda}")


@dataclass(frozen=True)
class SymCeParams:
    """Weights for the symmetric cross-entropy baseline.

    The reverse term scores the label one-hot under the prediction, with
    log(0) replaced by the finite constant ``log_zero``.
    """

    alpha: float = 0.1
    beta: float = 1.0
    log_zero: float = -4.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not (np.isfinite(self.log_zero) and self.log_zero < 0):
            raise ValueError(f"log_zero must be a negative constant, got {self.log_zero}")


@dataclass(frozen=True)
class LossOutput:
    """Batch-mean scalar plus gradients at the two logit heads."""

    scalar: float
    adjoint_o1: np.ndarray
    adjoint_o2: np.ndarray


def _check_logits_labels(logits: np.ndarray, labels: np.ndarray):
    o = np.asarray(logits, dtype=np.float64)
    if o.ndim == 1:
        o = o[None, :]
    if o.ndim != 2:
        raise ValueError(f"logits must be (B, M), got shape {o.shape}")
    y = np.asarray(labels)
    if y.ndim == 0:
        y = y[None]
    if y.shape != (o.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch {o.shape[0]}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integers")
    if o.shape[0] == 0:
        raise ValueError("empty batch")
    if y.min() < 0 or y.max() >= o.shape[1]:
        raise ValueError(
            f"labels must lie in [0, {o.shape[1]}), got range [{y.min()}, {y.max()}]"
        )
    return o, y.astype(np.int64)


def _log_softmax(o: np.ndarray) -> np.ndarray:
    shifted = o - o.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_per_sample(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy, -log softmax(o)[y], shape (B,)."""
    o, y = _check_logits_labels(logits, labels)
    if not np.all(np.isfinite(o)):
        raise ValueError("logits must be finite")
    logp = _log_softmax(o)
    return -logp[np.arange(o.shape[0]), y]


def ce_loss(logits: np.ndarray, labels: np.ndarray) -> LossOutput:
    """Mean cross-entropy against integer labels.

    adjoint_o1 = (softmax(o) - onehot(y)) / B, the classic closed form.
    """
    o, y = _check_logits_labels(logits, labels)
    if not np.all(np.isfinite(o)):
        raise ValueError("logits must be finite")
    batch = o.shape[0]
    logp = _log_softmax(o)
    scalar = float(-logp[np.arange(batch), y].mean())
    adj = np.exp(logp)
    adj[np.arange(batch), y] -= 1.0
    adj /= batch
    return LossOutput(scalar, adj, np.zeros_like(o))


def mixup_prediction(p1: np.ndarray, p2: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * p1 + (1 - lam) * p2 of two prediction arrays."""
    if not (np.isfinite(lam) and 0.0 <= lam <= 1.0):
        raise ValueError(f"mixing weight must lie in [0, 1], got {lam}")
    a = np.asarray(p1, dtype=np.float64)
    b = np.asarray(p2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"prediction shapes differ: {a.shape} vs {b.shape}")
    return lam * a + (1.0 - lam) * b


def lsr_cls_loss(
    o1: np.ndarray,
    o2: np.ndarray,
    labels: np.ndarray,
    lam: float,
    hp: LsrHyperParams,
) -> LossOutput:
    """Cross-entropy of the sharpened mixed prediction against the labels.

    Pipeline per sample: p = lam * softmax(o1) + (1 - lam) * softmax(o2),
    then loss = -log( p[y]^(1/T) / sum_j p[j]^(1/T) ), floored at clamp_lo
    inside the log. Gradients flow into both heads through the mixture.
    """
    o1, y = _check_logits_labels(o1, labels)
    o2 = np.asarray(o2, dtype=np.float64)
    if o2.ndim == 1:
        o2 = o2[None, :]
    if o2.shape != o1.shape:
        raise ValueError(f"logit head shapes differ: {o1.shape} vs {o2.shape}")
    if not (np.isfinite(lam) and 0.0 <= lam <= 1.0):
        raise ValueError(f"mixing weight must lie in [0, 1], got {lam}")

    # T = 1 with lam = 1 is plain cross-entropy on o1. Take the direct code
    # path so the degenerate configuration is arithmetic-for-arithmetic
    # identical to ce_loss, not merely close.
    if hp.sharpen_temp == 1.0 and lam == 1.0:
        base = ce_loss(o1, y)
        return LossOutput(base.scalar, base.adjoint_o1, np.zeros_like(o2))

    batch, _ = o1.shape
    rows = np.arange(batch)
    u = 1.0 / hp.sharpen_temp
    p1 = softmax(o1)
    p2 = softmax(o2)
    p = mixup_prediction(p1, p2, lam)

    powered = p**u
    norm = powered.sum(axis=1)
    sharp_y = powered[rows, y] / norm
    loss_rows = -np.log(np.maximum(sharp_y, hp.clamp_lo))
    scalar = float(loss_rows.mean())

    # d(-log sharp_y)/dp_i = u * (p_i^(u-1) / norm - [i == y] / p_y),
    # treating p as free variables; softmax_vjp absorbs the simplex
    # constraint. Rows where the clamp is active contribute zero gradient.
    grad_p = u * p ** (u - 1.0) / norm[:, None]
    grad_p[rows, y] -= u / p[rows, y]
    grad_p[sharp_y <= hp.clamp_lo] = 0.0
    grad_p /= batch

    adj1 = softmax_vjp(p1, lam * grad_p)
    adj2 = softmax_vjp(p2, (1.0 - lam) * grad_p)
    return LossOutput(scalar, adj1, adj2)


def _distill_grads_js(c1, c2, batch):
    mid = 0.5 * (c1 + c2)
    kl1 = (c1 * np.log(c1 / mid)).sum(axis=1)
    kl2 = (c2 * np.log(c2 / mid)).sum(axis=1)
    scalar = float((0.5 * (kl1 + kl2)).mean())
    # With mid = (c1 + c2) / 2 held exact, dJS/dc1 collapses to log(c1/mid)/2.
    g1 = 0.5 * np.log(c1 / mid) / batch
    g2 = 0.5 * np.log(c2 / mid) / batch
    return scalar, g1, g2


def _distill_grads_l1(c1, c2, batch):
    diff = c1 - c2
    scalar = float(np.abs(diff).sum(axis=1).mean())
    g1 = np.sign(diff) / batch
    return scalar, g1, -g1


def _distill_grads_l2(c1, c2, batch):
    diff = c1 - c2
    scalar = float((diff**2).sum(axis=1).mean())
    g1 = 2.0 * diff / batch
    return scalar, g1, -g1


def _distill_grads_cosine(c1, c2, batch):
    n1 = np.linalg.norm(c1, axis=1, keepdims=True)
    n2 = np.linalg.norm(c2, axis=1, keepdims=True)
    dot = (c1 * c2).sum(axis=1, keepdims=True)
    cos = dot / (n1 * n2)
    scalar = float((1.0 - cos).mean())
    # Each half treats the other side as a stopped (detached) target, and
    # the two halves are averaged, hence the 0.5 factor.
    g1 = 0.5 * (cos * c1 / n1**2 - c2 / (n1 * n2)) / batch
    g2 = 0.5 * (cos * c2 / n2**2 - c1 / (n1 * n2)) / batch
    return scalar, g1, g2


def self_distill_loss(o1: np.ndarray, o2: np.ndarray, hp: LsrHyperParams) -> LossOutput:
    """Divergence between the two tempered softmax outputs.

    Both outputs are floored at clamp_lo (never renormalized) before the
    divergence; the floor also kills the gradient where it is active. The
    scalar is the batch mean; identical heads give exactly zero for js, l1
    and l2, and zero for cosine as well since the compared vectors align.
    """
    o1 = np.asarray(o1, dtype=np.float64)
    o2 = np.asarray(o2, dtype=np.float64)
    if o1.ndim == 1:
        o1 = o1[None, :]
    if o2.ndim == 1:
        o2 = o2[None, :]
    if o1.shape != o2.shape or o1.ndim != 2:
        raise ValueError(f"logit head shapes differ: {o1.shape} vs {o2.shape}")
    if hp.distill_kind == "none":
        raise ValueError("self_distill_loss called with distill_kind='none'")
    if o1.shape[0] == 0:
        raise ValueError("empty batch")

    batch = o1.shape[0]
    q1 = tempered_softmax(o1, hp.distill_temp)
    q2 = tempered_softmax(o2, hp.distill_temp)
    c1 = np.maximum(q1, hp.clamp_lo)
    c2 = np.maximum(q2, hp.clamp_lo)

    if hp.distill_kind == "js":
        scalar, g1, g2 = _distill_grads_js(c1, c2, batch)
    elif hp.distill_kind == "l1":
        scalar, g1, g2 = _distill_grads_l1(c1, c2, batch)
    elif hp.distill_kind == "l2":
        scalar, g1, g2 = _distill_grads_l2(c1, c2, batch)
    else:
        scalar, g1, g2 = _distill_grads_cosine(c1, c2, batch)

    g1 = g1 * (q1 > hp.clamp_lo)
    g2 = g2 * (q2 > hp.clamp_lo)
    adj1 = softmax_vjp(q1, g1, hp.distill_temp)
    adj2 = softmax_vjp(q2, g2, hp.distill_temp)
    return LossOutput(scalar, adj1, adj2)


def lsr_total_loss(
    o1: np.ndarray,
    o2: np.ndarray,
    labels: np.ndarray,
    lam: float,
    gamma_t: float,
    hp: LsrHyperParams,
) -> LossOutput:
    """Classification term plus gamma_t times the distillation term."""
    if not (np.isfinite(gamma_t) and gamma_t >= 0):
        raise ValueError(f"gamma_t must be non-negative, got {gamma_t}")
    cls = lsr_cls_loss(o1, o2, labels, lam, hp)
    if gamma_t == 0.0 or hp.distill_kind == "none":
        return cls
    reg = self_distill_loss(o1, o2, hp)
    return LossOutput(
        cls.scalar + gamma_t * reg.scalar,
        cls.adjoint_o1 + gamma_t * reg.adjoint_o1,
        cls.adjoint_o2 + gamma_t * reg.adjoint_o2,
    )


def lsr_plus_loss(
    o1: np.ndarray,
    o2: np.ndarray,
    labels: np.ndarray,
    lam: float,
    gamma_t: float,
    hp: LsrHyperParams,
) -> LossOutput:
    """Total loss plus an entropy penalty on both raw predictions.

    Adds entropy_weight * mean_b( H(softmax(o1)) + H(softmax(o2)) ) / 2,
    where H is Shannon entropy in nats. Minimizing the penalty pushes both
    predictions toward lower entropy, firming up the model's confidence when
    long training under heavy noise would otherwise erode it.
    """
    out = lsr_total_loss(o1, o2, labels, lam, gamma_t, hp)
    if hp.entropy_weight == 0.0:
        return out
    o1 = np.asarray(o1, dtype=np.float64)
    o2 = np.asarray(o2, dtype=np.float64)
    if o1.ndim == 1:
        o1 = o1[None, :]
    if o2.ndim == 1:
        o2 = o2[None, :]
    batch = o1.shape[0]
    w = hp.entropy_weight

    scalar = out.scalar
    adjs = []
    for o, base_adj in ((o1, out.adjoint_o1), (o2, out.adjoint_o2)):
        p = softmax(o)
        logp = np.log(np.maximum(p, 1e-300))
        scalar += w * 0.5 * float(-(p * logp).sum(axis=1).mean())
        # dH/dp_i = -(log p_i + 1); entries with p_i = 0 are zeroed by the
        # p factor inside softmax_vjp.
        grad_p = w * 0.5 * (-(logp + 1.0)) / batch
        adjs.append(base_adj + softmax_vjp(p, grad_p))
    return LossOutput(scalar, adjs[0], adjs[1])


def symmetric_ce_loss(logits: np.ndarray, labels: np.ndarray, sp: SymCeParams) -> LossOutput:
    """alpha * CE(prediction, label) + beta * reverse CE.

    The reverse term scores the one-hot label under the prediction; with
    log(0) := log_zero it reduces per sample to -log_zero * (1 - p[y]).
    """
    o, y = _check_logits_labels(logits, labels)
    if not np.all(np.isfinite(o)):
        raise ValueError("logits must be finite")
    batch = o.shape[0]
    rows = np.arange(batch)
    logp = _log_softmax(o)
    p = np.exp(logp)
    p_y = p[rows, y]

    ce_rows = -logp[rows, y]
    rce_rows = -sp.log_zero * (1.0 - p_y)
    scalar = float((sp.alpha * ce_rows + sp.beta * rce_rows).mean())

    adj = p.copy()
    adj[rows, y] -= 1.0
    adj *= sp.alpha
    # Reverse term: dRCE/dp_i = log_zero * [i == y]; pull through softmax.
    onehot_grad = np.zeros_like(p)
    onehot_grad[rows, y] = sp.log_zero
    adj += sp.beta * softmax_vjp(p, onehot_grad)
    adj /= batch
    return LossOutput(scalar, adj, np.zeros_like(o))


def sharpened_ce_loss(logits: np.ndarray, labels: np.ndarray, hp: LsrHyperParams) -> LossOutput:
    """Cross-entropy of the sharpened single-head prediction (no mixing)."""
    out = lsr_cls_loss(logits, logits, labels, 1.0, hp)
    return LossOutput(out.scalar, out.adjoint_o1, np.zeros_like(out.adjoint_o2))


def sharpened_ce_per_sample(
    logits: np.ndarray, labels: np.ndarray, hp: LsrHyperParams
) -> np.ndarray:
    """Per-sample -log sharpen(softmax(o), T)[y], floored at clamp_lo."""
    o, y = _check_logits_labels(logits, labels)
    if not np.all(np.isfinite(o)):
        raise ValueError("logits must be finite")
    rows = np.arange(o.shape[0])
    p = softmax(o)
    if hp.sharpen_temp == 1.0:
        return -np.log(np.maximum(p[rows, y], hp.clamp_lo))
    powered = p ** (1.0 / hp.sharpen_temp)
    sharp_y = powered[rows, y] / powered.sum(axis=1)
    return -np.log(np.maximum(sharp_y, hp.clamp_lo))


def small_loss_select(losses: np.ndarray, keep_ratio: float) -> np.ndarray:
    """Indices of the ceil(keep_ratio * B) smallest losses, ascending.

    Ties are broken toward the lower index; an empty input yields an empty
    selection. keep_ratio must lie in (0, 1].
    """
    if not (np.isfinite(keep_ratio) and 0.0 < keep_ratio <= 1.0):
        raise ValueError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    arr = np.asarray(losses, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"losses must be a 1-D array, got shape {arr.shape}")
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("losses must be finite")
    # The tiny slack keeps float dust in keep_ratio * n (for example
    # 0.7 * 10 landing a hair above 7) from inflating the count.
    count = int(math.ceil(keep_ratio * arr.size - 1e-9))
    count = max(1, min(count, arr.size))
    picked = np.argsort(arr, kind="stable")[:count]
    return np.sort(picked).astype(np.int64)
