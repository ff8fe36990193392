"""Federated averaging round loop and the per-method local trainers.

One round: sample a client subset, train each selected client from the
current global parameters on its own shard, then average the returned
parameter vectors weighted by shard size. Evaluation runs on the clean test
set after every aggregation.

Determinism contract: every consumer of randomness derives its own
RngStream path from the master seed (client selection per round, batch
shuffling per client/round/epoch, augmentation and mixing draws per batch).
Re-running with the same config and seed reproduces every draw, and client
work is order-independent, so the optional thread pool cannot change the
results, only the wall clock.

The pair trainer for the mutual-selection baseline keeps two networks: each
network ranks the batch by its own per-sample loss and hands its
lowest-loss subset to the other network for the update, on the premise that
low-loss samples are more likely to carry correct labels. The keep ratio
starts at 1 and ramps down to 1 - assumed_noise_rate.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, apply_batch
from .data import ClientShard, LabeledDataset
from .losses import (
    LossOutput,
    LsrHyperParams,
    SymCeParams,
    ce_loss,
    ce_per_sample,
    lsr_plus_loss,
    lsr_total_loss,
    self_distill_loss,
    sharpened_ce_loss,
    sharpened_ce_per_sample,
    small_loss_select,
    symmetric_ce_loss,
)
from .model import Gradients, ModelParams, backward, forward, init_params, sgd_step
from .numerics import RngStream, as_stream, sample_mix_weight

__all__ = [
    "METHODS",
    "FedConfig",
    "CoteachingConfig",
    "RoundMetrics",
    "RunResult",
    "select_clients",
    "gamma_schedule",
    "coteach_keep_ratio",
    "local_train_ce",
    "local_train_ce_aug",
    "local_train_symce",
    "local_train_lsr",
    "local_train_symce_lsr",
    "local_train_coteaching",
    "aggregate",
    "evaluate",
    "run_federation",
]

METHODS = (
    "fedavg_ce",
    "lsr",
    "lsr_plus",
    "sym_ce",
    "coteaching",
    "coteaching_lsr",
    "sym_ce_lsr",
    "ce_aug",
)


@dataclass(frozen=True)
class FedConfig:
    """Protocol-level knobs shared by all methods."""

    num_clients: int = 100
    clients_per_round: int = 5
    rounds: int = 100
    local_epochs: int = 5
    batch_size: int = 60
    lr: float = 0.15
    method: str = "lsr"
    warmup_rounds: int = 20
    hidden_layers: tuple = (128, 64)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be positive, got {self.num_clients}")
        if not (1 <= self.clients_per_round <= self.num_clients):
            raise ValueError(
                f"clients_per_round must lie in [1, {self.num_clients}], "
                f"got {self.clients_per_round}"
            )
        if self.rounds < 0:
            raise ValueError(f"rounds must be non-negative, got {self.rounds}")
        # local_epochs = 0 is allowed as a degenerate dry-run value; trainers
        # return the global parameters untouched.
        if self.local_epochs < 0:
            raise ValueError(f"local_epochs must be non-negative, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ValueError(f"lr must be finite and non-negative, got {self.lr}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.warmup_rounds < 0:
            raise ValueError(f"warmup_rounds must be non-negative, got {self.warmup_rounds}")
        if self.rounds and self.warmup_rounds > self.rounds:
            raise ValueError(
                f"warmup_rounds {self.warmup_rounds} exceeds rounds {self.rounds}"
            )
        hidden = tuple(int(h) for h in self.hidden_layers)
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError(f"hidden_layers must be positive widths, got {self.hidden_layers}")
        object.__setattr__(self, "hidden_layers", hidden)
        if self.workers < 1:
            raise ValueError(f"workers must be positive, got {self.workers}")


@dataclass(frozen=True)
class CoteachingConfig:
    """Mutual-selection schedule: keep 1 - min(rate * t / ramp, rate)."""

    noise_rate: float = 0.2
    ramp_rounds: int = 10
    schedule_unit: str = "round"

    def __post_init__(self) -> None:
        if not (np.isfinite(self.noise_rate) and 0.0 <= self.noise_rate < 1.0):
            raise ValueError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        if self.ramp_rounds < 1:
            raise ValueError(f"ramp_rounds must be positive, got {self.ramp_rounds}")
        if self.schedule_unit not in ("round", "epoch"):
            raise ValueError(
                f"schedule_unit must be 'round' or 'epoch', got {self.schedule_unit!r}"
            )


@dataclass(frozen=True)
class RoundMetrics:
    """Per-round record written to the metrics CSV."""

    round: int
    test_accuracy: float
    mean_train_loss: float
    gamma_t: float
    selected_clients: tuple


@dataclass
class RunResult:
    """Round metrics plus the final global parameters.

    final_params is a single ModelParams for single-network methods and a
    (net_a, net_b) tuple for the two-network baseline. param_history is
    filled only when requested: the global parameter vector after every
    aggregation, in round order.
    """

    metrics: list
    final_params: object
    param_history: "list | None" = field(default=None)


def select_clients(num_clients: int, k: int, rng: RngStream) -> np.ndarray:
    """k distinct client ids drawn uniformly without replacement."""
    if not (1 <= k <= num_clients):
        raise ValueError(f"cannot select {k} of {num_clients} clients")
    gen = rng.generator()
    return gen.choice(num_clients, size=k, replace=False).astype(np.int64)


def gamma_schedule(round_idx: int, warmup_rounds: int, gamma: float) -> float:
    """Linear warm-up from 0 to gamma over warmup_rounds, then flat."""
    if round_idx < 0:
        raise ValueError(f"round index must be non-negative, got {round_idx}")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if warmup_rounds <= 0:
        return float(gamma)
    return float(gamma * min(round_idx / warmup_rounds, 1.0))


def coteach_keep_ratio(ct: CoteachingConfig, step: int) -> float:
    """Fraction of each batch kept at schedule step t: 1 - min(rate*t/ramp, rate)."""
    if step < 0:
        raise ValueError(f"schedule step must be non-negative, got {step}")
    return 1.0 - min(ct.noise_rate * step / ct.ramp_rounds, ct.noise_rate)


def _shard_arrays(dataset: LabeledDataset, shard: ClientShard):
    feats = dataset.features[shard.indices]
    labels = dataset.observed_labels[shard.indices]
    return feats, labels


def _iter_batches(n: int, cfg: FedConfig, stream: RngStream):
    """Seeded shuffle per epoch, consecutive batches, final short batch kept.

    Yields (epoch, batch_counter, row_indices). All trainers share this
    helper so methods differing only in the loss walk identical batches.
    """
    batch = cfg.batch_size
    if batch > n:
        warnings.warn(
            f"batch size {batch} exceeds shard size {n}; using one full batch",
            stacklevel=3,
        )
        batch = n
    for epoch in range(cfg.local_epochs):
        perm = stream.child("shuffle", epoch).generator().permutation(n)
        for bi, start in enumerate(range(0, n, batch)):
            yield epoch, bi, perm[start : start + batch]


def _mean(losses: list) -> float:
    return float(np.mean(losses)) if losses else float("nan")


def local_train_ce(
    global_params: ModelParams,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    stream: RngStream,
) -> tuple:
    """Plain cross-entropy SGD on the shard's observed labels."""
    feats, labels = _shard_arrays(dataset, shard)
    params = global_params
    losses = []
    for _, _, rows in _iter_batches(shard.n_k, cfg, stream):
        x = feats[rows]
        out = ce_loss(forward(params, x), labels[rows])
        params = sgd_step(params, backward(params, x, out.adjoint_o1), cfg.lr)
        losses.append(out.scalar)
    return params, _mean(losses)


def local_train_ce_aug(
    global_params: ModelParams,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    policy: AugmentPolicy,
    stream: RngStream,
) -> tuple:
    """Cross-entropy on the shard expanded with one augmented copy per row.

    This is the mixing-removal ablation: the augmented views enter as extra
    training rows under the same labels instead of being fused into one
    prediction. The shard doubles before batching, so each epoch walks twice
    as many batches of the configured size.
    """
    feats, labels = _shard_arrays(dataset, shard)
    aug = apply_batch(policy, feats, stream.child("augment", "expand"), dataset.image_shape)
    feats = np.concatenate([feats, aug], axis=0)
    labels = np.concatenate([labels, labels])
    params = global_params
    losses = []
    for _, _, rows in _iter_batches(labels.shape[0], cfg, stream):
        x = feats[rows]
        out = ce_loss(forward(params, x), labels[rows])
        params = sgd_step(params, backward(params, x, out.adjoint_o1), cfg.lr)
        losses.append(out.scalar)
    return params, _mean(losses)


def local_train_symce(
    global_params: ModelParams,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    sp: SymCeParams,
    stream: RngStream,
) -> tuple:
    """Symmetric cross-entropy SGD on the shard's observed labels."""
    feats, labels = _shard_arrays(dataset, shard)
    params = global_params
    losses = []
    for _, _, rows in _iter_batches(shard.n_k, cfg, stream):
        x = feats[rows]
        out = symmetric_ce_loss(forward(params, x), labels[rows], sp)
        params = sgd_step(params, backward(params, x, out.adjoint_o1), cfg.lr)
        losses.append(out.scalar)
    return params, _mean(losses)


def _mix_weight(hp: LsrHyperParams, stream: RngStream, epoch: int, bi: int) -> float:
    if hp.fix_lambda is not None:
        return float(hp.fix_lambda)
    return sample_mix_weight(stream.child("mixweight", epoch, bi))


def _dual_head_step(
    params: ModelParams, x: np.ndarray, x_aug: np.ndarray, out: LossOutput, lr: float
) -> ModelParams:
    """Apply one SGD step from adjoints at both logit heads.

    The augmented head's backward pass is skipped when its adjoint is
    exactly zero; besides saving a pass, this keeps degenerate
    configurations (identity augmentation, mixing weight pinned to 1)
    arithmetic-identical to the single-head trainers.
    """
    grads = backward(params, x, out.adjoint_o1)
    if np.any(out.adjoint_o2):
        grads = grads + backward(params, x_aug, out.adjoint_o2)
    return sgd_step(params, grads, lr)


def local_train_lsr(
    global_params: ModelParams,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    hp: LsrHyperParams,
    policy: AugmentPolicy,
    stream: RngStream,
    gamma_t: float,
    plus: bool = False,
) -> tuple:
    """Self-regularized local training: dual forward, mixed sharpened CE,
    plus the warm-up-weighted distillation term (and the entropy penalty
    when ``plus``)."""
    feats, labels = _shard_arrays(dataset, shard)
    params = global_params
    losses = []
    loss_fn = lsr_plus_loss if plus else lsr_total_loss
    for epoch, bi, rows in _iter_batches(shard.n_k, cfg, stream):
        x = feats[rows]
        x_aug = apply_batch(policy, x, stream.child("augment", epoch, bi), dataset.image_shape)
        o1 = forward(params, x)
        o2 = forward(params, x_aug)
        lam = _mix_weight(hp, stream, epoch, bi)
        out = loss_fn(o1, o2, labels[rows], lam, gamma_t, hp)
        params = _dual_head_step(params, x, x_aug, out, cfg.lr)
        losses.append(out.scalar)
    return params, _mean(losses)


def local_train_symce_lsr(
    global_params: ModelParams,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    sp: SymCeParams,
    hp: LsrHyperParams,
    policy: AugmentPolicy,
    stream: RngStream,
    gamma_t: float,
) -> tuple:
    """Symmetric CE on mixed logits plus the self-distillation term.

    The two heads' raw logits are convexly mixed (logit-level, matching the
    baseline's own loss form) and scored with symmetric CE; the distillation
    term compares the tempered predictions as usual. Adjoints route through
    the linear mix, so both heads receive gradient.
    """
    feats, labels = _shard_arrays(dataset, shard)
    params = global_params
    losses = []
    for epoch, bi, rows in _iter_batches(shard.n_k, cfg, stream):
        x = feats[rows]
        x_aug = apply_batch(policy, x, stream.child("augment", epoch, bi), dataset.image_shape)
        o1 = forward(params, x)
        o2 = forward(params, x_aug)
        lam = _mix_weight(hp, stream, epoch, bi)
        mixed = lam * o1 + (1.0 - lam) * o2
        sym = symmetric_ce_loss(mixed, labels[rows], sp)
        scalar = sym.scalar
        adj1 = lam * sym.adjoint_o1
        adj2 = (1.0 - lam) * sym.adjoint_o1
        if gamma_t > 0 and hp.distill_kind != "none":
            reg = self_distill_loss(o1, o2, hp)
            scalar += gamma_t * reg.scalar
            adj1 = adj1 + gamma_t * reg.adjoint_o1
            adj2 = adj2 + gamma_t * reg.adjoint_o2
        out = LossOutput(scalar, adj1, adj2)
        params = _dual_head_step(params, x, x_aug, out, cfg.lr)
        losses.append(out.scalar)
    return params, _mean(losses)


def local_train_coteaching(
    params_a: ModelParams,
    params_b: ModelParams,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    ct: CoteachingConfig,
    stream: RngStream,
    round_idx: int,
    sharpen_hp: "LsrHyperParams | None" = None,
) -> tuple:
    """Train two peer networks, each on the other's low-loss picks.

    Per batch, both networks score every sample; network A's smallest-loss
    subset becomes B's training rows and vice versa. With ``sharpen_hp``
    set, the per-sample score and the update loss use the sharpened
    prediction instead of the raw one. Returns (params_a, params_b,
    mean_loss).
    """
    feats, labels = _shard_arrays(dataset, shard)
    pa, pb = params_a, params_b
    losses = []
    for epoch, _, rows in _iter_batches(shard.n_k, cfg, stream):
        x = feats[rows]
        y = labels[rows]
        oa = forward(pa, x)
        ob = forward(pb, x)
        if sharpen_hp is not None:
            per_a = sharpened_ce_per_sample(oa, y, sharpen_hp)
            per_b = sharpened_ce_per_sample(ob, y, sharpen_hp)
        else:
            per_a = ce_per_sample(oa, y)
            per_b = ce_per_sample(ob, y)
        step = round_idx if ct.schedule_unit == "round" else round_idx * cfg.local_epochs + epoch
        keep = coteach_keep_ratio(ct, step)
        picks_a = small_loss_select(per_a, keep)  # A's picks train B
        picks_b = small_loss_select(per_b, keep)

        # Both updates start from this batch's incoming parameters; the
        # selections above were computed before either step.
        step_losses = []
        for params, picks, name in ((pa, picks_b, "a"), (pb, picks_a, "b")):
            if picks.size == 0:
                warnings.warn(
                    f"network {name}: peer kept no samples this batch; skipping step",
                    stacklevel=2,
                )
                continue
            x_kept = x[picks]
            y_kept = y[picks]
            o_kept = forward(params, x_kept)
            if sharpen_hp is not None:
                out = sharpened_ce_loss(o_kept, y_kept, sharpen_hp)
            else:
                out = ce_loss(o_kept, y_kept)
            new_params = sgd_step(params, backward(params, x_kept, out.adjoint_o1), cfg.lr)
            if name == "a":
                pa = new_params
            else:
                pb = new_params
            step_losses.append(out.scalar)
        if step_losses:
            losses.append(float(np.mean(step_losses)))
    return pa, pb, _mean(losses)


def aggregate(models: list, sizes: list) -> ModelParams:
    """Average parameter vectors weighted by shard sizes.

    Computed as anchor + sum_k w_k * (flat_k - anchor) with the first model
    as anchor: identical inputs come back bit-identical, a single model is
    returned unchanged, and the weights sum to one by construction.
    """
    if not models:
        raise ValueError("nothing to aggregate")
    if len(models) != len(sizes):
        raise ValueError(f"{len(models)} models but {len(sizes)} sizes")
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes_arr <= 0) or not np.all(np.isfinite(sizes_arr)):
        raise ValueError(f"shard sizes must be positive, got {sizes}")
    shapes = models[0].shapes
    for m in models[1:]:
        if m.shapes != shapes:
            raise ValueError("cannot aggregate models with different layer shapes")
    total = sizes_arr.sum()
    anchor = models[0].flat
    delta = np.zeros_like(anchor)
    for m, s in zip(models, sizes_arr):
        delta += (s / total) * (m.flat - anchor)
    return ModelParams(anchor + delta, shapes)


def evaluate(params: ModelParams, test_set: LabeledDataset, chunk: int = 4096) -> float:
    """Top-1 accuracy against true labels; argmax ties go to the lower class."""
    if test_set.n == 0:
        raise ValueError("cannot evaluate on an empty test set")
    hits = 0
    for start in range(0, test_set.n, chunk):
        block = test_set.features[start : start + chunk]
        preds = np.argmax(forward(params, block), axis=1)
        hits += int((preds == test_set.true_labels[start : start + chunk]).sum())
    return hits / test_set.n


def _train_one_client(
    method: str,
    globals_: tuple,
    dataset: LabeledDataset,
    shard: ClientShard,
    cfg: FedConfig,
    hp: LsrHyperParams,
    sp: SymCeParams,
    ct: CoteachingConfig,
    policy: AugmentPolicy,
    stream: RngStream,
    round_idx: int,
    gamma_t: float,
):
    """Dispatch one client's local training. Returns (params..., mean_loss)."""
    if method == "fedavg_ce":
        params, loss = local_train_ce(globals_[0], dataset, shard, cfg, stream)
        return (params,), loss
    if method == "ce_aug":
        params, loss = local_train_ce_aug(globals_[0], dataset, shard, cfg, policy, stream)
        return (params,), loss
    if method == "sym_ce":
        params, loss = local_train_symce(globals_[0], dataset, shard, cfg, sp, stream)
        return (params,), loss
    if method in ("lsr", "lsr_plus"):
        params, loss = local_train_lsr(
            globals_[0], dataset, shard, cfg, hp, policy, stream, gamma_t,
            plus=(method == "lsr_plus"),
        )
        return (params,), loss
    if method == "sym_ce_lsr":
        params, loss = local_train_symce_lsr(
            globals_[0], dataset, shard, cfg, sp, hp, policy, stream, gamma_t
        )
        return (params,), loss
    if method in ("coteaching", "coteaching_lsr"):
        pa, pb, loss = local_train_coteaching(
            globals_[0], globals_[1], dataset, shard, cfg, ct, stream, round_idx,
            sharpen_hp=hp if method == "coteaching_lsr" else None,
        )
        return (pa, pb), loss
    raise ValueError(f"unknown method {method!r}")


def run_federation(
    cfg: FedConfig,
    train_set: LabeledDataset,
    shards: list,
    test_set: LabeledDataset,
    seed: "int | RngStream",
    hp: "LsrHyperParams | None" = None,
    sp: "SymCeParams | None" = None,
    ct: "CoteachingConfig | None" = None,
    policy: "AugmentPolicy | None" = None,
    record_history: bool = False,
) -> RunResult:
    """Run the full federated protocol and return per-round metrics.

    The reported mean_train_loss averages the selected clients' per-step
    batch losses; gamma_t records the warm-up schedule value whether or not
    the method consumes it. For the two-network method, test accuracy is the
    mean of the two networks' accuracies and both networks are aggregated
    separately across their client replicas.
    """
    if len(shards) != cfg.num_clients:
        raise ValueError(f"{len(shards)} shards for {cfg.num_clients} clients")
    stream = as_stream(seed)
    hp = hp if hp is not None else LsrHyperParams()
    sp = sp if sp is not None else SymCeParams()
    ct = ct if ct is not None else CoteachingConfig()
    policy = policy if policy is not None else AugmentPolicy()

    layer_sizes = [train_set.feature_dim, *cfg.hidden_layers, train_set.num_classes]
    twin = cfg.method in ("coteaching", "coteaching_lsr")
    if twin:
        globals_ = (
            init_params(layer_sizes, stream.child("init", 0)),
            init_params(layer_sizes, stream.child("init", 1)),
        )
    else:
        globals_ = (init_params(layer_sizes, stream.child("init", 0)),)

    metrics: list = []
    history: "list | None" = [] if record_history else None
    for t in range(cfg.rounds):
        selected = select_clients(cfg.num_clients, cfg.clients_per_round, stream.child("select", t))
        gamma_t = gamma_schedule(t, cfg.warmup_rounds, hp.gamma)

        def job(cid: int):
            return _train_one_client(
                cfg.method, globals_, train_set, shards[cid], cfg, hp, sp, ct,
                policy, stream.child("client", int(cid), t), t, gamma_t,
            )

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(job, selected))
        else:
            results = [job(cid) for cid in selected]

        sizes = [shards[cid].n_k for cid in selected]
        globals_ = tuple(
            aggregate([res[0][head] for res in results], sizes)
            for head in range(len(globals_))
        )
        if twin:
            acc = 0.5 * (evaluate(globals_[0], test_set) + evaluate(globals_[1], test_set))
        else:
            acc = evaluate(globals_[0], test_set)
        round_losses = [res[1] for res in results]
        metrics.append(
            RoundMetrics(
                round=t,
                test_accuracy=float(acc),
                mean_train_loss=_mean(round_losses),
                gamma_t=gamma_t,
                selected_clients=tuple(int(c) for c in selected),
            )
        )
        if history is not None:
            history.append(globals_ if twin else globals_[0])

    final = globals_ if twin else globals_[0]
    return RunResult(metrics=metrics, final_params=final, param_history=history)
