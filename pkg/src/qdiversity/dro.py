"""ERM, oracle group DRO, CVaR DRO, JTT and the Q-Diversity training loop.

Every trainer draws the predictor's initialization and minibatch order from
the same stream (``default_rng([seed, 0])``), so trainers that reduce to one
another produce identical trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffmodel as dm
from .assigner import (
    EMPTY_MASS,
    DegenerateAssignmentError,
    GroupAssignment,
    assign,
    assigner_loss_parts,
    assigner_width,
    phi_input,
    soft_memberships,
    weighted_group_means,
)
from .datasets import Dataset
from .mixing import EmptyMinorityError, MixSpec, build_mixed_groups

log = logging.getLogger(__name__)

METHODS = ("erm", "oracle_dro", "cvar", "jtt", "qdiv")
GROUP_MODES = ("gxy", "g", "oracle")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "qdiv"
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.5
    assigner_lr: float = 1.0
    q_step: float = 0.1
    beta: float = 1.0
    mix: MixSpec = field(default_factory=MixSpec)
    group_mode: str = "gxy"
    seed: int = 0
    arch: str = "linear"
    hidden: int = 32
    init_scale: float = 0.1
    cvar_alpha: float = 0.1
    jtt_epochs: int = 5
    jtt_upweight: float = 20.0
    assigner_steps: int = 5
    assigner_objective: str = "adversarial"
    assigner_interaction: bool = True
    assigner_prior: float = 0.1
    size_weight: float = 10.0
    warmup_epochs: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.group_mode not in GROUP_MODES:
            raise ValueError(f"group_mode must be one of {GROUP_MODES}, got {self.group_mode!r}")
        for name in ("lr", "assigner_lr", "q_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.cvar_alpha <= 1.0:
            raise ValueError(f"cvar_alpha must be in (0, 1], got {self.cvar_alpha}")
        if self.jtt_upweight < 1:
            raise ValueError(f"jtt_upweight must be >= 1, got {self.jtt_upweight}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0.0 < self.assigner_prior < 1.0:
            raise ValueError("assigner_prior must be in (0, 1)")
        if self.assigner_objective not in ("adversarial", "cooperative"):
            raise ValueError(f"unknown assigner objective {self.assigner_objective!r}")


@dataclass
class EpochRecord:
    avg_acc: float
    robust_acc: float
    group_losses: np.ndarray
    q: np.ndarray | None = None


@dataclass
class TrainResult:
    theta: dm.ModelParams
    history: list[EpochRecord]
    phi: dm.ModelParams | None = None
    assignment: GroupAssignment | None = None
    error_set: np.ndarray | None = None
    events: list[str] = field(default_factory=list)

    @property
    def q_trajectory(self) -> np.ndarray:
        return np.array([h.q for h in self.history])


# ---------------------------------------------------------------------------
# group losses and the q player


def _per_example_loss(theta, X, T) -> np.ndarray:
    return dm.per_example_ce(dm.forward(theta, X).probs, T)


def group_losses(theta, data: Dataset, group_ids: np.ndarray, m: int):
    """Mean loss within each group; returns ``(losses, empty_flags)``."""
    ell = _per_example_loss(theta, data.features, dm.as_soft_targets(data.labels, data.num_classes))
    return _hard_group_means(ell, group_ids, m)


def _hard_group_means(ell, group_ids, m):
    g = np.asarray(group_ids, dtype=int)
    if g.size and (g.min() < 0 or g.max() >= m):
        raise ValueError(f"group ids must lie in [0, {m})")
    sums = np.bincount(g, weights=ell, minlength=m)
    counts = np.bincount(g, minlength=m)
    empty = counts == 0
    return np.where(empty, 0.0, sums / np.maximum(counts, 1)), empty


def soft_group_losses(theta, data: Dataset, assignment: GroupAssignment, m: int):
    """Soft-membership-weighted group losses; ``m`` is 2 (``g``) or 2C (``gxy``)."""
    C = data.num_classes
    mode = "g" if m == 2 and C != 1 else "gxy"
    if m not in (2, 2 * C):
        raise ValueError(f"m must be 2 or {2 * C}, got {m}")
    ell = _per_example_loss(theta, data.features, dm.as_soft_targets(data.labels, C))
    W = soft_memberships(assignment.p_minority, data.labels, C, mode)
    means, _, empty = weighted_group_means(ell, W)
    return means, empty


def update_q(q: np.ndarray, losses: np.ndarray, q_step: float, active: np.ndarray | None = None) -> np.ndarray:
    """Exponentiated-gradient step ``q_j <- q_j exp(q_step * L_j)`` on the simplex.

    Inactive (empty) groups keep their mass unchanged.
    """
    q = np.asarray(q, dtype=float)
    L = np.asarray(losses, dtype=float)
    if not np.isfinite(L).all():
        raise ValueError("group losses must be finite")
    act = np.ones(len(q), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if not act.any():
        return q.copy()
    z = q_step * L[act]
    z -= z.max()
    w = q[act] * np.exp(z)
    if not w.sum() > 0:
        # every active weight has underflowed; nothing to redistribute
        return q.copy()
    out = q.copy()
    frozen_mass = q[~act].sum()
    out[act] = (1.0 - frozen_mass) * w / w.sum()
    return out


# ---------------------------------------------------------------------------
# evaluation


def evaluate(theta, data: Dataset):
    """Return ``(average accuracy, robust accuracy, per-group accuracy)``.

    Per-group accuracy is NaN for empty groups; robust accuracy is the
    minimum over nonempty groups.
    """
    if data.true_group is None:
        raise ValueError("evaluate needs ground-truth groups")
    pred = dm.forward(theta, data.features).logits.argmax(axis=1)
    correct = (pred == data.labels).astype(float)
    m = data.group_count
    counts = np.bincount(data.true_group, minlength=m)
    hits = np.bincount(data.true_group, weights=correct, minlength=m)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_group = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return float(correct.mean()), float(np.nanmin(per_group)), per_group


def _history_record(theta, data: Dataset, used_groups, m, q=None) -> EpochRecord:
    T = dm.as_soft_targets(data.labels, data.num_classes)
    ell = _per_example_loss(theta, data.features, T)
    if data.true_group is not None:
        avg, robust, _ = evaluate(theta, data)
    else:
        pred = dm.forward(theta, data.features).logits.argmax(axis=1)
        correct = pred == data.labels
        avg = float(correct.mean())
        robust = min(float(correct[data.labels == c].mean()) for c in np.unique(data.labels))
    if used_groups is None:
        losses = np.array([ell.mean()])
    else:
        losses, _ = _hard_group_means(ell[: len(used_groups)], used_groups, m)
    return EpochRecord(avg, robust, losses, None if q is None else q.copy())


# ---------------------------------------------------------------------------
# shared SGD machinery


def _streams(seed: int):
    return {name: np.random.default_rng([seed, k])
            for k, name in enumerate(("theta", "phi", "mix", "jtt"))}


def _init_theta(data: Dataset, cfg: TrainConfig, rng) -> dm.ModelParams:
    return dm.init_params(data.dim, data.num_classes, rng, cfg.arch, cfg.hidden, cfg.init_scale)


def _sgd_epoch(theta, X, T, weights, cfg: TrainConfig, rng, cvar_alpha: float | None = None):
    n = len(X)
    order = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        w = weights[idx]
        if cvar_alpha is not None:
            w = w * _cvar_weights(theta, X[idx], T[idx], cvar_alpha)
        if not w.sum() > 0:
            continue
        loss, _, g = dm.loss_and_grad(theta, X[idx], T[idx], w)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at batch starting {start}")
        theta = dm.sgd_step(theta, g, cfg.lr)
    return theta


def cvar_subset(per_example: np.ndarray, alpha: float) -> np.ndarray:
    """Indices of the ``ceil(alpha * n)`` highest losses (stable order on ties)."""
    k = math.ceil(alpha * len(per_example) - 1e-12)
    order = np.argsort(-per_example, kind="stable")
    return np.sort(order[:k])


def _cvar_weights(theta, Xb, Tb, alpha) -> np.ndarray:
    if alpha >= 1.0:
        return np.ones(len(Xb))
    ell = _per_example_loss(theta, Xb, Tb)
    w = np.zeros(len(Xb))
    w[cvar_subset(ell, alpha)] = 1.0 / alpha
    return w


def _log_groups(data: Dataset):
    if data.true_group is not None:
        return data.true_group, data.group_count
    return None, 1


# ---------------------------------------------------------------------------
# trainers


def _train_plain(data, cfg, weights, cvar_alpha=None, theta=None, rng=None, epochs=None):
    streams = _streams(cfg.seed)
    rng = streams["theta"] if rng is None else rng
    theta = _init_theta(data, cfg, rng) if theta is None else theta
    T = dm.as_soft_targets(data.labels, data.num_classes)
    groups, m = _log_groups(data)
    history = []
    for _ in range(cfg.epochs if epochs is None else epochs):
        theta = _sgd_epoch(theta, data.features, T, weights, cfg, rng, cvar_alpha)
        history.append(_history_record(theta, data, groups, m))
    return TrainResult(theta, history)


def train_erm(data: Dataset, cfg: TrainConfig) -> TrainResult:
    return _train_plain(data, cfg, np.ones(data.n))


def train_cvar(data: Dataset, cfg: TrainConfig) -> TrainResult:
    return _train_plain(data, cfg, np.ones(data.n), cvar_alpha=cfg.cvar_alpha)


def train_jtt(data: Dataset, cfg: TrainConfig) -> TrainResult:
    if not cfg.jtt_epochs < cfg.epochs:
        raise ValueError(f"jtt_epochs ({cfg.jtt_epochs}) must be < epochs ({cfg.epochs})")
    streams = _streams(cfg.seed)
    first = _train_plain(data, cfg, np.ones(data.n), rng=streams["jtt"], epochs=cfg.jtt_epochs)
    pred = dm.forward(first.theta, data.features).logits.argmax(axis=1)
    error_set = np.flatnonzero(pred != data.labels)
    events = []
    if error_set.size == 0:
        log.warning("JTT error set is empty; second stage is plain ERM")
        events.append("empty error set")
    w = np.ones(data.n)
    w[error_set] = cfg.jtt_upweight
    result = _train_plain(data, cfg, w, rng=streams["theta"])
    result.error_set = error_set
    result.events = events
    return result


def _dro_weights(group_ids, q, m):
    counts = np.bincount(group_ids, minlength=m)
    per_group = np.where(counts > 0, q / np.maximum(counts, 1), 0.0)
    return per_group[group_ids]


def train_oracle_dro(data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Group DRO on the annotated groups, with one q update per epoch."""
    if data.true_group is None:
        raise ValueError("oracle group DRO needs ground-truth groups")
    rng = _streams(cfg.seed)["theta"]
    theta = _init_theta(data, cfg, rng)
    m = data.group_count
    q = np.full(m, 1.0 / m)
    T = dm.as_soft_targets(data.labels, data.num_classes)
    history = []
    for _ in range(cfg.epochs):
        losses, empty = group_losses(theta, data, data.true_group, m)
        q = update_q(q, losses, cfg.q_step, active=~empty)
        theta = _sgd_epoch(theta, data.features, T, _dro_weights(data.true_group, q, m), cfg, rng)
        rec = _history_record(theta, data, data.true_group, m, q)
        rec.group_losses = losses
        history.append(rec)
    return TrainResult(theta, history)


def oracle_assignment(data: Dataset) -> tuple[GroupAssignment, np.ndarray]:
    """Minority = the smaller true group within each label.

    Also returns ``minority_cell[c]``, the true group id of label ``c``'s
    minority group.
    """
    counts = np.zeros((data.group_count, data.num_classes), dtype=int)
    np.add.at(counts, (data.true_group, data.labels), 1)
    cells = np.zeros(data.num_classes, dtype=int)
    for c in range(data.num_classes):
        present = np.flatnonzero(counts[:, c] > 0)
        cells[c] = present[np.argmin(counts[present, c])] if present.size else c
    is_min = data.true_group == cells[data.labels]
    # a label with a single group has no minority
    single = (counts > 0).sum(axis=0) <= 1
    is_min &= ~single[data.labels]
    return GroupAssignment.from_probs(is_min.astype(float)), cells


def _init_phi(data: Dataset, cfg: TrainConfig, rng) -> dm.ModelParams:
    width = assigner_width(data.dim, data.num_classes, cfg.assigner_interaction)
    phi = dm.init_params(width, 2, rng, "linear", init_scale=cfg.init_scale)
    (W, b), = phi.layers
    # start near the prior minority rate so the small group is the sensitive one
    b = b + np.array([math.log(cfg.assigner_prior / (1.0 - cfg.assigner_prior)), 0.0])
    return dm.ModelParams(((W, b),), "linear")


def _group_layout(data: Dataset, cfg: TrainConfig) -> int:
    if cfg.group_mode == "oracle":
        return data.group_count
    return 2 if cfg.group_mode == "g" else 2 * data.num_classes


def _estimated_groups(assignment: GroupAssignment, labels, C, mode) -> np.ndarray:
    if mode == "g":
        return assignment.hard.copy()
    return assignment.hard * C + labels


def train_qdiversity(data: Dataset, cfg: TrainConfig,
                     fixed_assignment: GroupAssignment | None = None) -> TrainResult:
    """Alternate assigner (modeling) and predictor (predicting) rounds.

    With ``group_mode="oracle"`` the assigner is replaced by the true groups.
    ``fixed_assignment`` freezes the estimated groups and skips the modeling
    round, which is how the loop is checked against oracle group DRO.
    """
    streams = _streams(cfg.seed)
    rng = streams["theta"]
    C = data.num_classes
    theta = _init_theta(data, cfg, rng)
    m = _group_layout(data, cfg)
    q = np.full(m, 1.0 / m)
    T_real = dm.as_soft_targets(data.labels, C)
    events: list[str] = []
    history = []

    oracle = cfg.group_mode == "oracle"
    if oracle:
        if data.true_group is None:
            raise ValueError("group_mode='oracle' needs ground-truth groups")
        assignment, cells = oracle_assignment(data)
        phi = None
    elif fixed_assignment is not None:
        if cfg.group_mode == "g":
            raise ValueError("a fixed assignment needs group_mode='gxy'")
        assignment, phi = fixed_assignment, None
        cells = np.arange(C)
    else:
        phi = _init_phi(data, cfg, streams["phi"])
        Z = phi_input(phi, data)
        cells = np.arange(C) if cfg.group_mode == "gxy" else np.zeros(C, dtype=int)

    for epoch in range(cfg.epochs):
        if oracle:
            real_groups = data.true_group
        else:
            if phi is not None:
                if epoch >= cfg.warmup_epochs:
                    phi = _modeling_round(phi, theta, data, Z, q, cfg, streams["phi"], events, epoch)
                assignment = assign(phi, data, Z)
            real_groups = _estimated_groups(assignment, data.labels, C, cfg.group_mode)

        X, T, groups = data.features, T_real, real_groups
        if cfg.mix.mix_fraction > 0:
            try:
                mixed = build_mixed_groups(data, assignment, cfg.mix, streams["mix"], cells)
                X = np.vstack([X, mixed.features])
                T = np.vstack([T, mixed.soft_labels])
                groups = np.concatenate([groups, mixed.group_ids])
            except EmptyMinorityError:
                events.append(f"epoch {epoch}: empty minority, mixing skipped")

        ell = _per_example_loss(theta, X, T)
        losses, empty = _hard_group_means(ell, groups, m)
        q = update_q(q, losses, cfg.q_step, active=~empty)
        weights = _dro_weights(groups, q, m)
        theta = _sgd_epoch(theta, X, T, weights, cfg, rng)
        rec = _history_record(theta, data, real_groups, m, q)
        rec.group_losses = losses
        history.append(rec)

    return TrainResult(theta, history, phi, assignment, events=events)


def _modeling_round(phi, theta, data, Z, q, cfg, rng, events, epoch):
    mode = "g" if cfg.group_mode == "g" else "gxy"
    ell = _per_example_loss(theta, data.features, dm.as_soft_targets(data.labels, data.num_classes))
    for _ in range(cfg.assigner_steps):
        try:
            _, g, p = assigner_loss_parts(phi, theta, data, q, cfg.beta, mode, cfg.assigner_objective,
                                          cfg.size_weight, cfg.assigner_prior, inputs=Z, losses=ell)
        except DegenerateAssignmentError:
            g = None
        if g is None or min(p.sum(), (1 - p).sum()) < EMPTY_MASS * data.n:
            log.warning("degenerate assignment at epoch %d; reinitializing assigner", epoch)
            events.append(f"epoch {epoch}: assigner reinitialized")
            return _init_phi(data, cfg, rng)
        phi = dm.sgd_step(phi, g, cfg.assigner_lr)
    return phi


TRAINERS = {
    "erm": train_erm,
    "oracle_dro": train_oracle_dro,
    "cvar": train_cvar,
    "jtt": train_jtt,
    "qdiv": train_qdiversity,
}


def train(data: Dataset, cfg: TrainConfig) -> TrainResult:
    return TRAINERS[cfg.method](data, cfg)
