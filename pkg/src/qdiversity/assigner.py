"""Parameterized group assigner and the label-balance regularizer.

The assigner is a two-class model over (features, label). Output class 0 is
the minority group (``g_hat = 0``) and class 1 the majority group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmodel import DimensionError, ModelParams, backprop, forward, per_example_ce, as_soft_targets

EMPTY_MASS = 1e-9


class DegenerateAssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class GroupAssignment:
    p_minority: np.ndarray
    hard: np.ndarray  # 1 = majority

    @classmethod
    def from_probs(cls, p_minority: np.ndarray) -> "GroupAssignment":
        p = np.asarray(p_minority, dtype=float)
        # ties go to the majority
        return cls(p, (p <= 0.5).astype(int))

    @property
    def minority_idx(self) -> np.ndarray:
        return np.flatnonzero(self.hard == 0)


def assigner_input(features: np.ndarray, labels: np.ndarray, num_classes: int,
                   interaction: bool = True) -> np.ndarray:
    """Rows of ``[x, onehot(y)]`` or, with interaction, ``[x (x) onehot(y), onehot(y)]``.

    The interaction form lets a linear assigner use a different direction
    for each label, which "attribute disagrees with label" needs.
    """
    Y = as_soft_targets(labels, num_classes)
    X = np.asarray(features, dtype=float)
    if not interaction:
        return np.hstack([X, Y])
    outer = (Y[:, :, None] * X[:, None, :]).reshape(len(X), -1)
    return np.hstack([outer, Y])


def assigner_width(dim: int, num_classes: int, interaction: bool = True) -> int:
    return dim * num_classes + num_classes if interaction else dim + num_classes


def phi_input(phi: ModelParams, data) -> np.ndarray:
    d, C = data.dim, data.num_classes
    if phi.in_dim == assigner_width(d, C, interaction=False):
        return assigner_input(data.features, data.labels, C, interaction=False)
    if phi.in_dim == assigner_width(d, C, interaction=True):
        return assigner_input(data.features, data.labels, C, interaction=True)
    raise DimensionError(
        f"expected assigner input width {d + C} (concat) or {d * C + C} (interaction), got {phi.in_dim}")


def assign(phi: ModelParams, data, inputs: np.ndarray | None = None) -> GroupAssignment:
    """Soft and hard group labels; ``inputs`` may carry a cached ``phi_input``."""
    if phi.num_classes != 2:
        raise DimensionError(f"expected a two-class assigner, got {phi.num_classes} outputs")
    pred = forward(phi, phi_input(phi, data) if inputs is None else inputs)
    return GroupAssignment.from_probs(pred.probs[:, 0])


def conditional_label_marginals(assignment: GroupAssignment, labels: np.ndarray,
                                num_classes: int | None = None):
    """Bayes-rule label marginals inside each estimated group.

    Returns ``(P(y | majority), P(y | minority), P(y))``.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DegenerateAssignmentError("no examples")
    C = num_classes or int(labels.max()) + 1
    Y = as_soft_targets(labels, C)
    p_min = np.asarray(assignment.p_minority, dtype=float)
    p_maj = 1.0 - p_min
    s_maj, s_min = p_maj.sum(), p_min.sum()
    if s_maj <= 0 or s_min <= 0:
        raise DegenerateAssignmentError(
            f"all soft mass in one group (majority mass {s_maj:.3g}, minority mass {s_min:.3g})")
    return p_maj @ Y / s_maj, p_min @ Y / s_min, Y.mean(axis=0)


def _kl(p: np.ndarray, ref: np.ndarray) -> float:
    if ((p > 0) & (ref <= 0)).any():
        raise ValueError("KL undefined: conditional mass on a class absent from P(y)")
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / ref[nz])))


def balance_loss(marginals) -> float:
    p_maj, p_min, p_y = (np.asarray(m, dtype=float) for m in marginals)
    return _kl(p_maj, p_y) + _kl(p_min, p_y)


def soft_memberships(p_minority: np.ndarray, labels: np.ndarray, num_classes: int,
                     mode: str = "gxy") -> np.ndarray:
    """Soft membership matrix ``[n x m]``.

    ``gxy`` uses ``m = 2C`` cells with id ``g_hat * C + y``; ``g`` uses the
    two estimated groups only.
    """
    p = np.asarray(p_minority, dtype=float)
    if mode == "g":
        return np.column_stack([p, 1.0 - p])
    if mode == "gxy":
        Y = as_soft_targets(labels, num_classes)
        return np.hstack([p[:, None] * Y, (1.0 - p)[:, None] * Y])
    raise ValueError(f"unknown group mode {mode!r}")


def weighted_group_means(per_example: np.ndarray, weights: np.ndarray):
    """Per-column weighted means; columns with mass < 1e-9 are flagged empty."""
    mass = weights.sum(axis=0)
    empty = mass < EMPTY_MASS
    means = np.where(empty, 0.0, (weights.T @ per_example) / np.where(empty, 1.0, mass))
    return means, mass, empty


def assigner_loss(phi: ModelParams, theta: ModelParams, data, q: np.ndarray, beta: float,
                  mode: str = "gxy", objective: str = "adversarial",
                  size_weight: float = 0.0, size_prior: float = 0.1,
                  inputs: np.ndarray | None = None, losses: np.ndarray | None = None):
    """Assigner objective and its gradient w.r.t. ``phi``.

    loss = sign * sum_g q_g * L_g(soft groups) + beta * L_bal + size term,
    with ``sign = -1`` for the adversarial objective (the assigner seeks the
    worst-off grouping) and ``+1`` for the cooperative one. The size term is
    ``size_weight * KL(Bern(mean p_min) || Bern(size_prior))``; without it
    the adversarial optimum shrinks the minority to a few outliers. The
    predictor is frozen; gradients flow through the soft memberships only.
    ``inputs`` and ``losses`` let callers reuse the assigner features and
    the frozen predictor's per-example losses across steps.
    """
    loss, g, _ = assigner_loss_parts(phi, theta, data, q, beta, mode, objective,
                                     size_weight, size_prior, inputs, losses)
    return loss, g


def assigner_loss_parts(phi, theta, data, q, beta, mode="gxy", objective="adversarial",
                        size_weight=0.0, size_prior=0.1, inputs=None, losses=None):
    """``assigner_loss`` plus the soft minority probabilities it evaluated."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    sign = {"adversarial": -1.0, "cooperative": 1.0}[objective]
    C = data.num_classes
    Z = phi_input(phi, data) if inputs is None else inputs
    probs = forward(phi, Z).probs
    p = probs[:, 0]
    if losses is None:
        losses = per_example_ce(forward(theta, data.features).probs, as_soft_targets(data.labels, C))
    ell = losses

    W = soft_memberships(p, data.labels, C, mode)
    means, mass, empty = weighted_group_means(ell, W)
    q = np.asarray(q, dtype=float)
    if len(q) != W.shape[1]:
        raise DimensionError(f"expected {W.shape[1]} group weights, got {len(q)}")
    group_term = float(q @ means)

    # d(mean_g)/d(w_ig) = (ell_i - mean_g) / mass_g
    safe_mass = np.where(empty, 1.0, mass)
    dmean_dw = np.where(empty[None, :], 0.0, (ell[:, None] - means[None, :]) / safe_mass[None, :])
    if mode == "g":
        dw_dp = np.column_stack([np.ones_like(p), -np.ones_like(p)])
    else:
        Y = as_soft_targets(data.labels, C)
        dw_dp = np.hstack([Y, -Y])
    dgroup_dp = (dmean_dw * dw_dp) @ q

    marg = conditional_label_marginals(GroupAssignment.from_probs(p), data.labels, C)
    bal = balance_loss(marg)
    dbal_dp = _balance_grad_p(p, data.labels, C, marg)

    loss = sign * group_term + beta * bal
    dL_dp = sign * dgroup_dp + beta * dbal_dp
    if size_weight > 0:
        size, dsize = _size_term(p, size_prior)
        loss += size_weight * size
        dL_dp = dL_dp + size_weight * dsize
    # p = softmax(z)[0]
    dp_dz = p * (1.0 - p)
    dlogits = np.column_stack([dL_dp * dp_dz, -dL_dp * dp_dz])
    return loss, backprop(phi, Z, dlogits), p


def _balance_grad_p(p, labels, C, marginals) -> np.ndarray:
    p_maj_y, p_min_y, p_y = marginals
    Y = as_soft_targets(labels, C)
    tiny = np.finfo(float).tiny
    # d KL(P || ref) / d P_c = log(P_c / ref_c) + 1
    seen = p_y > 0
    ref = np.where(seen, p_y, 1.0)
    g_maj = np.where(seen, np.log(np.maximum(p_maj_y, tiny) / ref) + 1.0, 0.0)
    g_min = np.where(seen, np.log(np.maximum(p_min_y, tiny) / ref) + 1.0, 0.0)
    s_maj, s_min = (1.0 - p).sum(), p.sum()
    d_min = ((Y - p_min_y) @ g_min) / s_min
    d_maj = -((Y - p_maj_y) @ g_maj) / s_maj
    return d_min + d_maj


def _size_term(p: np.ndarray, prior: float):
    """Bernoulli KL of the mean minority mass from ``prior`` and its gradient."""
    pi = float(np.clip(p.mean(), 1e-12, 1 - 1e-12))
    kl = pi * np.log(pi / prior) + (1 - pi) * np.log((1 - pi) / (1 - prior))
    dkl = np.log(pi / prior) - np.log((1 - pi) / (1 - prior))
    return float(kl), np.full_like(p, dkl / len(p))
