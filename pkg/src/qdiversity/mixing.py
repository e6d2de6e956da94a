"""Cross-group mixup that always pairs with a minority example."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmodel import as_soft_targets

MAJ_MIN = "maj_min"
MIN_MIN = "min_min"


class EmptyMinorityError(ValueError):
    pass


@dataclass(frozen=True)
class MixSpec:
    alpha: float = 9.0
    mix_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise ValueError(f"mix_fraction must be in [0, 1], got {self.mix_fraction}")


@dataclass(frozen=True)
class MixedBatch:
    features: np.ndarray
    soft_labels: np.ndarray
    group_ids: np.ndarray
    src_i: np.ndarray
    src_j: np.ndarray
    coef_i: np.ndarray  # weight on x_i; x_j gets 1 - coef_i
    kinds: np.ndarray

    def __len__(self) -> int:
        return len(self.group_ids)


def _open_unit(lam):
    lo, hi = np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)
    return np.clip(lam, lo, hi)


def sample_lambda(alpha: float, rng: np.random.Generator, size=None):
    """Draw from Beta(alpha, alpha), kept strictly inside (0, 1)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    lam = _open_unit(rng.beta(alpha, alpha, size=size))
    return float(lam) if size is None else lam


def effective_coef(lam, kind):
    """Coefficient on ``x_i``; majority-minority pairs give x_i the smaller share."""
    lam = np.asarray(lam, dtype=float)
    return np.where(np.asarray(kind) == MAJ_MIN, np.minimum(lam, 1.0 - lam), lam)


def mix_pair(xi, yi, xj, yj, lam: float, kind: str):
    if kind not in (MAJ_MIN, MIN_MIN):
        raise ValueError(f"unknown pairing {kind!r}")
    c = float(effective_coef(lam, kind))
    xi, yi, xj, yj = (np.asarray(v, dtype=float) for v in (xi, yi, xj, yj))
    return c * xi + (1.0 - c) * xj, c * yi + (1.0 - c) * yj


def build_mixed_groups(data, assignment, spec: MixSpec, rng: np.random.Generator | None = None,
                       minority_cell=None) -> MixedBatch:
    """Mix ``round(mix_fraction * n)`` pairs ``(i from all data, j from minority)``.

    Each mixed row is assigned to the minority cell of its argmax soft label;
    ``minority_cell[c]`` maps label ``c`` to a group id (identity by default,
    matching the ``g_hat * C + y`` layout).
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    C = data.num_classes
    k = int(round(spec.mix_fraction * data.n))
    if k == 0:
        d = data.dim
        empty_i = np.zeros(0, dtype=int)
        return MixedBatch(np.zeros((0, d)), np.zeros((0, C)), empty_i, empty_i, empty_i,
                          np.zeros(0), np.zeros(0, dtype=object))
    minority = assignment.minority_idx
    if minority.size == 0:
        raise EmptyMinorityError("no example is assigned to the minority group")
    src_i = rng.integers(0, data.n, size=k)
    src_j = minority[rng.integers(0, minority.size, size=k)]
    if minority.size > 1:
        # a row mixed with itself adds no new point
        same = np.flatnonzero(src_i == src_j)
        while same.size:
            src_j[same] = minority[rng.integers(0, minority.size, size=same.size)]
            same = same[src_i[same] == src_j[same]]
    lam = sample_lambda(spec.alpha, rng, size=k)
    kinds = np.where(assignment.hard[src_i] == 1, MAJ_MIN, MIN_MIN).astype(object)
    c = effective_coef(lam, kinds)
    Y = as_soft_targets(data.labels, C)
    X = c[:, None] * data.features[src_i] + (1.0 - c)[:, None] * data.features[src_j]
    T = c[:, None] * Y[src_i] + (1.0 - c)[:, None] * Y[src_j]
    cells = np.arange(C) if minority_cell is None else np.asarray(minority_cell)
    groups = cells[T.argmax(axis=1)]
    return MixedBatch(X, T, groups, src_i, src_j, c, kinds)
