"""Per-group classification margins of a linear predictor."""

from __future__ import annotations

import numpy as np

from ..assigner import GroupAssignment
from ..diffmodel import ModelParams
from ..dro import oracle_assignment


class UnsupportedArchitectureError(TypeError):
    pass


def signed_margins(theta: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Distance to the nearest competing class boundary, negative when misclassified."""
    if theta.arch != "linear" or len(theta.layers) != 1:
        raise UnsupportedArchitectureError(f"margin probe needs a linear predictor, got {theta.arch!r}")
    (W, b), = theta.layers
    logits = features @ W.T + b
    n, C = logits.shape
    out = np.full(n, np.inf)
    for c in range(C):
        other = labels != c
        dw = W[labels[other]] - W[c]
        dist = (logits[other, labels[other]] - logits[other, c]) / np.linalg.norm(dw, axis=1)
        out[other] = np.minimum(out[other], dist)
    return out


def margin_probe(theta: ModelParams, data, assignment: GroupAssignment | None = None):
    """``(majority margin, minority margin)``: the minimum signed distance in each group.

    Groups come from ``assignment`` when given, else from the true groups
    (minority = the smaller group within each label).
    """
    if assignment is None:
        if data.true_group is None:
            raise ValueError("margin probe needs an assignment or ground-truth groups")
        assignment, _ = oracle_assignment(data)
    s = signed_margins(theta, data.features, data.labels)
    maj, mino = s[assignment.hard == 1], s[assignment.hard == 0]
    if maj.size == 0 or mino.size == 0:
        raise ValueError("both groups must be nonempty")
    return float(maj.min()), float(mino.min())
