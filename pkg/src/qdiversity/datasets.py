"""Synthetic spurious-correlation data, label noise, shift sets and CSV I/O.

Group ids follow ``group = attr * num_classes + label`` everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    true_group: np.ndarray | None = None
    spurious_attr: np.ndarray | None = None
    group_count: int = 0

    def __post_init__(self):
        n = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features have shape {self.features.shape}, expected ({n}, d)")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")
        for name in ("true_group", "spurious_attr"):
            col = getattr(self, name)
            if col is not None and len(col) != n:
                raise DatasetError(f"{name} has length {len(col)}, expected {n}")
        if self.true_group is not None:
            if self.group_count <= 0:
                object.__setattr__(self, "group_count", int(self.true_group.max()) + 1 if n else 1)
            if n and (self.true_group.min() < 0 or self.true_group.max() >= self.group_count):
                raise DatasetError(f"true_group must lie in [0, {self.group_count})")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.features[idx], self.labels[idx], self.num_classes,
                       pick(self.true_group), pick(self.spurious_attr), self.group_count)

    def equals(self, other: "Dataset") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)
        return (self.num_classes == other.num_classes
                and self.group_count == other.group_count
                and same(self.features, other.features)
                and same(self.labels, other.labels)
                and same(self.true_group, other.true_group)
                and same(self.spurious_attr, other.spurious_attr))


@dataclass(frozen=True)
class GeneratorSpec:
    """Two-class data with a core block and an additive spurious block.

    ``bias_rate`` is the probability that a label-0 example carries the
    spurious offset; label-1 examples carry it with ``1 - bias_rate``.

    The defaults put the label signal in many weak core coordinates and a
    single strong spurious one, so a linear model separates the training
    set through the spurious offset long before it uses the core.
    """

    n_per_class: int = 2000
    d_core: int = 200
    d_sp: int = 1
    bias_rate: float = 0.95
    core_strength: float = 0.0085
    spurious_strength: float = 4.0
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bias_rate <= 1.0:
            raise DatasetError(f"bias_rate must be in [0, 1], got {self.bias_rate}")
        if self.d_core < 1 or self.d_sp < 1:
            raise DatasetError("d_core and d_sp must be >= 1")
        if self.noise < 0:
            raise DatasetError(f"noise must be >= 0, got {self.noise}")
        if self.n_per_class < 1:
            raise DatasetError("n_per_class must be >= 1")


def generate_biased(spec: GeneratorSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_per_class
    labels = np.repeat([0, 1], n)
    p_attr = np.where(labels == 0, spec.bias_rate, 1.0 - spec.bias_rate)
    attr = (rng.random(2 * n) < p_attr).astype(int)
    sign = 2.0 * labels - 1.0
    core = sign[:, None] * spec.core_strength + spec.noise * rng.standard_normal((2 * n, spec.d_core))
    sp = attr[:, None] * spec.spurious_strength + spec.noise * rng.standard_normal((2 * n, spec.d_sp))
    order = rng.permutation(2 * n)
    X = np.hstack([core, sp])[order]
    y, a = labels[order], attr[order]
    return Dataset(X, y, 2, a * 2 + y, a, group_count=4)


def shift_testset(spec: GeneratorSpec, shift: str) -> Dataset:
    if shift == "attr_flip":
        return generate_biased(replace(spec, bias_rate=1.0 - spec.bias_rate))
    if shift == "attr_balance":
        return generate_biased(replace(spec, bias_rate=0.5))
    if shift == "core_only":
        data = generate_biased(spec)
        X = data.features.copy()
        X[:, spec.d_core:] = 0.0
        return replace(data, features=X)
    raise DatasetError(f"unknown shift {shift!r}; expected attr_flip, attr_balance or core_only")


def inject_label_noise(data: Dataset, flip_rate: float, seed: int) -> Dataset:
    if not 0.0 <= flip_rate <= 0.5:
        raise DatasetError(f"flip_rate must be in [0, 0.5], got {flip_rate}")
    rng = np.random.default_rng(seed)
    C = data.num_classes
    flip = rng.random(data.n) < flip_rate
    # uniform over the C-1 other classes
    offset = rng.integers(1, C, size=data.n) if C > 1 else np.zeros(data.n, dtype=int)
    labels = np.where(flip, (data.labels + offset) % C, data.labels)
    group = data.true_group
    if data.spurious_attr is not None:
        group = data.spurious_attr * C + labels
    elif group is not None:
        group = (group // C) * C + labels
    return replace(data, labels=labels, true_group=group)


def group_counts(data: Dataset, assignment=None) -> np.ndarray:
    """Contingency table ``counts[group, label]``.

    With an assignment, groups are the assigner's hard labels (0 = minority).
    """
    if assignment is not None:
        groups, m = np.asarray(assignment.hard), 2
    elif data.true_group is not None:
        groups, m = data.true_group, data.group_count
    else:
        raise DatasetError("group_counts needs true_group or an assignment")
    counts = np.zeros((m, data.num_classes), dtype=int)
    np.add.at(counts, (groups, data.labels), 1)
    return counts


def split(data: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> list[Dataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    bounds = np.round(np.cumsum(fractions) / sum(fractions) * data.n).astype(int)
    parts, start = [], 0
    for stop in bounds:
        parts.append(data.subset(np.sort(order[start:stop])))
        start = stop
    return parts


@dataclass(frozen=True)
class CsvSchema:
    label: str = "label"
    group: str | None = "group"
    attr: str | None = "attr"
    features: tuple[str, ...] | None = None
    num_classes: int | None = None
    group_count: int | None = None


def write_csv(data: Dataset, path: str | Path) -> None:
    header = [f"feat_{j}" for j in range(data.dim)] + ["label"]
    extra = [c for c, col in (("group", data.true_group), ("attr", data.spurious_attr)) if col is not None]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + extra)
        for i in range(data.n):
            row = [format(float(v), ".17g") for v in data.features[i]] + [int(data.labels[i])]
            if data.true_group is not None:
                row.append(int(data.true_group[i]))
            if data.spurious_attr is not None:
                row.append(int(data.spurious_attr[i]))
            w.writerow(row)


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise DatasetError(f"{path}: no data rows")
    col = {name: j for j, name in enumerate(header)}
    feat_names = list(schema.features) if schema.features else [h for h in header if h.startswith("feat_")]
    needed = [schema.label] + feat_names
    for name in needed:
        if name not in col:
            raise DatasetError(f"{path}: missing column {name!r}")
    if not feat_names:
        raise DatasetError(f"{path}: no feature columns")

    def cell(r, line, name, conv):
        raw = r[col[name]] if col[name] < len(r) else ""
        try:
            return conv(raw)
        except ValueError:
            raise DatasetError(f"{path}: row {line}, column {name!r}: cannot parse {raw!r}") from None

    X = np.empty((len(body), len(feat_names)))
    y = np.empty(len(body), dtype=int)
    opt = {k: getattr(schema, k) for k in ("group", "attr") if getattr(schema, k) and getattr(schema, k) in col}
    cols = {k: np.empty(len(body), dtype=int) for k in opt}
    for i, r in enumerate(body):
        line = i + 2
        for j, name in enumerate(feat_names):
            X[i, j] = cell(r, line, name, float)
        y[i] = cell(r, line, schema.label, int)
        for k, name in opt.items():
            cols[k][i] = cell(r, line, name, int)
    C = schema.num_classes or int(y.max()) + 1
    group = cols.get("group")
    attr = cols.get("attr")
    if schema.group_count:
        m = schema.group_count
    elif attr is not None:
        m = 2 * C
    else:
        m = int(group.max()) + 1 if group is not None else 0
    return Dataset(X, y, C, group, attr, m)
