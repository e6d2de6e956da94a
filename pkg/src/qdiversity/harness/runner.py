"""Run every (config, seed) cell of an experiment and summarize by method."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..datasets import GeneratorSpec, generate_biased, inject_label_noise, shift_testset
from ..dro import evaluate, train
from .config import ExperimentSpec, RunPlan

log = logging.getLogger(__name__)

# offsets keep the train, test and noise streams of one seed apart
TEST_OFFSET = 10_000
NOISE_OFFSET = 20_000


@dataclass(frozen=True)
class MetricsRow:
    method: str
    seed: int
    tag: str
    avg: float
    robust: float
    groups: tuple[float, ...]
    secs: float = 0.0
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class SummaryLine:
    method: str
    tag: str
    avg_median: float
    avg_min: float
    avg_max: float
    robust_median: float
    robust_min: float
    robust_max: float
    n_ok: int
    n_total: int


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[MetricsRow]
    summary: list[SummaryLine] = field(default_factory=list)
    models: dict = field(default_factory=dict)  # (method, seed, tag) -> theta, when kept

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def median(self, method: str, tag: str = "iid", metric: str = "robust") -> float:
        for s in self.summary:
            if s.method == method and s.tag == tag:
                return getattr(s, f"{metric}_median")
        raise KeyError((method, tag))


def train_data(gen: GeneratorSpec, seed: int, noise: float = 0.0):
    data = generate_biased(replace(gen, seed=gen.seed + seed))
    if noise > 0:
        data = inject_label_noise(data, noise, gen.seed + seed + NOISE_OFFSET)
    return data


def test_spec(gen: GeneratorSpec, seed: int, n_per_class: int) -> GeneratorSpec:
    return replace(gen, seed=gen.seed + seed + TEST_OFFSET, n_per_class=n_per_class)


def _run_one(spec: ExperimentSpec, plan: RunPlan, models: dict | None = None) -> list[MetricsRow]:
    t0 = time.perf_counter()
    tspec = test_spec(spec.generator, plan.seed, spec.test_per_class)
    try:
        data = train_data(spec.generator, plan.seed, plan.noise)
        theta = train(data, plan.cfg).theta
        if models is not None:
            models[(plan.name, plan.seed, plan.tag)] = theta
        evals = [(plan.tag, generate_biased(tspec))]
        if spec.tag == "shift_eval":
            evals += [(f"shift={k}", shift_testset(tspec, k)) for k in spec.shifts]
        out = []
        for tag, test in evals:
            avg, robust, per = evaluate(theta, test)
            out.append((tag, avg, robust, tuple(float(v) for v in per)))
    except Exception as exc:  # recorded, never dropped
        log.error("run %s seed %d failed: %s", plan.name, plan.seed, exc)
        secs = time.perf_counter() - t0
        return [MetricsRow(plan.name, plan.seed, plan.tag, math.nan, math.nan, (), secs,
                           f"{type(exc).__name__}: {exc}")]
    secs = time.perf_counter() - t0
    return [MetricsRow(plan.name, plan.seed, tag, avg, rob, per, secs) for tag, avg, rob, per in out]


def summarize(rows: list[MetricsRow]) -> list[SummaryLine]:
    """Median and min-max over successful seeds, one line per (method, tag)."""
    keys = list(dict.fromkeys((r.method, r.tag) for r in rows))
    out = []
    for method, tag in keys:
        cell = [r for r in rows if r.method == method and r.tag == tag]
        good = [r for r in cell if r.ok]
        if good:
            a = np.array([r.avg for r in good])
            b = np.array([r.robust for r in good])
            stats = (np.median(a), a.min(), a.max(), np.median(b), b.min(), b.max())
        else:
            stats = (math.nan,) * 6
        out.append(SummaryLine(method, tag, *(float(s) for s in stats), len(good), len(cell)))
    return out


def run_experiment(spec: ExperimentSpec, plans: list[RunPlan] | None = None,
                   keep_models: bool = False) -> ExperimentResult:
    """Runs execute in plan order, so a spec always yields the same rows."""
    rows: list[MetricsRow] = []
    models = {} if keep_models else None
    for plan in spec.plans() if plans is None else plans:
        rows.extend(_run_one(spec, plan, models))
    return ExperimentResult(spec, rows, summarize(rows), models or {})
