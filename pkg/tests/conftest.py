import numpy as np
import pytest

from qdiversity.datasets import Dataset


def central_diff(f, vec, eps=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    out = np.empty_like(vec)
    for k in range(vec.size):
        e = np.zeros_like(vec)
        e[k] = eps
        out[k] = (f(vec + e) - f(vec - e)) / (2 * eps)
    return out


def assert_grad_close(analytic, numeric, rel=1e-4, abs_floor=1e-7):
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (err <= rel * scale) | (err <= abs_floor)
    assert ok.all(), f"max rel err {np.max(err / np.maximum(scale, 1e-300))}"


def tiny_dataset(rng, n=30, d=3, C=2, groups=True):
    X = rng.standard_normal((n, d))
    y = rng.integers(0, C, size=n)
    if not groups:
        return Dataset(X, y, C)
    a = rng.integers(0, 2, size=n)
    return Dataset(X, y, C, a * C + y, a, 2 * C)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA: list[str] = []


def record_criterion(number, passed: bool, detail: str) -> None:
    """Log one acceptance line; the terminal summary repeats them all."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
