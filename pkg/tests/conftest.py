import numpy as np
import pytest

from bbvilab.family import ScaleKind, VarParams
from bbvilab.targets import GaussianTarget


def random_target(rng, d, spread=2.0):
    """Gaussian with a random SPD covariance and random mean."""
    a = rng.standard_normal((d, d))
    cov = a @ a.T / d + np.diag(rng.uniform(0.3, spread, d))
    return GaussianTarget.from_covariance(rng.standard_normal(d), cov)


def random_params(rng, d, kind, floor=0.3):
    kind = ScaleKind(kind)
    m = rng.standard_normal(d)
    diag = floor + rng.uniform(0.0, 1.5, d)
    if kind is ScaleKind.MEAN_FIELD:
        return VarParams(m, diag, kind)
    C = np.tril(0.4 * rng.standard_normal((d, d)), -1) + np.diag(diag)
    return VarParams(m, C, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.setdefault(number, []).append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[number]:
            terminalreporter.write_line(line)
