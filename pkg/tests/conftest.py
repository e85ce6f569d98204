import numpy as np
import pytest

from tdlab.analysis import CounterExampleParams, counterexample_build


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def counterexample():
    """Factory: counterexample(eps, gamma, d1) -> (mrp, phi, d)."""
    def build(epsilon=0.1, gamma=0.95, d1=0.5):
        return counterexample_build(CounterExampleParams(epsilon, gamma, d1))
    return build


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
