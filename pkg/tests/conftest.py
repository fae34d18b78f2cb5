from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "dmfm", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("dmfm")

# truth seed shared by every Monte Carlo check on the 8x8, rank-3 design;
# results depend on the single truth draw, see the project notes
STUDY_SEED = 1


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_stable(rng, n, radius):
    m = rng.standard_normal((n, n))
    return m * radius / np.max(np.abs(np.linalg.eigvals(m)))


def simulate_mar(rng, a1, a2, T, sigma=None, burn=100):
    """Plain MAR(1) recursion used as a test data source."""
    r1, r2 = a1.shape[0], a2.shape[0]
    n = r1 * r2
    chol = np.linalg.cholesky(np.eye(n) if sigma is None else sigma)
    f = np.zeros((r1, r2))
    out = np.empty((T, r1, r2))
    for t in range(T + burn):
        xi = (chol @ rng.standard_normal(n)).reshape(r2, r1).T
        f = a1 @ f @ a2.T + xi
        if t >= burn:
            out[t - burn] = f
    return out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
