import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def gaussian_mixture(seed, n=500, dim=5, k=3, sep=4.0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, sep, (k, dim))
    lab = rng.integers(0, k, n)
    return centers[lab] + rng.normal(0.0, 1.0, (n, dim)), lab


def two_clusters(seed, n=400, sep=10.0):
    """Two isotropic 2-D Gaussian blobs of unit sigma, centres ``sep`` apart."""
    rng = np.random.default_rng(seed)
    lab = np.repeat([0, 1], n // 2)
    pts = rng.normal(0.0, 1.0, (n, 2))
    pts[lab == 1, 0] += sep
    return pts, lab
