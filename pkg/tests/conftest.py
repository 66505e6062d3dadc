import numpy as np
import pytest

from coloredshe.kernel import cached_riesz_coefficients
from coloredshe.rng import RngSpec


@pytest.fixture(scope="session")
def kernel_small():
    """gamma = 0.5 with 256 modes: cheap and enough for most checks."""
    return cached_riesz_coefficients(0.5, 256)


@pytest.fixture(scope="session")
def kernel_4096():
    return cached_riesz_coefficients(0.5, 4096)


@pytest.fixture
def rng():
    return RngSpec(12345)


def z_score(estimate, target, se):
    return abs(estimate - target) / se if se > 0 else (0.0 if estimate == target else np.inf)


ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Append a ``PASS``/``FAIL`` line for an acceptance criterion."""

    def _record(number, ok, detail):
        ACCEPTANCE_LINES.append((number, f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"))
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
