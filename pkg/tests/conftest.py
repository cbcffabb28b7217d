import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("doalab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("doalab")


def random_psd(rng, M, rank=None):
    """Random Hermitian PSD matrix of the given rank (full rank by default)."""
    rank = M if rank is None else rank
    G = rng.standard_normal((M, rank)) + 1j * rng.standard_normal((M, rank))
    return G @ G.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
