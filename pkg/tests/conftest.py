import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_ball_rows(rng, n, p, bias=1.0):
    """Bias-augmented rows with total norm <= 1: first coordinate ``bias`` before scaling."""
    raw = rng.standard_normal((n, p))
    X = np.hstack([np.full((n, 1), bias), raw])
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.maximum(norms.max(), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def report(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
