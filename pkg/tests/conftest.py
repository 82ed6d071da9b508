import numpy as np
import pytest


def random_spd(rng, n, cond=1e3):
    """SPD matrix with log-uniform spectrum and condition number ``cond``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), n))
    if n > 1:
        w[0], w[-1] = 1.0, cond
    g = (q * w) @ q.T
    return 0.5 * (g + g.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def spd_factory():
    return random_spd


# ---------------------------------------------------------------- acceptance lines

_CRITERIA = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail
        if exc_type is not None:
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            detail = f"{detail}; {msg}" if detail else msg
        line = f"{status} criterion {self.number}: {self.title}"
        if detail:
            line += f" ({detail})"
        _CRITERIA.append((self.number, line))
        print(line)
        return False


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line for an acceptance criterion."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda kv: kv[0]):
            terminalreporter.write_line(line)
