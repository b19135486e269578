import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, k, cond=None):
    A = rng.standard_normal((k, k))
    if cond is None:
        return A.T @ A + np.eye(k)
    Q, _ = np.linalg.qr(A)
    return Q @ np.diag(np.geomspace(1.0, cond, k)) @ Q.T


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[number])
