import numpy as np
import pytest

from arraynigp.kernel import Hyperparameters


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_hyper():
    return Hyperparameters(0.5, 1.0, 1e-3)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Record one verdict line per acceptance criterion (printed at the end)."""
    log = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        log[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for number in sorted(log):
            terminalreporter.write_line(log[number])
