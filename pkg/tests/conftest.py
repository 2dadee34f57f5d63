import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("petra", deadline=None, max_examples=40, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("petra")


class Split:
    """Minimal train/val container accepted by ``train``."""

    def __init__(self, x_train, y_train, x_val=None, y_val=None):
        self.x_train, self.y_train = x_train, y_train
        self.x_val = x_train if x_val is None else x_val
        self.y_val = y_train if y_val is None else y_val
        self.x_test, self.y_test = self.x_val, self.y_val

    @property
    def input_shape(self):
        return tuple(self.x_train.shape[1:])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------------ acceptance summary
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    _, ok = _CRITERIA.get(n, (title, True))
    _CRITERIA[n] = (title, ok and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
