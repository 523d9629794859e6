import warnings

import numpy as np
import pytest

from stochdbp.channel import AliasingWarning
from stochdbp.modem import get_constellation
from stochdbp.signal import make_rrc_pulse

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    # a fixture error never reaches the call phase but is still a failure
    if rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _ACCEPTANCE[number] = (status, title, detail, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail, dt = _ACCEPTANCE[number]
        line = f"[{status}] {number:>2}. {title} ({dt:.1f} s)"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def qpsk():
    return get_constellation("qpsk")


@pytest.fixture(scope="session")
def qam16():
    return get_constellation("16qam")


@pytest.fixture(scope="session")
def pulse():
    return make_rrc_pulse(0.25, 16, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet_aliasing():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AliasingWarning)
        yield
