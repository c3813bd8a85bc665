import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from gazescrnn._accel import HAVE_NUMBA, backend_scope

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def kernel_backend(request):
    with backend_scope(request.param):
        yield request.param


# ----------------------------------------------------------------------------
# acceptance criteria report: one PASS/FAIL line per criterion
# ----------------------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        passed = rep.passed and not rep.skipped
        prev = _CRITERIA.get(num, (title, True, []))
        details = prev[2] + [str(v) for k, v in rep.user_properties if k == "detail"]
        _CRITERIA[num] = (title, prev[1] and passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {title}")
        for d in details:
            terminalreporter.write_line(f"              {d}")
