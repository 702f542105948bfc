import os

import pytest
from hypothesis import HealthCheck, settings

from snlink import _backend

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and title")


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run the test once per available kernel backend."""
    previous = _backend.use_backend(request.param)
    yield request.param
    _backend.use_backend(previous)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    n, text = marker
    detail = dict(report.user_properties).get("measured")
    if detail:
        text = f"{text} [{detail}]"
    _CRITERIA[n] = (text, "PASS" if report.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {text}")
