import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# criterion number -> (title, outcomes of its tests)
_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")
    config.addinivalue_line("markers", "audit_last: run after every other test")


def pytest_collection_modifyitems(items):
    # the leakage audit inspects every trace the session produced, so it goes last
    items.sort(key=lambda it: it.get_closest_marker("audit_last") is not None)
    for it in items:
        m = it.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA.setdefault(m.args[0], [m.args[1], {}])[1][it.nodeid] = "not run"


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        outcomes = entry[1]
        if report.nodeid not in outcomes:
            continue
        if report.when == "call" or report.outcome != "passed":
            prev = outcomes[report.nodeid]
            if prev in ("not run", "passed"):
                outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[n]
        vals = set(outcomes.values())
        if vals <= {"passed"}:
            status = "PASS"
        elif "failed" in vals:
            status = "FAIL"
        elif vals <= {"skipped"}:
            status = "SKIP"
        else:
            status = "INCOMPLETE"
        terminalreporter.write_line(f"criterion {n}: {status:<10} {title}")
