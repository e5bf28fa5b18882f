import numpy as np
import pytest

from hypstab import build_grid

# criterion id -> [title, outcomes]
_CRITERIA: dict[str, list] = {}
_NODES: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA.setdefault(m.args[0], [m.args[1], []])
            _NODES[item.nodeid] = m.args[0]


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    cid = _NODES.get(report.nodeid)
    if cid is not None:
        _CRITERIA[cid][1].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c.split("-")[1])):
        title, outcomes = _CRITERIA[cid]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"{cid:6s} {status:8s} {title}")


@pytest.fixture
def unit_square():
    return build_grid([(0, 1), (0, 1)], [8, 8])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
