import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def polar_angle(grid):
    return np.arctan2(grid.nodes[:, 1], grid.nodes[:, 0])


_ACCEPTANCE = pytest.StashKey[list]()


class CriterionRecorder:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, lines):
        self.lines = lines

    def check(self, number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        self.lines.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def criterion(request):
    return CriterionRecorder(request.config.stash.setdefault(_ACCEPTANCE, []))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call" or not rep.failed:
        return
    number, title = marker.args
    lines = item.config.stash.setdefault(_ACCEPTANCE, [])
    if not any(line.startswith(f"criterion {number:>2} ") for line in lines):
        lines.append(f"criterion {number:>2} FAIL  {title}  [{call.excinfo.typename}]")
