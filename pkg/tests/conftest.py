import numpy as np
import pytest

from hflprune.data import synth_dataset
from hflprune.trainer import Network


@pytest.fixture
def small_net():
    return Network(input_dim=4, feature_widths=(5,), fc_widths=(6, 3))


@pytest.fixture
def blobs():
    return synth_dataset(classes=3, dim=4, per_class=20, separation=3.0, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion, reported in the summary")
    config._acceptance_lines = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if report.passed else "FAIL"
    line = f"criterion {number:>2} {status}  {title}"
    if detail:
        line += f"  [{detail}]"
    lines = item.config._acceptance_lines
    if status == "FAIL" or number not in lines:
        lines[number] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config._acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
