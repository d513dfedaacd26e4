from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(20240131)


@pytest.fixture
def data_dir():
    return DATA


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            n, title = marker.args
            item.user_properties.extend([("criterion", n), ("title", title)])


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        _CRITERIA[props["criterion"]] = (props["title"], report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {n:>2} {verdict}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
