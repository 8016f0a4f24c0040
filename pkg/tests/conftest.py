import pytest

from mhmm.hmm import HmmModel

_ACCEPTANCE = {}


def pytest_addoption(parser):
    parser.addoption("--kaggle-dir", default=None,
                     help="directory with corpus.csv and targets.txt from the original competition")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None and (report.when == "call" or report.outcome != "passed"):
        number, title = marker.args
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[number] = f"criterion {number}: {outcome:4}  {title}"
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])


@pytest.fixture
def kaggle_dir(request):
    return request.config.getoption("--kaggle-dir")


@pytest.fixture
def two_state():
    """Small fully specified model used with the path-enumeration oracle."""
    return HmmModel(
        pi=[0.6, 0.4],
        trans=[[0.7, 0.3], [0.4, 0.6]],
        emit=[[0.9, 0.1], [0.2, 0.8]],
    )
