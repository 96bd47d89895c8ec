import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_outcomes: dict[int, list[tuple[str, str]]] = {}
_titles: dict[int, str] = {}


def pytest_addoption(parser):
    parser.addoption("--full-grid", action="store_true",
                     help="run the heuristic decoding check on every length-5 vector pair (about 90 s)")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one of the numbered acceptance criteria")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    _titles[number] = title
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(number, []).append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        status = "PASS" if all(o == "passed" for _, o in results) else "FAIL"
        if any(o == "skipped" for _, o in results) and status == "FAIL" and \
                all(o in ("passed", "skipped") for _, o in results):
            status = "SKIP"
        terminalreporter.write_line(f"{status}  criterion {number:>2}: {_titles[number]}  "
                                    f"({sum(o == 'passed' for _, o in results)}/{len(results)} checks)")
