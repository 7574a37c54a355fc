import hypothesis
import numpy as np
import pytest

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

_CRITERIA = pytest.StashKey[dict]()
_DETAIL = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config.stash[_CRITERIA] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def detail(request):
    """Append a line of evidence to the acceptance summary of this test."""
    lines = []
    request.node.stash[_DETAIL] = lines
    return lines.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    lines = item.stash.get(_DETAIL, [])
    results = item.config.stash[_CRITERIA]
    results[number] = (title, report.outcome, "; ".join(lines))
    print(f"\ncriterion {number} {'PASS' if report.passed else 'FAIL'}: {title}"
          + (f" ({results[number][2]})" if lines else ""))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_CRITERIA]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, outcome, text = results[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {verdict}: {title}" + (f" -- {text}" if text else ""))
