import pytest

from gridpe.synth import SynthSpec, synthesize


@pytest.fixture(scope="session")
def small():
    """100-cell synthetic model and its pathway."""
    return synthesize(SynthSpec(n_cells=100), seed=42)


@pytest.fixture(scope="session")
def medium():
    return synthesize(SynthSpec(n_cells=400), seed=7)


@pytest.fixture(scope="session")
def default_model():
    """The default 10,000-cell synthetic calibration."""
    return synthesize()


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# -- acceptance reporting ----------------------------------------------------------------
# Tests marked ``criterion("name")`` get one PASS/FAIL line each in the terminal
# summary; details attached with ``record(request, text)`` are appended.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


def record(request, text):
    request.node.user_properties.append(("detail", text))


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None or (report.when != "call" and report.passed):
        return
    status = "FAIL" if report.failed else ("SKIP" if report.skipped else "PASS")
    details = [v for k, v in report.user_properties if k == "detail"]
    if name in _CRITERIA:
        prev, old = _CRITERIA[name]
        status = max(prev, status, key=("PASS", "SKIP", "FAIL").index)
        details = old + details
    _CRITERIA[name] = (status, details)


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, details) in _CRITERIA.items():
        extra = f"  ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"{status}  {name}{extra}")
