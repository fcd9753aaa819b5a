import pytest

from rowvit.core_types import HwConfig
from rowvit.memsys import TrafficLedger
from rowvit.simcli import run
from rowvit.workload import build_swin_t

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def swin_t():
    return build_swin_t()


@pytest.fixture(scope="session")
def swin_run(swin_t):
    """Stats-only Swin-T run at the default geometry and 600 MHz, with its ledger."""
    ledger = TrafficLedger()
    return run(swin_t, HwConfig(), ledger=ledger), ledger


@pytest.fixture(scope="session")
def swin_report(swin_run):
    return swin_run[0]


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _ACCEPTANCE:
        terminalreporter.write_line(f"{verdict}  {name}")
    passed = sum(v == "PASS" for _, v in _ACCEPTANCE)
    terminalreporter.write_line(f"{passed}/{len(_ACCEPTANCE)} criteria pass")
