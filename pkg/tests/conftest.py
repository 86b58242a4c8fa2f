import os

import pytest
from hypothesis import HealthCheck, settings

from invchain.blockstore import BlockStore
from invchain.oplog import Identity

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def alice():
    return Identity.from_seed(b"alice")


@pytest.fixture
def bob():
    return Identity.from_seed(b"bob")


@pytest.fixture
def mem_store():
    return BlockStore()


_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.failed:
        detail = dict(report.user_properties).get("detail", "")
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        verdict, detail = _acceptance[name]
        number = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number:2d} {verdict}: {label}" + (f" ({detail})" if detail else ""))
