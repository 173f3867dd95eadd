"""Collects one verdict line per acceptance criterion and prints them at the end."""

import pytest

_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict(request):
    """Call ``verdict(ok, detail)`` once per criterion; failing verdicts fail the test."""
    def record(ok: bool, detail: str) -> None:
        request.node.user_properties.append(("detail", detail))
        assert ok, detail
    return record


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    detail = dict(report.user_properties).get("detail", "no verdict recorded")
    if report.failed and detail == "no verdict recorded":
        detail = str(report.longrepr).strip().splitlines()[-1]
    _VERDICTS[name] = f"{'PASS' if report.passed else 'FAIL'}  {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for name in sorted(_VERDICTS, key=lambda n: int(n.split("_")[2])):
            terminalreporter.write_line(_VERDICTS[name])
