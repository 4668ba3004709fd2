from __future__ import annotations

import pytest


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def record_criterion(pytestconfig):
    """Store ``(passed, detail)`` for one acceptance criterion; printed in the summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        pytestconfig.acceptance[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter, config):
    rows = getattr(config, "acceptance", {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(rows):
        ok, detail = rows[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
