"""Shared fixtures and the acceptance-criteria summary hook."""

from __future__ import annotations

from datetime import timedelta
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from twinarch.clock import DEFAULT_EPOCH

settings.register_profile(
    "default", deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REPO_ROOT = Path(__file__).resolve().parent.parent


def ts(seconds: float):
    """Shorthand: epoch + offset, tz-aware."""
    return DEFAULT_EPOCH + timedelta(seconds=seconds)


@pytest.fixture
def epoch():
    return DEFAULT_EPOCH


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO_ROOT


_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Reporter for acceptance tests: one pass/fail line per criterion."""

    def _report(number: int, name: str, ok: bool, detail: str = "") -> None:
        verdict = "PASS" if ok else "FAIL"
        line = f"criterion {number:2d} ({name}): {verdict}"
        if detail:
            line += f" [{detail}]"
        _CRITERION_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)
