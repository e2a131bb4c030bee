import numpy as np
import pytest

_LINES = {}


def record(criterion: int, passed: bool, detail: str):
    """Register the pass/fail line printed for an acceptance criterion."""
    _LINES[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(_LINES[criterion])


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])


def cos_bump(center, radius, power=4):
    """Product of cos^power bumps, one per coordinate (t, x1, ...)."""
    def f(*coords):
        out = 1.0
        for y, c, r in zip(coords, center, radius):
            z = (y - c) / r
            out = out * np.where(np.abs(z) < 1, np.cos(0.5 * np.pi * z) ** power, 0.0)
        return out
    return f
