import numpy as np
import pytest

from rfqfit.distributions import ClientParams, SepParams
from rfqfit.model import ModelSpec, Pooling, Side, SideParams, Variant

# Generating values used throughout the recovery and cross-check tests.
BUY_PARTIAL = SideParams(SepParams(0.735, 0.179, 0.424, 0.906), ClientParams(1.72, 1.92), 0.400)
SELL_PARTIAL = SideParams(SepParams(0.665, -0.103, -0.418, 0.794), ClientParams(-1.80, 1.68), 0.424)
N_COUNTS = np.array([5256, 13051, 20233, 60999, 109530], dtype=float)
N_MIX = tuple(N_COUNTS / N_COUNTS.sum())

_REPORT: list[tuple[int, bool, str]] = []


def partial_spec(buy=BUY_PARTIAL, sell=SELL_PARTIAL):
    return ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): buy, (Side.SELL, None): sell})


@pytest.fixture
def report_criterion():
    """Record an acceptance outcome; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        _REPORT.append((number, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_REPORT):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
