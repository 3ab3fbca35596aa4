import math

import numpy as np
import pytest

from travelsir.params import ModelParams

_REPORT: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the terminal summary."""
    def emit(label: str, ok: bool, detail: str = "") -> None:
        _REPORT.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
    return emit


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


@pytest.fixture
def fig5():
    """Reference rates c=6, beta=1.5, gamma=3 with square-root travel scaling at n=1e4."""
    return ModelParams.scaled(n=10_000, c=6, beta=1.5, gamma=3)


def _check_run(run, n):
    tr = run.trajectory
    for k in (1, 2):
        s, i, r = (tr.column(f"{h}{k}") for h in "SIR")
        assert np.all(s + i + r == n)
        assert np.all(np.diff(s) <= 0) and np.all(np.diff(r) >= 0) and np.all(i >= 0)
    loc = sum(tr.column(f"{h}{k}_loc") for h in "SIR" for k in (1, 2))
    assert np.all(loc == 2 * n)
    st = run.stopping_times
    if math.isfinite(st.tau_12) and math.isfinite(st.tau_2_eps):
        assert st.tau_12 <= st.tau_2_eps
    assert math.isfinite(st.tau_end)
    assert run.R1_inf + run.R2_inf == 2 * n - tr.rows[-1, 1] - tr.rows[-1, 4]


@pytest.fixture(scope="session")
def check_run():
    """Per-type conservation, monotonicity and stopping-time order of one run."""
    return _check_run
