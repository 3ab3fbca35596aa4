"""Simulation engines for travel plus SIR on a typed contact graph."""

from .core import (BudgetError, InterventionPolicy, NO_POLICY, RunResult, StoppingTimes, Trajectory,
                   TRAJECTORY_COLUMNS, CENSUS_COLUMNS)
from .ctmc import simulate_ctmc

__all__ = ["BudgetError", "InterventionPolicy", "NO_POLICY", "RunResult", "StoppingTimes", "Trajectory",
           "TRAJECTORY_COLUMNS", "CENSUS_COLUMNS", "simulate_ctmc"]
