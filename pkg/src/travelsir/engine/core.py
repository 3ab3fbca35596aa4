"""Shared types for the simulation engines."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..params import ModelParams, ParameterError

S, I, R = 0, 1, 2

TRAJECTORY_COLUMNS = ("t", "S1", "I1", "R1", "S2", "I2", "R2",
                      "S1_loc", "I1_loc", "R1_loc", "S2_loc", "I2_loc", "R2_loc", "X_active_total")
CENSUS_COLUMNS = tuple(f"X{i}{j}{a}{b}" for i in (1, 2) for j in (1, 2) for a in "HT" for b in "HT")
ROW_WIDTH = len(TRAJECTORY_COLUMNS) + len(CENSUS_COLUMNS)

EVENT_TRAVEL, EVENT_RECOVERY, EVENT_INFECTION = 0, 1, 2
EVENT_LOG_COLUMNS = ("t", "kind", "node", "other", "edge_class", "rate")

POLICIES = ("none", "travel_ban", "social_distancing")
BASES = ("type_counts", "location_counts")
SCOPES = ("location", "type")


class BudgetError(RuntimeError):
    """Event cap exceeded; ``partial`` holds the truncated run."""

    def __init__(self, message: str, partial: "RunResult"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class InterventionPolicy:
    """Intervention fired once type-1 (or community-1) infections reach ``ceil(eps n)``.

    ``scope`` selects which transmissions count as in community 2 under
    social distancing: ``location`` (both endpoints currently there) or
    ``type`` (the target's home community is 2).
    """

    kind: str = "none"
    trigger_epsilon: float = 0.01
    trigger_basis: str = "type_counts"
    beta_prime: Optional[float] = None
    scope: str = "location"

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ParameterError(f"policy kind must be one of {POLICIES}")
        if not 0 < self.trigger_epsilon < 1:
            raise ParameterError("trigger_epsilon must lie in (0, 1)")
        if self.trigger_basis not in BASES:
            raise ParameterError(f"trigger_basis must be one of {BASES}")
        if self.scope not in SCOPES:
            raise ParameterError(f"scope must be one of {SCOPES}")
        if self.kind == "social_distancing" and (self.beta_prime is None or self.beta_prime < 0):
            raise ParameterError("social distancing needs beta_prime >= 0")

    def validate_for(self, params: ModelParams) -> None:
        if self.kind == "social_distancing":
            lam_prime = params.c * self.beta_prime - self.beta_prime - params.gamma
            if lam_prime >= 0:
                warnings.warn(f"beta_prime gives nonnegative growth rate {lam_prime:.4g}", RuntimeWarning)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "trigger_epsilon": self.trigger_epsilon,
                "trigger_basis": self.trigger_basis, "beta_prime": self.beta_prime, "scope": self.scope}


NO_POLICY = InterventionPolicy()


@dataclass(frozen=True)
class StoppingTimes:
    tau_12: float = math.inf
    tau_1_eps: float = math.inf
    tau_2_eps: float = math.inf
    tau_end: float = math.inf
    t_trigger: float = math.inf


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled rows; columns are ``TRAJECTORY_COLUMNS`` followed by the 16-class census."""

    rows: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.rows[:, 0]

    def column(self, name: str) -> np.ndarray:
        if name in TRAJECTORY_COLUMNS:
            return self.rows[:, TRAJECTORY_COLUMNS.index(name)]
        return self.rows[:, len(TRAJECTORY_COLUMNS) + CENSUS_COLUMNS.index(name)]

    @property
    def census(self) -> np.ndarray:
        return self.rows[:, len(TRAJECTORY_COLUMNS):]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True, eq=False)
class RunResult:
    trajectory: Trajectory
    stopping_times: StoppingTimes
    R1_inf: int
    R2_inf: int
    Y2_at_tau1: Optional[int]
    travelers_by_T: int
    seed: object
    params: ModelParams
    policy: InterventionPolicy = NO_POLICY
    engine: str = "ctmc"
    event_counts: tuple = (0, 0, 0)
    event_log: Optional[np.ndarray] = None
    census_mismatches: int = 0
    final_health: Optional[np.ndarray] = field(default=None, repr=False)
    final_location: Optional[np.ndarray] = field(default=None, repr=False)
    complete: bool = True

    def summary(self) -> dict:
        st = self.stopping_times
        return {"seed": seed_repr(self.seed), "tau_12": st.tau_12, "tau_1_eps": st.tau_1_eps,
                "tau_2_eps": st.tau_2_eps, "tau_end": st.tau_end, "R1_inf": self.R1_inf,
                "R2_inf": self.R2_inf, "Y2_at_tau1": self.Y2_at_tau1, "travelers_by_T": self.travelers_by_T}


def seed_repr(seed):
    """JSON-friendly form of an integer seed or a spawned SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return seed


def threshold_count(epsilon: float, n: int) -> int:
    return max(1, math.ceil(epsilon * n - 1e-9))


def default_horizon(n: int) -> float:
    return math.log(n) ** 2


def initial_locations(node_type: np.ndarray, seed_node: int, p_away: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Stationary locations for every node; the seed stays home."""
    away = rng.random(len(node_type)) < p_away
    away[seed_node] = False
    return np.where(away, 3 - node_type, node_type).astype(np.int8)


def pick_seed(node_type: np.ndarray, rng: np.random.Generator) -> int:
    candidates = np.flatnonzero(node_type == 1)
    return int(candidates[rng.integers(len(candidates))])


def fill_travelers(flagged: int, home_unflagged: int, remaining: float, rho_T: float, frozen: bool,
                   rng: np.random.Generator) -> int:
    """Complete the ever-travelled count over the rest of the window after the epidemic ends."""
    if remaining <= 0 or frozen or rho_T <= 0 or home_unflagged == 0:
        return flagged
    return flagged + int(rng.binomial(home_unflagged, -math.expm1(-rho_T * remaining)))
