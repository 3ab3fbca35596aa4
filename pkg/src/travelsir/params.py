"""Model parameters and closed-form derived constants."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional


class ParameterError(ValueError):
    """Raised for invalid model parameters or configuration documents."""


@dataclass(frozen=True)
class ModelParams:
    """Scalar inputs of the two-community travel SIR model.

    ``n`` is the size of each community (2n individuals in total).  Edges
    form with probability ``c/n`` inside a type and ``c_cross/n`` across
    types.  ``rho_T`` is the rate of leaving home and ``rho_H`` the rate of
    returning.  When ``rho0`` is set, ``rho_T`` is derived as
    ``rho0 * n**(-alpha)`` (scaling mode).

    ``beta = 0`` and ``rho_T = 0`` are accepted as degenerate regimes for the
    simulators; :func:`derive` insists on strictly positive rates.
    """

    n: int
    c: float
    beta: float
    gamma: float
    rho_T: float = 0.0
    rho_H: float = 1.0
    alpha: float = 0.5
    c_cross: Optional[float] = None
    rho0: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.c_cross is None:
            object.__setattr__(self, "c_cross", self.c)
        if self.rho0 is not None:
            object.__setattr__(self, "rho_T", float(self.rho0 * float(self.n) ** (-self.alpha)))
        self.validate()

    def validate(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ParameterError(f"n must be an integer >= 2, got {self.n!r}")
        for name in ("c", "c_cross", "beta", "rho_T"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and nonnegative, got {v!r}")
        for name in ("gamma", "rho_H"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ParameterError(f"{name} must be strictly positive, got {v!r}")
        if self.rho0 is not None:
            if self.rho0 <= 0:
                raise ParameterError("rho0 must be strictly positive")
            if not 0 < self.alpha < 1:
                raise ParameterError("scaling mode requires 0 < alpha < 1")
        if not 0 <= self.alpha < 1:
            raise ParameterError(f"alpha must lie in [0, 1), got {self.alpha!r}")
        if not -(2**63) <= int(self.rng_seed) < 2**64:
            raise ParameterError("rng_seed must fit in 64 bits")

    @classmethod
    def scaled(cls, n: int, c: float, beta: float, gamma: float, rho0: float = 1.0,
               alpha: float = 0.5, rho_H: float = 1.0, **kw) -> "ModelParams":
        """Scaling mode: ``rho_T = rho0 * n**(-alpha)``."""
        return cls(n=n, c=c, beta=beta, gamma=gamma, rho_H=rho_H, alpha=alpha, rho0=rho0, **kw)

    def with_n(self, n: int) -> "ModelParams":
        """Same model at another community size (rho_T rescaled in scaling mode)."""
        return dataclasses.replace(self, n=n)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(ModelParams)}


def params_from_dict(doc: dict) -> ModelParams:
    """Build parameters from a configuration mapping; unknown keys are rejected."""
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ParameterError(f"unknown parameter fields: {sorted(unknown)}")
    missing = {"n", "c", "beta", "gamma"} - set(doc)
    if missing:
        raise ParameterError(f"missing parameter fields: {sorted(missing)}")
    doc = dict(doc)
    # in scaling mode rho_T is recomputed; drop a stale echo of it
    if doc.get("rho0") is not None:
        doc.pop("rho_T", None)
    try:
        return ModelParams(**doc)
    except TypeError as exc:
        raise ParameterError(str(exc)) from exc


def load_params(path: str | Path) -> ModelParams:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ParameterError("parameter document must be a JSON object")
    return params_from_dict(doc)


@dataclass(frozen=True)
class DerivedQuantities:
    R0: float
    lambda_: float
    p_T: float
    p_H: float
    s0: Optional[float]
    cT_bound: float
    cH_bound: float
    params: ModelParams

    def to_dict(self) -> dict[str, Any]:
        return {
            "R0": self.R0,
            "lambda": self.lambda_,
            "p_T": self.p_T,
            "p_H": self.p_H,
            "s0": self.s0,
            "cT_bound": self.cT_bound,
            "cH_bound": self.cH_bound,
        }


def derive(params: ModelParams) -> DerivedQuantities:
    """Closed-form constants: R0, growth rate, stationary travel law, s0, bound degrees."""
    for name in ("c", "beta", "gamma", "rho_T", "rho_H"):
        if getattr(params, name) <= 0:
            raise ParameterError(f"{name} must be strictly positive for derive()")
    c, beta, gamma = params.c, params.beta, params.gamma
    R0 = c * beta / (beta + gamma)
    lam = c * beta - beta - gamma
    p_T = params.rho_T / (params.rho_T + params.rho_H)
    s0 = 1.0 / R0 if R0 > 1 else None
    ln = math.log(params.n)
    cT = c * params.n ** (-params.alpha) * ln**3
    return DerivedQuantities(R0=R0, lambda_=lam, p_T=p_T, p_H=1.0 - p_T, s0=s0,
                             cT_bound=cT, cH_bound=c, params=params)


def growth_rate(c: float, beta: float, gamma: float) -> float:
    return c * beta - beta - gamma


def reproduction_number(c: float, beta: float, gamma: float) -> float:
    return c * beta / (beta + gamma)
