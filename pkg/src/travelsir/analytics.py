"""Outbreak probability, final size, mean-field ODE and a branching-process oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .params import DerivedQuantities, ParameterError


class QuadratureError(RuntimeError):
    """Adaptive refinement hit its depth cap before reaching the tolerance."""


class IntegrationError(RuntimeError):
    """The ODE integrator gave up (step size underflow)."""


@dataclass(frozen=True)
class FixedPointResult:
    value: float
    residual: float
    iterations: int
    bracket: tuple[float, float]

    def to_dict(self) -> dict:
        return {"value": self.value, "residual": self.residual, "iterations": self.iterations}


@dataclass(frozen=True)
class MeanFieldState:
    s: float
    x: float
    i: float
    r: float
    t: float = 0.0


_MAX_DEPTH = 60


def _adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    """Iterative adaptive Simpson with Richardson correction."""
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        diff = left + right - whole
        if abs(diff) <= 15.0 * eps:
            total += left + right + diff / 15.0
            continue
        if depth >= _MAX_DEPTH:
            raise QuadratureError(f"depth cap reached on [{a:.3g}, {b:.3g}]")
        stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
        stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return total


def _breakpoints(length: float, scale: float) -> list[float]:
    # geometric cells resolve the fast initial transient when beta >> gamma
    pts = [0.0]
    x = scale
    while x < length:
        pts.append(x)
        x *= 2.0
    pts.append(length)
    return pts


def survival_kernel(pi: float, c: float, beta: float, gamma: float, tol: float = 1e-10) -> float:
    """Probability that no child of an infected individual starts a surviving tree.

    Averages ``exp(-c (1 - exp(-beta l)) pi)`` over lifetimes ``l ~ Exp(gamma)``,
    where ``pi`` is the per-child survival probability.  The domain is truncated
    at ``ln(2/tol)/gamma`` so the neglected tail mass is at most ``tol/2``.
    """
    if not 0 < tol <= 1e-3:
        raise ParameterError("tol must lie in (0, 1e-3]")
    if not all(math.isfinite(v) for v in (pi, c, beta, gamma)):
        raise ParameterError("inputs must be finite")
    if gamma <= 0 or beta < 0 or c < 0:
        raise ParameterError("need gamma > 0 and nonnegative c, beta")
    if pi == 0 or c == 0 or beta == 0:
        return 1.0
    # half the budget for the analytic tail, half for quadrature
    length = math.log(2.0 / tol) / gamma
    cp = c * pi

    def integrand(ell: float) -> float:
        return gamma * math.exp(-cp * -math.expm1(-beta * ell) - gamma * ell)

    scale = min(1.0 / beta, 1.0 / gamma) / 16.0
    pts = _breakpoints(length, scale)
    cell_tol = 0.5 * tol / (len(pts) - 1)
    return sum(_adaptive_simpson(integrand, a, b, cell_tol) for a, b in zip(pts[:-1], pts[1:]))


def _largest_root(h: Callable[[float], float], tol: float, xtol: float) -> Optional[FixedPointResult]:
    """Largest root of ``h`` in [tol, 1] where ``h`` is negative just below it.

    Scans 16 cells downward from 1, then bisects.  Returns None when no sign
    change is found.
    """
    grid = [1.0 - k / 16.0 for k in range(16)] + [tol]
    upper, h_upper = grid[0], h(grid[0])
    evals = 1
    if h_upper == 0:
        return FixedPointResult(1.0, 0.0, evals, (1.0, 1.0))
    lower = None
    for x in grid[1:]:
        hx = h(x)
        evals += 1
        if (hx <= 0) != (h_upper <= 0) or hx == 0:
            lower, h_lower = x, hx
            break
        upper, h_upper = x, hx
    if lower is None:
        return None
    a, b = lower, upper
    ha = h_lower
    mid, hm = a, ha
    while True:
        mid = 0.5 * (a + b)
        hm = h(mid)
        evals += 1
        if abs(hm) <= 0.5 * tol or b - a <= xtol or evals > 400:
            break
        if (hm <= 0) == (ha <= 0):
            a, ha = mid, hm
        else:
            b = mid
    return FixedPointResult(mid, abs(hm), evals, (a, b))


def solve_pi(c: float, beta: float, gamma: float, tol: float = 1e-10) -> FixedPointResult:
    """Largest root of ``1 - pi = survival_kernel(pi)``: the outbreak probability."""
    if c <= 0 or beta <= 0 or gamma <= 0:
        raise ParameterError("c, beta, gamma must be strictly positive")
    if c * beta <= beta + gamma:
        # no positive root at or below criticality; the flat h near 0 would fool bisection
        return FixedPointResult(0.0, 0.0, 0, (0.0, 0.0))
    qtol = min(tol / 10.0, 1e-3)

    def h(p: float) -> float:
        return survival_kernel(p, c, beta, gamma, qtol) - (1.0 - p)

    res = _largest_root(h, tol, tol * 1e-3)
    if res is None:
        return FixedPointResult(0.0, 0.0, 17, (0.0, tol))
    return res


def solve_r_inf(R0: float, tol: float = 1e-12) -> FixedPointResult:
    """Largest root of ``1 - r = exp(-R0 r)``: the final epidemic size."""
    if not R0 > 0 or not math.isfinite(R0):
        raise ParameterError("R0 must be positive and finite")
    if R0 <= 1:
        return FixedPointResult(0.0, 0.0, 0, (0.0, 0.0))

    def h(r: float) -> float:
        return math.exp(-R0 * r) - (1.0 - r)

    res = _largest_root(h, tol, tol * 1e-3)
    if res is None:
        return FixedPointResult(0.0, 0.0, 17, (0.0, tol))
    return res


@numba.njit(cache=True)
def _bp_kernel(c, beta, gamma, reps, threshold, rng):
    hits = 0
    for _ in range(reps):
        pending = 1
        total = 1
        while pending > 0 and total < threshold:
            pending -= 1
            life = rng.exponential(1.0 / gamma)
            mean = c * -math.expm1(-beta * life)
            k = rng.poisson(mean) if mean > 0 else 0
            pending += k
            total += k
        if total >= threshold:
            hits += 1
    return hits


def bp_survival_mc(c: float, beta: float, gamma: float, replications: int = 100_000,
                   size_threshold: int = 10_000, rng_seed: int = 0) -> tuple[float, float]:
    """Monte Carlo survival probability of the single-type branching process.

    A tree counts as surviving once its total progeny reaches ``size_threshold``.
    Returns the estimate and its binomial standard error.
    """
    if replications < 1000 or size_threshold < 1000:
        raise ParameterError("need replications >= 1000 and size_threshold >= 1000")
    if gamma <= 0 or c < 0 or beta < 0:
        raise ParameterError("need gamma > 0 and nonnegative c, beta")
    if beta == 0 or c == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(rng_seed)
    hits = _bp_kernel(float(c), float(beta), float(gamma), int(replications), int(size_threshold), rng)
    p = hits / replications
    return p, math.sqrt(p * (1.0 - p) / replications)


MODES = ("conservative", "paper-literal")


def meanfield_rhs(c: float, beta: float, gamma: float, mode: str = "conservative"):
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}")
    literal = mode == "paper-literal"

    def rhs(_t, y):
        s, x, i, _r = y
        force = beta * x
        gain = force * c if literal else force * s
        return [-force * s, -(beta + gamma) * x + c * force * s, gain - gamma * i, gamma * i]

    return rhs


def meanfield_integrate(dq: DerivedQuantities, init: MeanFieldState, t_end: float,
                        rtol: float = 1e-10, mode: str = "conservative",
                        t_eval: Optional[Sequence[float]] = None, atol: float = 1e-13) -> list[MeanFieldState]:
    """Integrate the mean-field system from ``init`` to ``init.t + t_end``.

    ``conservative`` uses ``di/dt = beta x s - gamma i`` so that ``s + i + r``
    is preserved; ``paper-literal`` uses ``di/dt = beta c x - gamma i``.
    Output is at ``t_eval`` (absolute times) or at 201 evenly spaced times.
    """
    if min(init.s, init.x, init.i, init.r) < 0:
        raise ParameterError("initial state must be componentwise nonnegative")
    if not t_end > 0:
        raise ParameterError("t_end must be positive")
    p = dq.params
    t0, t1 = init.t, init.t + t_end
    times = np.linspace(t0, t1, 201) if t_eval is None else np.asarray(t_eval, dtype=float)
    if t_eval is not None:
        # absolute times may overshoot init.t + t_end by rounding
        if np.any(times < t0) or np.any(times > t1 + 1e-9 * max(1.0, abs(t1))):
            raise ParameterError("t_eval must lie within [init.t, init.t + t_end]")
        t1 = max(t1, float(times.max(initial=t1)))
    sol = solve_ivp(meanfield_rhs(p.c, p.beta, p.gamma, mode), (t0, t1),
                    [init.s, init.x, init.i, init.r], method="DOP853", t_eval=times,
                    rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(sol.message)
    return [MeanFieldState(s=float(s), x=float(x), i=float(i), r=float(r), t=float(t))
            for t, (s, x, i, r) in zip(sol.t, sol.y.T)]


def meanfield_rows(states: Iterable[MeanFieldState]) -> list[tuple[float, float, float, float, float]]:
    return [(st.t, st.s, st.x, st.i, st.r) for st in states]
