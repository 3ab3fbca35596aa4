"""Sixteen-dimensional linear operators bounding the expected infected-to-susceptible edge census.

Classes are indexed by (source type i, target type j, source state A,
target state B) with states H (at home) and T (travelling).  An edge is
active when its endpoints are co-located: same type and same state, or
different types and different states.
"""

from __future__ import annotations

import graphlib
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from .params import ModelParams, ParameterError

H, T = 0, 1
STATES = "HT"
DIM = 16


class ExpmOverflowError(OverflowError):
    def __init__(self, t: float):
        super().__init__(f"matrix exponential overflows at t={t!r}")
        self.t = t


class EnvelopeError(RuntimeError):
    """The growth envelope did not settle before the search cap."""


@dataclass(frozen=True)
class EdgeClassIndex:
    i: int
    j: int
    A: str
    B: str

    @property
    def flat(self) -> int:
        return flat_index(self.i, self.j, STATES.index(self.A), STATES.index(self.B))

    @classmethod
    def from_flat(cls, flat: int) -> "EdgeClassIndex":
        i, j, a, b = unflatten(flat)
        return cls(i, j, STATES[a], STATES[b])

    def __str__(self) -> str:
        return f"{self.i}{self.j}{self.A}{self.B}"


def flat_index(i: int, j: int, a: int, b: int) -> int:
    return ((i - 1) * 2 + (j - 1)) * 4 + a * 2 + b


def unflatten(flat: int) -> tuple[int, int, int, int]:
    if not 0 <= flat < DIM:
        raise IndexError(flat)
    pair, ab = divmod(flat, 4)
    return pair // 2 + 1, pair % 2 + 1, ab // 2, ab % 2


def active(i: int, j: int, a: int, b: int) -> bool:
    """Co-location indicator of a (type, state) pair."""
    return (i == j) == (a == b)


def class_label(flat: int) -> str:
    return str(EdgeClassIndex.from_flat(flat))


VARIANTS = ("M", "M0", "W", "herd", "herd0", "travelban", "travelban0", "socdist", "socdist0")


@dataclass(frozen=True)
class RateMatrix16:
    entries: np.ndarray
    variant: str
    params: ModelParams
    knobs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries.setflags(write=False)

    def norm(self) -> float:
        return induced_norm(self.entries)

    def is_metzler(self) -> bool:
        off = self.entries[~np.eye(DIM, dtype=bool)]
        return bool(np.all(off >= 0))


def induced_norm(a: np.ndarray, ord: int = 1) -> float:
    """Operator norm induced by the vector 1-norm (max column sum) or 2-norm."""
    return float(np.linalg.norm(a, ord))


def travel_bound_degree(params: ModelParams) -> float:
    ln = math.log(params.n)
    return params.c * params.n ** (-params.alpha) * ln**3


def _assemble(gamma: float, leave: Sequence[float], enter: Sequence[float],
              degree: Callable[[int, int], float], rate: Callable[[int, int, int, int], float]) -> np.ndarray:
    """Generic operator: leave/enter rates per state, new-edge degree per
    (target type, target state), transmission rate per active class."""
    m = np.zeros((DIM, DIM))
    for i, j, a, b in itertools.product((1, 2), (1, 2), (H, T), (H, T)):
        row = flat_index(i, j, a, b)
        hit = rate(i, j, a, b) if active(i, j, a, b) else 0.0
        m[row, row] -= gamma + leave[a] + leave[b] + hit
        m[row, flat_index(i, j, 1 - a, b)] += enter[a]
        m[row, flat_index(i, j, a, 1 - b)] += enter[b]
        deg = degree(j, b)
        if deg == 0:
            continue
        # node of type i, state a gets infected through an active edge k->i
        for k, cs in itertools.product((1, 2), (H, T)):
            if active(k, i, cs, a):
                m[row, flat_index(k, i, cs, a)] += deg * rate(k, i, cs, a)
    return m


def _socdist_rate(beta: float, beta_prime: float):
    # community 1 co-location gets beta, community 2 co-location gets beta'
    def rate(i, j, a, b):
        loc = i if a == H else 3 - i
        return beta if loc == 1 else beta_prime
    return rate


def build(variant: str, params: ModelParams, delta: Optional[float] = None,
          beta_prime: Optional[float] = None) -> RateMatrix16:
    """Assemble one of the operator variants.

    ``herd``/``herd0`` need ``delta`` in (0, s0); ``socdist``/``socdist0``
    need ``beta_prime`` with a negative growth rate and ``delta`` in (0, s0).
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "W":
        full = build("M", params)
        base = build("M0", params)
        return RateMatrix16(full.entries - base.entries, "W", params)

    c, beta, gamma = params.c, params.beta, params.gamma
    rho_T, rho_H = params.rho_T, params.rho_H
    if beta <= 0 or c <= 0:
        raise ParameterError("operators need strictly positive c and beta")
    c_travel = travel_bound_degree(params)
    base = variant.endswith("0")
    family = variant.rstrip("0")
    knobs: dict = {}

    s0 = (beta + gamma) / (c * beta)
    if family in ("herd", "socdist"):
        if s0 >= 1:
            raise ParameterError("herd immunity threshold needs R0 > 1")
        if delta is None or not 0 < delta < s0:
            raise ParameterError(f"delta must lie in (0, s0={s0:.6g})")
        knobs["delta"] = delta
    if family == "socdist":
        if beta_prime is None or beta_prime <= 0:
            raise ParameterError("social distancing needs beta_prime > 0")
        lam_prime = c * beta_prime - beta_prime - gamma
        if lam_prime >= 0:
            raise ParameterError(f"beta_prime gives nonnegative growth rate {lam_prime:.6g}")
        knobs["beta_prime"] = beta_prime

    # base operators keep only returning home; the full ones also allow leaving
    if base:
        leave, enter = [0.0, rho_H], [rho_H, 0.0]
    else:
        leave, enter = [rho_T, rho_H], [rho_H, rho_T]
    if family == "travelban":
        leave = [0.0, 0.0]
    home_degree = {"herd": lambda j: c * (s0 - delta),
                   "socdist": lambda j: c * (s0 - delta) if j == 1 else c}.get(family, lambda j: c)
    away_degree = 0.0 if base else c_travel

    def degree(j, b):
        return home_degree(j) if b == H else away_degree

    rate = _socdist_rate(beta, beta_prime) if family == "socdist" else (lambda i, j, a, b: beta)
    entries = _assemble(gamma, leave, enter, degree, rate)
    return RateMatrix16(entries, variant, params, knobs)


def _check_finite(out: np.ndarray, t: float) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise ExpmOverflowError(t)
    return out


def expm(mat: RateMatrix16 | np.ndarray, t: float) -> np.ndarray:
    """``exp(t * mat)`` by Pade scaling and squaring."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    a = mat.entries if isinstance(mat, RateMatrix16) else np.asarray(mat, dtype=float)
    if t == 0:
        return np.eye(a.shape[0])
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = scipy.linalg.expm(t * a)
        except FloatingPointError:
            raise ExpmOverflowError(t) from None
    return _check_finite(out, t)


def expm_ode(mat: RateMatrix16 | np.ndarray, t: float, rtol: float = 1e-12) -> np.ndarray:
    """``exp(t * mat)`` by integrating ``Y' = mat Y`` from the identity."""
    a = mat.entries if isinstance(mat, RateMatrix16) else np.asarray(mat, dtype=float)
    d = a.shape[0]
    if t == 0:
        return np.eye(d)
    sol = solve_ivp(lambda _s, y: (a @ y.reshape(d, d)).ravel(), (0.0, t), np.eye(d).ravel(),
                    method="DOP853", rtol=rtol, atol=1e-14)
    if sol.status != 0:
        raise ExpmOverflowError(t)
    return _check_finite(sol.y[:, -1].reshape(d, d), t)


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: list
    top_eigenvalue: float
    top_multiplicity: int
    triangularizing_permutation: Optional[list]
    triangular_defect: Optional[float]
    projector_defect: float
    max_imag: float

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "top_eigenvalue": self.top_eigenvalue,
            "top_multiplicity": self.top_multiplicity,
            "triangularizing_permutation": self.triangularizing_permutation,
            "triangular_defect": self.triangular_defect,
            "projector_defect": self.projector_defect,
            "max_imag": self.max_imag,
        }


def triangularizing_permutation(a: np.ndarray) -> Optional[list[int]]:
    """Ordering under which ``a`` is lower triangular, or None if its support has a cycle."""
    sorter = graphlib.TopologicalSorter()
    for row in range(a.shape[0]):
        sorter.add(row)
        for col in np.flatnonzero(a[row]):
            if col != row:
                sorter.add(row, int(col))
    try:
        return list(sorter.static_order())
    except graphlib.CycleError:
        return None


def upper_defect(a: np.ndarray, perm: Sequence[int]) -> float:
    p = a[np.ix_(perm, perm)]
    return float(np.max(np.abs(np.triu(p, 1)), initial=0.0))


def eigenspace_projector(a: np.ndarray, value: float, tol: float = 1e-9) -> np.ndarray:
    """Spectral projector onto the (semisimple) eigenspace of ``value``."""
    d = a.shape[0]
    shifted = a - value * np.eye(d)
    right = null_space(shifted, rcond=tol)
    left = null_space(shifted.T, rcond=tol)
    if right.shape[1] != left.shape[1] or right.shape[1] == 0:
        raise np.linalg.LinAlgError("eigenvalue is not semisimple")
    return right @ np.linalg.solve(left.T @ right, left.T)


_SUBSPACE = [flat_index(1, 1, H, H), flat_index(1, 2, H, H), flat_index(2, 2, H, H), flat_index(2, 1, H, H)]


def formula_projector(c: float) -> np.ndarray:
    """Two-dimensional projector built from the home-home eigenvectors."""
    p = np.zeros((DIM, DIM))
    w = c / (c - 1.0)
    for src, partner in ((flat_index(1, 1, H, H), flat_index(1, 2, H, H)),
                         (flat_index(2, 2, H, H), flat_index(2, 1, H, H))):
        p[src, src] = 1.0
        p[partner, src] = w
    return p


def spectral_analysis(mat: RateMatrix16, mult_tol: float = 1e-8) -> SpectralReport:
    """Eigenvalues, top eigenvalue multiplicity, triangular ordering and
    projector check for a travel-free (base) operator."""
    a = mat.entries
    c = mat.params.c
    if abs(c - 1.0) < 1e-6:
        warnings.warn("c is within 1e-6 of 1: projector formula is degenerate", RuntimeWarning)
    perm = triangularizing_permutation(a)
    numeric = np.linalg.eigvals(a)
    max_imag = float(np.max(np.abs(numeric.imag)))
    defect = None
    if perm is not None:
        defect = upper_defect(a, perm)
        # a triangular matrix carries its eigenvalues on the diagonal exactly
        eig = np.sort(np.diag(a).astype(complex))[::-1]
    else:
        eig = numeric[np.argsort(-numeric.real, kind="stable")]
    top = float(eig[0].real)
    mult = int(np.sum(np.abs(eig - top) <= mult_tol))
    try:
        p_num = eigenspace_projector(a, top)
        diff = (p_num - formula_projector(c))[:, _SUBSPACE]
        proj_defect = induced_norm(diff)
    except np.linalg.LinAlgError:
        proj_defect = math.inf
    return SpectralReport(list(eig), top, mult, perm, defect, proj_defect, max_imag)


def growth_constant(mat_M0: RateMatrix16 | np.ndarray, lam: float, norm_ord: int = 1,
                    inflation: float = 0.01, grid_points: int = 400) -> float:
    """Estimate ``sup_t exp(-lam t) ||exp(t M0)||`` with a small upward inflation.

    The window doubles until the envelope no longer rises over its final
    fifth; refinement is by golden-section search around the grid maximum.
    """
    a = mat_M0.entries if isinstance(mat_M0, RateMatrix16) else np.asarray(mat_M0, dtype=float)
    gamma = mat_M0.params.gamma if isinstance(mat_M0, RateMatrix16) else 1.0
    cap = 50.0 / max(gamma, abs(lam), 1.0)

    def env(t: float) -> float:
        return math.exp(-lam * t) * induced_norm(expm(a, t), norm_ord)

    horizon = cap / 16.0
    while True:
        ts = np.linspace(0.0, horizon, grid_points + 1)
        vals = np.array([env(t) for t in ts])
        tail = vals[int(0.8 * grid_points):]
        if np.max(tail) <= tail[0] * (1.0 + 1e-6):
            break
        if horizon >= cap:
            raise EnvelopeError(f"envelope still rising at t={horizon:.4g}")
        horizon = min(2.0 * horizon, cap)
    k = int(np.argmax(vals))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, grid_points)]
    best = vals[k]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - invphi * (hi - lo), lo + invphi * (hi - lo)
    f1, f2 = env(x1), env(x2)
    for _ in range(60):
        if hi - lo < 1e-10:
            break
        if f1 > f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = env(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = env(x2)
    best = max(best, f1, f2)
    return best * (1.0 + inflation)


@dataclass(frozen=True)
class PerturbationCheck:
    lhs: float
    rhs: float
    ok: bool


def perturbation_check(M0: RateMatrix16 | np.ndarray, W: RateMatrix16 | np.ndarray, lam: float, t: float,
                       C: Optional[float] = None) -> PerturbationCheck:
    """Compare ``||exp(t(M0+W)) - exp(t M0)||`` with ``C (exp(C ||W|| t) - 1) exp(lam t)``."""
    a = M0.entries if isinstance(M0, RateMatrix16) else np.asarray(M0, dtype=float)
    w = W.entries if isinstance(W, RateMatrix16) else np.asarray(W, dtype=float)
    if C is None:
        C = growth_constant(M0, lam)
    lhs = induced_norm(expm(a + w, t) - expm(a, t))
    rhs = C * math.expm1(C * induced_norm(w) * t) * math.exp(lam * t)
    return PerturbationCheck(lhs, rhs, lhs <= rhs)


def initial_census(params: ModelParams) -> np.ndarray:
    """Upper bound on the expected initial census: seed of type 1 at home."""
    e = np.zeros(DIM)
    c_travel = travel_bound_degree(params)
    for j in (1, 2):
        e[flat_index(1, j, H, H)] = params.c
        e[flat_index(1, j, H, T)] = c_travel
    return e


def _incidence_weights(beta: float) -> np.ndarray:
    """Row i-1 picks the active classes whose target has type i, scaled by beta."""
    w = np.zeros((2, DIM))
    for j, i, a, b in itertools.product((1, 2), (1, 2), (H, T), (H, T)):
        if active(j, i, a, b):
            w[i - 1, flat_index(j, i, a, b)] = beta
    return w


def _trapezoid_integral(step: np.ndarray, v0: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid weights over ``n`` steps of the exact propagator; returns (integral, endpoint)."""
    v = v0.copy()
    acc = 0.5 * v0
    for _ in range(n - 1):
        v = step @ v
        acc = acc + v
    v = step @ v
    return acc + 0.5 * v, v


@dataclass(frozen=True)
class BoundCurves:
    t: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    closed_form_B1: np.ndarray
    envelope_B2: np.ndarray

    def rows(self):
        return zip(self.t, self.B1, self.B2, self.closed_form_B1, self.envelope_B2)


def census_integral(mat: np.ndarray, v0: np.ndarray, t: float, rtol: float = 1e-6,
                    max_doublings: int = 24) -> np.ndarray:
    """``int_0^t exp(s mat) v0 ds`` by trapezoid refinement until the relative change is below ``rtol``."""
    if t == 0:
        return np.zeros_like(v0)
    n = 16
    prev = None
    for _ in range(max_doublings):
        h = t / n
        integral, _end = _trapezoid_integral(expm(mat, h), v0, n)
        integral = integral * h
        if prev is not None:
            scale = np.max(np.abs(integral))
            if np.max(np.abs(integral - prev)) <= rtol * max(scale, 1e-300):
                return integral
        prev = integral
        n *= 2
    return prev


def expected_bound_curves(params: ModelParams, t_grid: Sequence[float], rtol: float = 1e-6) -> BoundCurves:
    """Upper bounds on the expected number ever infected per type.

    ``B_i(t) = [i = 1] + beta * sum over active classes into type i of the
    integrated census + t/n``, where the census evolves under the full operator
    from the seed's initial edge vector.  Also returns the leading-order closed
    form for type 1 and the ``n^-alpha exp(lam t)`` envelope for type 2.
    """
    ts = np.asarray(t_grid, dtype=float)
    horizon = math.log(params.n) ** 2
    if np.any(ts < 0) or np.any(ts > horizon * (1 + 1e-12)):
        raise ParameterError(f"t_grid must lie in [0, ln^2 n = {horizon:.6g}]")
    mat = build("M", params).entries
    e0 = initial_census(params)
    weights = _incidence_weights(params.beta)
    b1 = np.empty_like(ts)
    b2 = np.empty_like(ts)
    for k, t in enumerate(ts):
        y = weights @ census_integral(mat, e0, float(t), rtol)
        b1[k] = 1.0 + y[0] + t / params.n
        b2[k] = y[1] + t / params.n
    lam = params.c * params.beta - params.beta - params.gamma
    if lam == 0:
        closed = 1.0 + params.c * params.beta * ts
    else:
        closed = 1.0 + params.c * params.beta * np.expm1(lam * ts) / lam
    envelope = params.n ** (-params.alpha) * np.exp(lam * ts)
    return BoundCurves(ts, b1, b2, closed, envelope)
