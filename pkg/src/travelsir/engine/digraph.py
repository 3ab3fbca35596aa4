"""Second engine: pre-sampled recovery times, per-edge transmission budgets and
travel paths, with infections found by earliest-arrival propagation.

A directed edge ``u -> v`` spends its Exp(beta) budget only while u and v are
co-located after u's infection; v is infected when the budget runs out,
provided u has not recovered by then.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from typing import Optional

import numpy as np

from ..netgen import Graph
from ..params import ModelParams, ParameterError
from .core import (NO_POLICY, InterventionPolicy, RunResult, StoppingTimes, Trajectory, default_horizon,
                   initial_locations, pick_seed, threshold_count)
from .ctmc import slot_arrays


class TravelPath:
    """Alternating home/away sojourns of one node, generated on demand."""

    __slots__ = ("home", "loc0", "switches", "rates", "rng")

    def __init__(self, home: int, loc0: int, rho_T: float, rho_H: float, rng: np.random.Generator):
        self.home = home
        self.loc0 = loc0
        self.switches: list[float] = []
        self.rates = (rho_T, rho_H)
        self.rng = rng

    def location_after(self, k: int) -> int:
        """Location after the first ``k`` switches."""
        return self.loc0 if k % 2 == 0 else 3 - self.loc0

    def extend(self, until: float) -> None:
        sw = self.switches
        last = sw[-1] if sw else 0.0
        while last <= until:
            away = self.location_after(len(sw)) != self.home
            rate = self.rates[1] if away else self.rates[0]
            if rate <= 0:
                last = math.inf
            else:
                last += self.rng.exponential(1.0 / rate)
            sw.append(last)

    def location_at(self, t: float) -> int:
        self.extend(t)
        return self.location_after(bisect_right(self.switches, t))


def transmission_time(pu: TravelPath, pv: TravelPath, start: float, stop: float, budget: float) -> Optional[float]:
    """Time at which ``budget`` units of co-location accrue after ``start``, or None if not before ``stop``."""
    pu.extend(stop)
    pv.extend(stop)
    su, sv = pu.switches, pv.switches
    i, j = bisect_right(su, start), bisect_right(sv, start)
    lu, lv = pu.location_after(i), pv.location_after(j)
    t = start
    while t < stop:
        nu, nv = su[i], sv[j]
        nxt = min(nu, nv, stop)
        if lu == lv:
            if budget <= nxt - t:
                return t + budget
            budget -= nxt - t
        t = nxt
        if nu == nxt:
            i += 1
            lu = 3 - lu
        if nv == nxt:
            j += 1
            lv = 3 - lv
    return None


def simulate_digraph(graph: Graph, params: ModelParams, horizon: float | None = None, rng_seed=None,
                     sampling_dt: Optional[float] = None, epsilon: float = 0.01,
                     policy: InterventionPolicy = NO_POLICY) -> RunResult:
    """Infection-digraph realization of the uncontrolled dynamics.

    Without ``sampling_dt`` the trajectory holds only the rows at the
    stopping times.
    """
    if policy.kind != "none":
        raise ParameterError("the digraph engine covers the uncontrolled dynamics only")
    if graph.n != params.n:
        raise ParameterError(f"graph has 2n={graph.num_nodes} nodes but params.n={params.n}")
    seed = params.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    n, nn = params.n, graph.num_nodes
    horizon = default_horizon(n) if horizon is None else float(horizon)
    rho_T, rho_H = params.rho_T, params.rho_H
    node_type = graph.node_type.astype(np.int64)

    seed_node = pick_seed(graph.node_type, rng)
    loc0 = initial_locations(graph.node_type, seed_node, rho_T / (rho_T + rho_H), rng).astype(np.int64)
    recovery = rng.exponential(1.0 / params.gamma, size=nn)
    budgets = (rng.exponential(1.0 / params.beta, size=len(graph.indices)) if params.beta > 0
               else np.full(len(graph.indices), math.inf))
    paths = [TravelPath(int(node_type[v]), int(loc0[v]), rho_T, rho_H, rng) for v in range(nn)]

    infected_at = np.full(nn, math.inf)
    infected_at[seed_node] = 0.0
    done = np.zeros(nn, dtype=bool)
    heap = [(0.0, seed_node)]
    indptr, indices = graph.indptr, graph.indices
    while heap:
        t_u, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        stop = t_u + recovery[u]
        for s in range(indptr[u], indptr[u + 1]):
            v = int(indices[s])
            if done[v] or budgets[s] == math.inf:
                continue
            hit = transmission_time(paths[u], paths[v], t_u, min(stop, infected_at[v]), budgets[s])
            if hit is not None and hit < infected_at[v]:
                infected_at[v] = hit
                heapq.heappush(heap, (hit, v))

    ever = np.isfinite(infected_at)
    recovered_at = np.where(ever, infected_at + recovery, math.inf)
    tau_end = float(np.max(recovered_at[ever]))
    k_eps = threshold_count(epsilon, n)
    times1 = np.sort(infected_at[ever & (node_type == 1)])
    times2 = np.sort(infected_at[ever & (node_type == 2)])
    tau_12 = float(times2[0]) if len(times2) else math.inf
    tau_1 = float(times1[k_eps - 1]) if len(times1) >= k_eps else math.inf
    tau_2 = float(times2[k_eps - 1]) if len(times2) >= k_eps else math.inf
    y2 = int(np.count_nonzero(times2 <= tau_1)) if math.isfinite(tau_1) else None

    # paths have to cover the window for the ever-travelled count
    travelers = 0
    for v, p in enumerate(paths):
        p.extend(horizon)
        if loc0[v] != node_type[v] or p.switches[0] <= horizon:
            travelers += 1

    stops = StoppingTimes(tau_12, tau_1, tau_2, tau_end)
    sample_times = sorted(t for t in (tau_12, tau_1, tau_2, tau_end) if math.isfinite(t))
    if sampling_dt:
        grid = list(np.arange(0.0, tau_end, sampling_dt))
        sample_times = sorted(set(grid) | set(sample_times))
    rows = _sample_rows(graph, node_type, paths, infected_at, recovered_at, sample_times)
    return RunResult(
        trajectory=Trajectory(rows), stopping_times=stops,
        R1_inf=int(np.count_nonzero(ever & (node_type == 1))),
        R2_inf=int(np.count_nonzero(ever & (node_type == 2))),
        Y2_at_tau1=y2, travelers_by_T=travelers, seed=seed, params=params, engine="digraph",
        final_health=np.where(ever, 2, 0).astype(np.int8))


def _sample_rows(graph: Graph, node_type: np.ndarray, paths: list[TravelPath], infected_at: np.ndarray,
                 recovered_at: np.ndarray, times: list[float]) -> np.ndarray:
    slot_src, _rev = slot_arrays(graph)
    dst = graph.indices.astype(np.int64)
    rows = np.zeros((len(times), 30))
    for r, t in enumerate(times):
        health = np.where(infected_at > t, 0, np.where(recovered_at > t, 1, 2))
        loc = np.array([p.location_at(t) for p in paths], dtype=np.int64)
        rows[r, 0] = t
        for h in range(3):
            for k in (1, 2):
                rows[r, 1 + 3 * (k - 1) + h] = np.count_nonzero((health == h) & (node_type == k))
                rows[r, 7 + 3 * (k - 1) + h] = np.count_nonzero((health == h) & (loc == k))
        pair = (health[slot_src] == 1) & (health[dst] == 0)
        u, v = slot_src[pair], dst[pair]
        rows[r, 13] = np.count_nonzero(loc[u] == loc[v])
        cls = (((node_type[u] - 1) * 2 + node_type[v] - 1) * 4
               + (loc[u] != node_type[u]) * 2 + (loc[v] != node_type[v]))
        rows[r, 14:] = np.bincount(cls, minlength=16)
    return rows
