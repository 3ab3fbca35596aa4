"""Exact event-driven simulation of travel plus SIR on a static typed graph.

Event categories are sampled by their aggregated rates and a member is
drawn uniformly inside the chosen category:

* travel: home nodes leave at ``rho_T``, away nodes return at ``rho_H``;
* recovery: each infected node at ``gamma``;
* transmission: each directed infected-to-susceptible pair whose endpoints
  are co-located, at ``beta`` (or ``beta_prime`` in community 2 once social
  distancing is live).

Directed pairs are identified with CSR slots, so ``indices[s]`` is the
target and ``slot_src[s]`` the source of slot ``s``.
"""

from __future__ import annotations

import numba
import numpy as np

from ..netgen import Graph
from ..params import ModelParams, ParameterError
from .core import (NO_POLICY, BudgetError, InterventionPolicy, RunResult, StoppingTimes,
                   Trajectory, default_horizon, fill_travelers, initial_locations, pick_seed,
                   threshold_count)

_POLICY_CODE = {"none": 0, "travel_ban": 1, "social_distancing": 2}


@numba.njit(cache=True, inline="always")
def _add(items, pos, size, k, x):
    items[k, size[k]] = x
    pos[x] = size[k]
    size[k] += 1


@numba.njit(cache=True, inline="always")
def _remove(items, pos, size, k, x):
    i = pos[x]
    last = items[k, size[k] - 1]
    items[k, i] = last
    pos[last] = i
    size[k] -= 1
    pos[x] = -1


@numba.njit(cache=True, inline="always")
def _edge_class(u, v, ntype, loc):
    a = 1 if loc[u] != ntype[u] else 0
    b = 1 if loc[v] != ntype[v] else 0
    return ((ntype[u] - 1) * 2 + ntype[v] - 1) * 4 + a * 2 + b


@numba.njit(cache=True)
def _grow(buf, used):
    if used < buf.shape[0]:
        return buf
    out = np.empty((2 * buf.shape[0], buf.shape[1]))
    out[:used] = buf[:used]
    return out


@numba.njit(cache=True)
def _write_row(rows, nrows, t, counts_type, counts_loc, active_total, census):
    rows = _grow(rows, nrows)
    rows[nrows, 0] = t
    for h in range(3):
        rows[nrows, 1 + h] = counts_type[h, 0]
        rows[nrows, 4 + h] = counts_type[h, 1]
        rows[nrows, 7 + h] = counts_loc[h, 0]
        rows[nrows, 10 + h] = counts_loc[h, 1]
    rows[nrows, 13] = active_total
    for k in range(16):
        rows[nrows, 14 + k] = census[k]
    return rows


@numba.njit(cache=True)
def _log(log, nlog, t, kind, node, other, cls, rate):
    log = _grow(log, nlog)
    log[nlog, 0] = t
    log[nlog, 1] = kind
    log[nlog, 2] = node
    log[nlog, 3] = other
    log[nlog, 4] = cls
    log[nlog, 5] = rate
    return log


@numba.njit(cache=True)
def _recount(indptr, indices, slot_src, health, ntype, loc):
    census = np.zeros(16, dtype=np.int64)
    for s in range(indices.shape[0]):
        u = slot_src[s]
        v = indices[s]
        if health[u] == 1 and health[v] == 0:
            census[_edge_class(u, v, ntype, loc)] += 1
    return census


@numba.njit(cache=True)
def _pool_key(u, v, ntype, loc, by_type):
    if by_type:
        return ntype[v] - 1
    return loc[u] - 1


@numba.njit(cache=True)
def _run(indptr, indices, slot_src, rev, ntype, loc, seed_node, n,
         beta, beta_prime, gamma, rho_T, rho_H, policy, by_type, trigger_count, eps_count,
         basis_loc, horizon, sampling_dt, max_events, audit, rng):
    nn = ntype.shape[0]
    nslots = indices.shape[0]
    health = np.zeros(nn, dtype=np.int8)
    traveled = np.zeros(nn, dtype=np.bool_)

    # travel pools: 0 = home, 1 = away
    titems = np.empty((2, nn), dtype=np.int64)
    tpos = np.empty(nn, dtype=np.int64)
    tsize = np.zeros(2, dtype=np.int64)
    iitems = np.empty((1, nn), dtype=np.int64)
    ipos = np.full(nn, -1, dtype=np.int64)
    isize = np.zeros(1, dtype=np.int64)
    # active transmission slots, keyed by community of transmission
    aitems = np.empty((2, max(nslots, 1)), dtype=np.int64)
    apos = np.full(max(nslots, 1), -1, dtype=np.int64)
    akey = np.full(max(nslots, 1), -1, dtype=np.int64)
    asize = np.zeros(2, dtype=np.int64)

    counts_type = np.zeros((3, 2), dtype=np.int64)
    counts_loc = np.zeros((3, 2), dtype=np.int64)
    census = np.zeros(16, dtype=np.int64)

    for v in range(nn):
        away = loc[v] != ntype[v]
        traveled[v] = away
        _add(titems, tpos, tsize, 1 if away else 0, v)
        counts_type[0, ntype[v] - 1] += 1
        counts_loc[0, loc[v] - 1] += 1

    rows = np.empty((256, 30))
    nrows = 0
    log = np.empty((1024 if audit else 1, 6))
    nlog = 0
    mismatches = 0
    event_counts = np.zeros(3, dtype=np.int64)

    # stopping times: tau_12, tau_1_eps, tau_2_eps, tau_end, t_trigger
    stops = np.full(5, np.inf)
    y2_at_tau1 = -1
    banned = False
    beta1 = beta
    travelers_by_T = -1
    t = 0.0

    # infect the seed
    x = seed_node
    health[x] = 1
    _add(iitems, ipos, isize, 0, x)
    counts_type[0, ntype[x] - 1] -= 1
    counts_type[1, ntype[x] - 1] += 1
    counts_loc[0, loc[x] - 1] -= 1
    counts_loc[1, loc[x] - 1] += 1
    for s in range(indptr[x], indptr[x + 1]):
        w = indices[s]
        census[_edge_class(x, w, ntype, loc)] += 1
        if loc[x] == loc[w]:
            k = _pool_key(x, w, ntype, loc, by_type)
            _add(aitems, apos, asize, k, s)
            akey[s] = k

    next_sample = 0.0
    k_sample = 0
    status = 0
    n_events = 0
    infected = 1
    while True:
        # stopping-time bookkeeping on the post-event state
        if basis_loc:
            y1 = counts_loc[1, 0] + counts_loc[2, 0]
            y2 = counts_loc[1, 1] + counts_loc[2, 1]
        else:
            y1 = counts_type[1, 0] + counts_type[2, 0]
            y2 = counts_type[1, 1] + counts_type[2, 1]
        hit = False
        if stops[0] == np.inf and y2 >= 1:
            stops[0] = t
            hit = True
        if stops[1] == np.inf and y1 >= eps_count:
            stops[1] = t
            y2_at_tau1 = y2
            hit = True
        if stops[2] == np.inf and y2 >= eps_count:
            stops[2] = t
            hit = True
        if policy != 0 and stops[4] == np.inf and y1 >= trigger_count:
            stops[4] = t
            hit = True
            if policy == 1:
                banned = True
            else:
                beta1 = beta_prime
        if infected == 0:
            stops[3] = t
            hit = True
        if hit:
            rows = _write_row(rows, nrows, t, counts_type, counts_loc, asize[0] + asize[1], census)
            nrows += 1
        if infected == 0:
            break
        if n_events >= max_events:
            status = 1
            break

        r_travel = 0.0 if banned else rho_T * tsize[0] + rho_H * tsize[1]
        r_rec = gamma * isize[0]
        r_inf0 = beta * asize[0]
        r_inf1 = beta1 * asize[1]
        total = r_travel + r_rec + r_inf0 + r_inf1
        t_new = t + rng.exponential(1.0 / total)

        while sampling_dt > 0 and next_sample <= t_new:
            if audit:
                check = _recount(indptr, indices, slot_src, health, ntype, loc)
                for k in range(16):
                    if check[k] != census[k]:
                        mismatches += 1
                        break
            rows = _write_row(rows, nrows, next_sample, counts_type, counts_loc, asize[0] + asize[1], census)
            nrows += 1
            k_sample += 1
            next_sample = k_sample * sampling_dt
        if travelers_by_T < 0 and t_new > horizon:
            travelers_by_T = 0
            for v in range(nn):
                if traveled[v]:
                    travelers_by_T += 1
        t = t_new
        n_events += 1

        u = rng.random() * total
        if u < r_travel:
            if u < rho_T * tsize[0]:
                pool, rate = 0, rho_T
                idx = min(int(u / rho_T), tsize[0] - 1)
            else:
                pool, rate = 1, rho_H
                idx = min(int((u - rho_T * tsize[0]) / rho_H), tsize[1] - 1)
            x = titems[pool, idx]
            event_counts[0] += 1
            h = health[x]
            # detach the pairs touching x under the old location
            if h != 2:
                for s in range(indptr[x], indptr[x + 1]):
                    w = indices[s]
                    if h == 1 and health[w] == 0:
                        slot, src, dst = s, x, w
                    elif h == 0 and health[w] == 1:
                        slot, src, dst = rev[s], w, x
                    else:
                        continue
                    census[_edge_class(src, dst, ntype, loc)] -= 1
                    if apos[slot] >= 0:
                        _remove(aitems, apos, asize, akey[slot], slot)
                        akey[slot] = -1
            _remove(titems, tpos, tsize, pool, x)
            counts_loc[h, loc[x] - 1] -= 1
            loc[x] = 3 - loc[x]
            counts_loc[h, loc[x] - 1] += 1
            _add(titems, tpos, tsize, 1 - pool, x)
            if t <= horizon:
                traveled[x] = True
            if h != 2:
                for s in range(indptr[x], indptr[x + 1]):
                    w = indices[s]
                    if h == 1 and health[w] == 0:
                        slot, src, dst = s, x, w
                    elif h == 0 and health[w] == 1:
                        slot, src, dst = rev[s], w, x
                    else:
                        continue
                    census[_edge_class(src, dst, ntype, loc)] += 1
                    if loc[src] == loc[dst]:
                        k = _pool_key(src, dst, ntype, loc, by_type)
                        _add(aitems, apos, asize, k, slot)
                        akey[slot] = k
            if audit:
                log = _log(log, nlog, t, 0, x, loc[x], -1, rate)
                nlog += 1
        elif u < r_travel + r_rec or r_inf0 + r_inf1 == 0:
            idx = min(int((u - r_travel) / gamma), isize[0] - 1)
            x = iitems[0, idx]
            event_counts[1] += 1
            _remove(iitems, ipos, isize, 0, x)
            infected -= 1
            for s in range(indptr[x], indptr[x + 1]):
                w = indices[s]
                if health[w] == 0:
                    census[_edge_class(x, w, ntype, loc)] -= 1
                    if apos[s] >= 0:
                        _remove(aitems, apos, asize, akey[s], s)
                        akey[s] = -1
            health[x] = 2
            counts_type[1, ntype[x] - 1] -= 1
            counts_type[2, ntype[x] - 1] += 1
            counts_loc[1, loc[x] - 1] -= 1
            counts_loc[2, loc[x] - 1] += 1
            if audit:
                log = _log(log, nlog, t, 1, x, -1, -1, gamma)
                nlog += 1
        else:
            u -= r_travel + r_rec
            if u < r_inf0 or r_inf1 == 0:
                pool, rate = 0, beta
                idx = min(int(u / beta), asize[0] - 1)
            else:
                pool, rate = 1, beta1
                idx = min(int((u - r_inf0) / beta1), asize[1] - 1)
            slot = aitems[pool, idx]
            src = slot_src[slot]
            x = indices[slot]
            event_counts[2] += 1
            cls = _edge_class(src, x, ntype, loc)
            if audit:
                log = _log(log, nlog, t, 2, x, src, cls, rate)
                nlog += 1
            health[x] = 1
            _add(iitems, ipos, isize, 0, x)
            infected += 1
            counts_type[0, ntype[x] - 1] -= 1
            counts_type[1, ntype[x] - 1] += 1
            counts_loc[0, loc[x] - 1] -= 1
            counts_loc[1, loc[x] - 1] += 1
            for s in range(indptr[x], indptr[x + 1]):
                w = indices[s]
                hw = health[w]
                if hw == 1:
                    # pair w -> x no longer infected-to-susceptible
                    r = rev[s]
                    census[_edge_class(w, x, ntype, loc)] -= 1
                    if apos[r] >= 0:
                        _remove(aitems, apos, asize, akey[r], r)
                        akey[r] = -1
                elif hw == 0:
                    census[_edge_class(x, w, ntype, loc)] += 1
                    if loc[x] == loc[w]:
                        k = _pool_key(x, w, ntype, loc, by_type)
                        _add(aitems, apos, asize, k, s)
                        akey[s] = k

    home_unflagged = 0
    flagged = 0
    for v in range(nn):
        if traveled[v]:
            flagged += 1
        else:
            home_unflagged += 1
    if audit:
        check = _recount(indptr, indices, slot_src, health, ntype, loc)
        for k in range(16):
            if check[k] != census[k]:
                mismatches += 1
                break
    return (rows[:nrows].copy(), stops, y2_at_tau1, travelers_by_T, flagged, home_unflagged, status,
            log[:nlog].copy(), mismatches, event_counts, health, loc, t, banned)


def slot_arrays(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Source node of every CSR slot and the slot of the reverse direction."""
    nn = graph.num_nodes
    src = np.repeat(np.arange(nn, dtype=np.int64), graph.degrees())
    dst = graph.indices.astype(np.int64)
    fwd = src * nn + dst
    rev = np.searchsorted(fwd, dst * nn + src)
    return src, rev


def _check_inputs(graph: Graph, params: ModelParams) -> None:
    if graph.n != params.n:
        raise ParameterError(f"graph has 2n={graph.num_nodes} nodes but params.n={params.n}")


def simulate_ctmc(graph: Graph, params: ModelParams, policy: InterventionPolicy = NO_POLICY,
                  horizon: float | None = None, rng_seed=None, sampling_dt: float = 0.05,
                  epsilon: float | None = None, max_events: int = 200_000_000,
                  audit: bool = False, slots: tuple | None = None) -> RunResult:
    """Run one replication until no infected node remains.

    ``epsilon`` defines the noticeable-outbreak thresholds of the stopping
    times (defaults to the policy trigger level).  ``horizon`` bounds the
    ever-travelled bookkeeping only (default ``ln(n)^2``).  With ``audit`` the
    run keeps an event log and recounts the edge census at every sample.
    """
    _check_inputs(graph, params)
    policy.validate_for(params)
    seed = params.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    n = params.n
    horizon = default_horizon(n) if horizon is None else float(horizon)
    if horizon < 0:
        raise ParameterError("horizon must be nonnegative")
    eps = policy.trigger_epsilon if epsilon is None else epsilon
    rho_T, rho_H = params.rho_T, params.rho_H
    p_away = rho_T / (rho_T + rho_H)

    seed_node = pick_seed(graph.node_type, rng)
    loc = initial_locations(graph.node_type, seed_node, p_away, rng)
    slot_src, rev = slot_arrays(graph) if slots is None else slots
    bp = policy.beta_prime if policy.beta_prime is not None else params.beta
    out = _run(graph.indptr, graph.indices, slot_src, rev, graph.node_type.astype(np.int64),
               loc.astype(np.int64), seed_node, n, float(params.beta), float(bp), float(params.gamma),
               float(rho_T), float(rho_H), _POLICY_CODE[policy.kind], policy.scope == "type",
               threshold_count(policy.trigger_epsilon, n), threshold_count(eps, n),
               policy.trigger_basis == "location_counts", horizon, float(sampling_dt),
               int(max_events), bool(audit), rng)
    (rows, stops, y2, travelers, flagged, home_unflagged, status, log, mism, counts, health,
     loc_final, t_last, banned) = out
    if travelers < 0:
        # epidemic ended before the window closed
        travelers = fill_travelers(flagged, home_unflagged, horizon - t_last, rho_T, banned, rng)
    ever = health != 0
    r1 = int(np.count_nonzero(ever & (graph.node_type == 1)))
    r2 = int(np.count_nonzero(ever & (graph.node_type == 2)))
    result = RunResult(
        trajectory=Trajectory(rows),
        stopping_times=StoppingTimes(*[float(v) for v in stops]),
        R1_inf=r1, R2_inf=r2, Y2_at_tau1=int(y2) if y2 >= 0 else None,
        travelers_by_T=int(travelers), seed=seed, params=params, policy=policy, engine="ctmc",
        event_counts=tuple(int(c) for c in counts), event_log=log if audit else None,
        census_mismatches=int(mism), final_health=health.astype(np.int8), final_location=loc_final.astype(np.int8),
        complete=status == 0)
    if status != 0:
        raise BudgetError(f"event cap {max_events} reached at t={t_last:.6g}", result)
    return result
