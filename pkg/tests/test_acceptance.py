"""Exit criteria at their stated tolerances, one report line per criterion.

Ensembles are cached per module so criteria sharing a configuration run it once.
"""

import copy
import math
import time

import numpy as np
import pytest
from scipy import stats

from travelsir.analytics import MeanFieldState, bp_survival_mc, meanfield_integrate, solve_pi, solve_r_inf
from travelsir.cli import OPTION_DEFAULTS, matrix_suite
from travelsir.engine import InterventionPolicy, simulate_ctmc
from travelsir.engine.core import EVENT_TRAVEL
from travelsir.engine.digraph import simulate_digraph
from travelsir.experiments import EnsembleConfig, compare_policies, derive_seed, run_ensemble
from travelsir.netgen import gen_two_community_er
from travelsir.params import ModelParams, derive
from travelsir.ratematrix import expected_bound_curves

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

RATES = dict(c=6, beta=1.5, gamma=3)
LAM = 4.5
R_INF = solve_r_inf(2.0).value


def rates(n, **kw):
    return ModelParams.scaled(n=n, **RATES, **kw)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def cond(summary, n, quantity, stat="median"):
    return summary.per_n[n]["conditional"][quantity][stat]


@pytest.fixture(scope="module")
def base_1e4():
    cfg = EnsembleConfig(params=rates(10_000), replications=1000, epsilon=0.01, master_seed=1)
    return timed(run_ensemble, cfg)


@pytest.fixture(scope="module")
def grid_ensemble():
    cfg = EnsembleConfig(params=rates(1000), replications=400, n_grid=(1000, 10_000, 100_000), epsilon=0.01,
                         master_seed=3)
    return timed(run_ensemble, cfg)


# ---------------------------------------------------------------- 1, 2

def test_criterion_1_outbreak_probability(base_1e4, report):
    summary, elapsed = base_1e4
    (pi_hat, se), t_extra = timed(summary.outbreak_fraction, 10_000)
    pi = solve_pi(6, 1.5, 3, tol=1e-10).value
    (mc, mc_se), t_mc = timed(bp_survival_mc, 6, 1.5, 3, 100_000, rng_seed=11)
    runtime = elapsed + t_extra + t_mc
    ok = abs(pi_hat - pi) <= 0.04 and abs(pi - mc) <= 0.01 and runtime <= 600
    report("1 outbreak probability", ok,
           f"empirical={pi_hat:.4f}±{se:.4f} solve_pi={pi:.4f} bp_mc={mc:.4f} runtime={runtime:.0f}s")
    assert ok


def test_criterion_2_final_sizes(base_1e4, report):
    summary, _ = base_1e4
    r1 = cond(summary, 10_000, "R1_inf_frac", "mean")
    r2 = cond(summary, 10_000, "R2_inf_frac", "mean")
    ok = abs(r1 - R_INF) <= 0.02 and abs(r2 - R_INF) <= 0.02 and abs(R_INF - 0.7968) < 1e-4
    report("2 final sizes", ok, f"R1/n={r1:.4f} R2/n={r2:.4f} r_inf={R_INF:.4f}")
    assert ok


# ---------------------------------------------------------------- 3, 4

TIMING_TARGETS = {"lambda_tau_12_over_ln_n": (0.5, 0.15), "lambda_tau_1_eps_over_ln_n": (1.0, 0.15),
                  "lambda_tau_2_eps_over_ln_n": (1.5, 0.2)}


def test_criterion_3_timing_scaling(grid_ensemble, report):
    summary, elapsed = grid_ensemble
    grid = (1000, 10_000, 100_000)
    parts, ok = [], elapsed <= 3600
    for q, (target, tol) in TIMING_TARGETS.items():
        meds = [cond(summary, n, q) for n in grid]
        dist = [abs(m - target) for m in meds]
        point = dist[-1] <= tol
        monotone = all(b <= a for a, b in zip(dist, dist[1:]))
        ok &= point and monotone
        parts.append(f"{q.split('_over')[0]}: " + "/".join(f"{m:.3f}" for m in meds)
                     + f" (target {target}±{tol}, monotone={monotone})")
    report("3 timing scaling", ok, "; ".join(parts) + f"; runtime={elapsed:.0f}s")
    assert ok


def test_timing_slopes_and_extinction_time(grid_ensemble, report):
    summary, _ = grid_ensemble
    fits = summary.scaling_fits
    slopes = {q: fits[f"lambda_{q}"]["slope"] for q in ("tau_12", "tau_1_eps", "tau_2_eps")}
    ok = (abs(slopes["tau_12"] - 0.5) <= 0.15 and abs(slopes["tau_1_eps"] - 1.0) <= 0.15
          and abs(slopes["tau_2_eps"] - 1.5) <= 0.2)
    report("3 (slope fit, ensemble example)", ok, " ".join(f"{k}={v:.3f}" for k, v in slopes.items()))
    ratio = (cond(summary, 100_000, "tau_end") / math.log(1e5)) / (cond(summary, 10_000, "tau_end") / math.log(1e4))
    report("3 (extinction time O(ln n), ensemble invariant)", ratio <= 2, f"median ratio={ratio:.3f}")
    assert ok and ratio <= 2


def test_criterion_4_seeding_exponent(grid_ensemble, report):
    summary, _ = grid_ensemble
    med = cond(summary, 100_000, "log_Y2_at_tau1_over_ln_n")
    ok = 0.35 <= med <= 0.65
    report("4 seeding exponent", ok, f"median ln Y2(tau1)/ln n={med:.3f} at n=1e5 (range [0.35, 0.65])")
    assert ok


# ---------------------------------------------------------------- 5, 6

def test_criterion_5_travel_ban(report):
    none = EnsembleConfig(params=rates(10_000), replications=500, epsilon=0.01, master_seed=5)
    ban = EnsembleConfig(params=rates(10_000), replications=500, epsilon=0.01, master_seed=5,
                         policy=InterventionPolicy("travel_ban", trigger_epsilon=0.01))
    res = compare_policies(none, ban, resamples=10_000)["per_n"]["10000"]
    r2, tau2 = res["R2_inf_frac"], res["lambda_tau_2_eps_over_ln_n"]
    ok_r2 = r2["contains_zero"] and r2["width"] <= 0.05
    ok_tau = tau2["ci_low"] >= -0.1 and tau2["ci_high"] <= 0.1
    report("5 travel ban", ok_r2 and ok_tau,
           f"dR2/n={r2['difference']:.4f} CI=[{r2['ci_low']:.4f},{r2['ci_high']:.4f}] width={r2['width']:.4f}; "
           f"d(lambda tau2/ln n)={tau2['difference']:.4f} CI=[{tau2['ci_low']:.4f},{tau2['ci_high']:.4f}]")
    assert ok_r2 and ok_tau


def test_criterion_6_social_distancing(report):
    pol = InterventionPolicy("social_distancing", trigger_epsilon=0.01, beta_prime=0.5)
    cfg = EnsembleConfig(params=rates(10_000), policy=pol, replications=300, n_grid=(10_000, 100_000),
                         epsilon=0.01, master_seed=6)
    summary = run_ensemble(cfg)
    r2_small = cond(summary, 10_000, "R2_inf_frac", "mean")
    r2_big = cond(summary, 100_000, "R2_inf_frac", "mean")
    expo = cond(summary, 100_000, "log_R2_inf_over_ln_n")
    r1 = cond(summary, 100_000, "R1_inf_frac", "mean")
    ok = r2_big <= 0.05 and r2_big < r2_small and 0.35 <= expo <= 0.65 and abs(r1 - R_INF) <= 0.02
    report("6 social distancing", ok,
           f"R2/n: {r2_small:.4f} (1e4) -> {r2_big:.4f} (1e5); ln R2/ln n={expo:.3f}; R1/n={r1:.4f}")
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_7_rate_matrices(report):
    opts = copy.deepcopy(OPTION_DEFAULTS["matrix-check"])
    t0 = time.perf_counter()
    results = {n: matrix_suite(rates(n), opts, seed=n) for n in (1000, 10_000)}
    elapsed = time.perf_counter() - t0
    ok = all(r["ok"] for r in results.values()) and elapsed <= 60
    bad = {n: [k for k, v in r["checks"].items() if not v["ok"]] for n, r in results.items()}
    worst = max(r["checks"]["perturbation"]["worst_ratio"] for r in results.values())
    report("7 rate-matrix suite", ok, f"failed={bad} worst perturbation ratio={worst:.3f} runtime={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_8_bound_domination(report):
    n = 10_000
    params = rates(n)
    cfg = EnsembleConfig(params=params, replications=2000, epsilon=0.01, master_seed=8, keep_trajectories=True)
    summary = run_ensemble(cfg)
    t_grid = np.arange(0.0, 0.9 * math.log(n) / LAM, 0.05)
    ys = np.empty((len(summary.replications), 2, len(t_grid)))
    for k, rep in enumerate(summary.replications):
        rows = rep.trajectory
        idx = np.searchsorted(rows[:, 0], t_grid, side="right") - 1
        ys[k, 0] = rows[idx, 2] + rows[idx, 3]
        ys[k, 1] = rows[idx, 5] + rows[idx, 6]
    mean = ys.mean(axis=0)
    se = ys.std(axis=0, ddof=1) / math.sqrt(len(ys))
    curves = expected_bound_curves(params, t_grid)
    slack1 = curves.B1 + 3 * se[0] - mean[0]
    slack2 = curves.B2 + 3 * se[1] - mean[1]
    ok = bool(np.all(slack1 >= 0) and np.all(slack2 >= 0))
    last = -1
    report("8 bound domination", ok,
           f"t<={t_grid[-1]:.2f}: min slack Y1={slack1.min():.3g} Y2={slack2.min():.3g}; "
           f"at end mean Y1={mean[0, last]:.4g} <= {curves.B1[last]:.4g}, "
           f"Y2={mean[1, last]:.4g} <= {curves.B2[last]:.4g}")
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_9_engine_equivalence(report):
    n = 200
    params = rates(n)
    sizes = {"ctmc": [], "digraph": []}
    ends = {"ctmc": [], "digraph": []}
    for k in range(2000):
        for name, fn, master in (("ctmc", simulate_ctmc, 91), ("digraph", simulate_digraph, 92)):
            graph_seq, sim_seq = np.random.SeedSequence(derive_seed(master, k)).spawn(2)
            g = gen_two_community_er(n, 6, rng_seed=graph_seq)
            run = fn(g, params, rng_seed=sim_seq)
            sizes[name].append(run.R1_inf + run.R2_inf)
            ends[name].append(run.stopping_times.tau_end)
    p = stats.ks_2samp(sizes["ctmc"], sizes["digraph"]).pvalue
    a, b = np.array(ends["ctmc"]), np.array(ends["digraph"])
    pooled = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    gap = abs(a.mean() - b.mean())
    ok = p > 0.01 and gap <= 2 * pooled
    report("9 engine equivalence", ok,
           f"KS p={p:.3f}; tau_end means {a.mean():.3f} vs {b.mean():.3f} (gap {gap:.3f}, 2se={2 * pooled:.3f})")
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_mean_field_limit(report):
    n = 100_000
    params = ModelParams(n=n, **RATES, rho_T=0.0)
    dq = derive(params.replace(rho_T=1.0))  # the mean-field system does not involve travel
    worst, outbreaks = 0.0, 0
    for k in range(20):
        graph_seq, sim_seq = np.random.SeedSequence(derive_seed(10, k)).spawn(2)
        g = gen_two_community_er(n, 6, rng_seed=graph_seq)
        run = simulate_ctmc(g, params, rng_seed=sim_seq, epsilon=0.05, sampling_dt=0.05)
        tau = run.stopping_times.tau_1_eps
        if not math.isfinite(tau) or run.R1_inf < math.log(n):
            continue
        outbreaks += 1
        tr = run.trajectory
        start = int(np.flatnonzero(tr.t == tau)[0])
        row = tr.rows[start]
        init = MeanFieldState(s=row[1] / n, x=row[13] / n, i=row[2] / n, r=row[3] / n, t=tau)
        ts = tr.t[start:]
        ode = meanfield_integrate(dq, init, ts[-1] - tau, t_eval=ts)
        dev = np.abs(tr.column("S1")[start:] / n - np.array([s.s for s in ode]))
        worst = max(worst, float(dev.max()))
    ok = outbreaks > 0 and worst <= 0.05
    report("10 mean-field limit", ok, f"sup |S/n - s| = {worst:.4f} over {outbreaks} outbreaks")
    assert ok


# ---------------------------------------------------------------- 11

def _exact_travel_probability(p):
    p_T = p.rho_T / (p.rho_T + p.rho_H)
    return p_T + (1 - p_T) * -math.expm1(-p.rho_T * math.log(p.n) ** 2)


def test_criterion_11_invariants(report, check_run):
    n = 1000
    params = rates(n)
    results = {}
    failures = {k: 0 for k in ("conservation", "determinism", "census", "ban_freeze")}
    travelers = []
    ban = InterventionPolicy("travel_ban", trigger_epsilon=0.01)
    for k in range(100):
        graph_seq, sim_seq = np.random.SeedSequence(derive_seed(11, k)).spawn(2)
        g = gen_two_community_er(n, 6, rng_seed=graph_seq)
        run = simulate_ctmc(g, params, rng_seed=sim_seq, sampling_dt=0.1, audit=True)
        try:
            check_run(run, n)
        except AssertionError:
            failures["conservation"] += 1
        again = simulate_ctmc(g, params, rng_seed=sim_seq, sampling_dt=0.1, audit=True)
        failures["determinism"] += again.trajectory.rows.tobytes() != run.trajectory.rows.tobytes()
        failures["census"] += run.census_mismatches != 0
        travelers.append(run.travelers_by_T)
        banned = simulate_ctmc(g, params, ban, rng_seed=sim_seq, audit=True)
        log = banned.event_log
        late = log[:, 0] > banned.stopping_times.t_trigger
        failures["ban_freeze"] += bool(np.any((log[:, 1] == EVENT_TRAVEL) & late))
    results.update({k: v == 0 for k, v in failures.items()})

    # exact per-node probability of travelling by ln^2 n
    q = _exact_travel_probability(params)
    sd = math.sqrt(2 * n * q * (1 - q) / len(travelers))
    results["travelers_exact"] = abs(np.mean(travelers) - 2 * n * q) <= 4 * sd + 1

    # the asymptotic count, at the size and run count where it is stated
    big = rates(100_000)
    g = gen_two_community_er(100_000, 6, rng_seed=np.random.SeedSequence(derive_seed(11, -1)))
    counts = [simulate_ctmc(g, big, rng_seed=np.random.SeedSequence(derive_seed(12, k)),
                            sampling_dt=5.0).travelers_by_T for k in range(50)]
    p_T = big.rho_T / (big.rho_T + big.rho_H)
    target = 2 * big.n * p_T * (1 + big.rho_H * math.log(big.n) ** 2)
    rel = abs(np.mean(counts) - target) / target
    results["travelers_asymptotic"] = rel <= 0.1
    ok = all(results.values())
    report("11 invariant suites", ok,
           " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in results.items())
           + f" (asymptotic count rel. deviation {rel:.3f}; exact mean {np.mean(travelers):.1f} vs {2 * n * q:.1f})")
    assert ok
