"""Monte Carlo ensembles: replication, outbreak classification, conditional
statistics, scaling fits and paired policy comparisons."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .analytics import solve_r_inf
from .engine.core import NO_POLICY, InterventionPolicy, RunResult
from .engine.ctmc import simulate_ctmc
from .netgen import gen_configuration_geometric, gen_two_community_er
from .params import ModelParams, ParameterError, params_from_dict

TABLE_COLUMNS = ("rep", "seed", "n", "alpha", "policy", "outbreak", "tau_12", "tau_1_eps", "tau_2_eps",
                 "tau_end", "R1_inf", "R2_inf", "Y2_at_tau1", "travelers_by_T")
TIMES = ("tau_12", "tau_1_eps", "tau_2_eps", "tau_end")
QUANTILES = (0.1, 0.9)
TOLERANCE_NOTE = ("finite-n tolerances are pilot-calibrated engineering choices; "
                  "the underlying limits are asymptotic")


def derive_seed(master_seed: int, rep: int, n: int | None = None) -> int:
    """128-bit stream key for one replication (injective in practice via BLAKE2b)."""
    tag = f"{master_seed}:{rep}" if n is None else f"{master_seed}:{n}:{rep}"
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=16).digest(), "little")


def classify_outbreak(run: RunResult | dict, n: int) -> bool:
    """Large outbreak: at least ``ln n`` individuals ever infected."""
    if isinstance(run, dict):
        total = run["R1_inf"] + run["R2_inf"]
    else:
        total = run.R1_inf + run.R2_inf
    return total >= math.log(n)


@dataclass(frozen=True)
class EnsembleConfig:
    """One ensemble: the same model replicated, optionally over several community sizes.

    ``graph`` is ``"er"`` (two-community Erdos-Renyi with ``params.c``) or
    ``"configuration"`` (geometric degrees with mean ``mean_degree``).
    """

    params: ModelParams
    policy: InterventionPolicy = NO_POLICY
    replications: int = 100
    n_grid: Optional[tuple] = None
    epsilon: float = 0.01
    master_seed: int = 0
    jobs: int = 1
    graph: str = "er"
    mean_degree: Optional[float] = None
    sampling_dt: float = 0.05
    keep_trajectories: bool = False
    horizon: Optional[float] = None

    def __post_init__(self):
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if self.graph not in ("er", "configuration"):
            raise ParameterError("graph must be 'er' or 'configuration'")
        if self.graph == "configuration" and not self.mean_degree:
            raise ParameterError("configuration graphs need mean_degree")
        if not 0 < self.epsilon < 1:
            raise ParameterError("epsilon must lie in (0, 1)")
        if self.n_grid is not None:
            object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))

    def check_epsilon(self) -> Optional[str]:
        p = self.params
        r_inf = solve_r_inf(p.c * p.beta / (p.beta + p.gamma)).value if p.beta > 0 else 0.0
        if not self.epsilon < r_inf:
            msg = f"epsilon={self.epsilon} is not below the final size {r_inf:.4g}"
            warnings.warn(msg, RuntimeWarning)
            return msg
        return None

    def sizes(self) -> tuple:
        return self.n_grid or (self.params.n,)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["params"] = self.params.to_dict()
        d["policy"] = self.policy.to_dict()
        d.pop("jobs")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def same_except_policy(self, other: "EnsembleConfig") -> bool:
        a, b = self.to_dict(), other.to_dict()
        a.pop("policy")
        b.pop("policy")
        return a == b


def config_from_dict(doc: dict) -> EnsembleConfig:
    doc = dict(doc)
    params = params_from_dict(doc.pop("params"))
    policy = InterventionPolicy(**doc.pop("policy", {}))
    return EnsembleConfig(params=params, policy=policy, **doc)


@dataclass
class Replication:
    record: dict
    peak_I1_t: float = math.nan
    peak_I2_t: float = math.nan
    trajectory: Optional[np.ndarray] = None


def make_graph(config: EnsembleConfig, n: int, seed):
    p = config.params
    if config.graph == "er":
        return gen_two_community_er(n, p.c, p.c_cross, rng_seed=seed)
    return gen_configuration_geometric(n, config.mean_degree, rng_seed=seed)


def run_replication(config: EnsembleConfig, n: int, rep: int) -> Replication:
    """One replication end to end: fresh graph, one epidemic."""
    key = derive_seed(config.master_seed, rep, n if config.n_grid else None)
    graph_seq, sim_seq = np.random.SeedSequence(key).spawn(2)
    params = config.params.with_n(n)
    graph = make_graph(config, n, graph_seq)
    run = simulate_ctmc(graph, params, config.policy, horizon=config.horizon, rng_seed=sim_seq,
                        sampling_dt=config.sampling_dt, epsilon=config.epsilon)
    st = run.stopping_times
    record = {
        "rep": rep, "seed": key, "n": n, "alpha": params.alpha, "policy": config.policy.kind,
        "outbreak": classify_outbreak(run, n), "tau_12": st.tau_12, "tau_1_eps": st.tau_1_eps,
        "tau_2_eps": st.tau_2_eps, "tau_end": st.tau_end, "R1_inf": run.R1_inf, "R2_inf": run.R2_inf,
        "Y2_at_tau1": run.Y2_at_tau1, "travelers_by_T": run.travelers_by_T,
    }
    traj = run.trajectory
    out = Replication(record)
    if len(traj):
        out.peak_I1_t = float(traj.t[np.argmax(traj.column("I1"))])
        out.peak_I2_t = float(traj.t[np.argmax(traj.column("I2"))]) if traj.column("I2").max() > 0 else math.nan
    if config.keep_trajectories:
        out.trajectory = traj.rows
    return out


def _task(args):
    config, n, rep = args
    try:
        return run_replication(config, n, rep)
    except Exception as exc:  # surfaced as a failed replication
        return (n, rep, f"{type(exc).__name__}: {exc}")


@dataclass
class QuantityStats:
    count: int
    finite: int
    mean: Optional[float]
    median: Optional[float]
    q10: Optional[float]
    q90: Optional[float]
    stderr: Optional[float]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def quantity_stats(values: Sequence[float]) -> QuantityStats:
    """Median and quantiles over all values (infinities included, undefined ones dropped);
    mean over finite values."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    fin = v[np.isfinite(v)]
    if len(v) == 0:
        return QuantityStats(0, 0, None, None, None, None, None)
    med, q10, q90 = (float(np.quantile(v, q, method="inverted_cdf")) for q in (0.5,) + QUANTILES)
    mean = float(fin.mean()) if len(fin) else None
    se = float(fin.std(ddof=1) / math.sqrt(len(fin))) if len(fin) > 1 else None
    return QuantityStats(len(v), len(fin), mean, med, q10, q90, se)


def _log_ratio(y, n: int) -> float:
    if y is None:
        return math.nan
    return math.log(y) / math.log(n) if y > 0 else -math.inf


def conditional_values(records: Sequence[dict], n: int, lam: float) -> dict[str, np.ndarray]:
    """Per-quantity values over the large-outbreak runs among ``records``."""
    big = [r for r in records if r["outbreak"]]
    out = {q: np.array([r[q] for r in big], dtype=float) for q in TIMES}
    for q in TIMES:
        out[f"lambda_{q}"] = lam * out[q]
        out[f"lambda_{q}_over_ln_n"] = lam * out[q] / math.log(n)
    out["R1_inf_frac"] = np.array([r["R1_inf"] / n for r in big], dtype=float)
    out["R2_inf_frac"] = np.array([r["R2_inf"] / n for r in big], dtype=float)
    out["log_Y2_at_tau1_over_ln_n"] = np.array([_log_ratio(r["Y2_at_tau1"], n) for r in big], dtype=float)
    out["log_R2_inf_over_ln_n"] = np.array([_log_ratio(r["R2_inf"], n) for r in big], dtype=float)
    return out


@dataclass
class EnsembleSummary:
    config: EnsembleConfig
    replications: list
    failures: list
    per_n: dict
    scaling_fits: dict
    warnings: list = field(default_factory=list)

    def records(self, n: Optional[int] = None) -> list[dict]:
        return [r.record for r in self.replications if n is None or r.record["n"] == n]

    def outbreak_fraction(self, n: Optional[int] = None) -> tuple[float, Optional[float]]:
        flags = [r["outbreak"] for r in self.records(n)]
        p = float(np.mean(flags))
        se = math.sqrt(p * (1 - p) / len(flags)) if len(flags) > 1 else None
        return p, se

    def metadata(self) -> dict:
        return {"config_hash": self.config.config_hash(), "version": __version__,
                "tolerance_note": TOLERANCE_NOTE}

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata(),
            "config": self.config.to_dict(),
            "replications": len(self.replications),
            "failed": [list(f) for f in self.failures],
            "per_n": {str(n): v for n, v in self.per_n.items()},
            "scaling_fits": self.scaling_fits,
            "warnings": self.warnings,
        }

    def table_csv(self) -> str:
        return replication_table_csv(self.records(), self.metadata())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def replication_table_csv(records: Sequence[dict], metadata: Optional[dict] = None) -> str:
    buf = io.StringIO()
    if metadata:
        buf.write(f"# {json.dumps(metadata, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in records:
        w.writerow([_fmt(r[c]) for c in TABLE_COLUMNS])
    return buf.getvalue()


def summarize_n(records: Sequence[dict], n: int, lam: float) -> dict:
    flags = [r["outbreak"] for r in records]
    k = len(flags)
    p = float(np.mean(flags)) if k else math.nan
    summary = {
        "replications": k,
        "outbreaks": int(sum(flags)),
        "outbreak_fraction": p,
        "outbreak_fraction_stderr": math.sqrt(p * (1 - p) / k) if k > 1 else None,
    }
    cond = conditional_values(records, n, lam)
    summary["conditional"] = {q: quantity_stats(v).to_dict() for q, v in cond.items()}
    return summary


def fit_scaling(per_n: dict, quantity: str) -> Optional[dict]:
    """Least-squares line of the conditional median of ``quantity`` against ln n."""
    xs, ys = [], []
    for n, s in sorted(per_n.items()):
        med = s["conditional"].get(quantity, {}).get("median")
        if med is not None and math.isfinite(med):
            xs.append(math.log(n))
            ys.append(med)
    if len(xs) < 2:
        return None
    if len(xs) == 2:
        slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        return {"slope": slope, "intercept": ys[0] - slope * xs[0], "slope_stderr": None,
                "intercept_stderr": None, "points": len(xs)}
    res = stats.linregress(xs, ys)
    return {"slope": float(res.slope), "intercept": float(res.intercept), "slope_stderr": float(res.stderr),
            "intercept_stderr": float(res.intercept_stderr), "points": len(xs)}


def _lambda(params: ModelParams) -> float:
    return params.c * params.beta - params.beta - params.gamma


def run_ensemble(config: EnsembleConfig) -> EnsembleSummary:
    """Run every (n, replication) pair; aggregation follows index order, so the
    result does not depend on scheduling."""
    notes = []
    msg = config.check_epsilon()
    if msg:
        notes.append(msg)
    tasks = [(config, n, rep) for n in config.sizes() for rep in range(config.replications)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * config.jobs))))
    else:
        results = [_task(t) for t in tasks]
    reps = [r for r in results if isinstance(r, Replication)]
    failures = [r for r in results if not isinstance(r, Replication)]
    lam = _lambda(config.params)
    per_n = {}
    for n in config.sizes():
        recs = [r.record for r in reps if r.record["n"] == n]
        per_n[n] = summarize_n(recs, n, lam)
    fits = {}
    if len(config.sizes()) > 1:
        # the slope of lambda * tau against ln n is the exponent of the time scale
        for q in TIMES:
            fits[f"lambda_{q}"] = fit_scaling(per_n, f"lambda_{q}")
        fits["log_Y2_at_tau1_over_ln_n"] = fit_scaling(per_n, "log_Y2_at_tau1_over_ln_n")
    return EnsembleSummary(config, reps, failures, per_n, fits, notes)


def _paired_stat(values: np.ndarray, flags: np.ndarray, idx: np.ndarray, stat: str) -> np.ndarray:
    """Conditional mean (or median) over resampled rows, ignoring non-finite entries."""
    v = values[idx]
    keep = flags[idx] & np.isfinite(v)
    if stat == "fraction":
        return flags[idx].mean(axis=-1)
    cnt = keep.sum(axis=-1)
    tot = np.where(keep, v, 0.0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return tot / cnt


def bootstrap_difference(a_vals, a_flags, b_vals, b_flags, stat: str = "mean", resamples: int = 10_000,
                         seed: int = 0, level: float = 0.95) -> dict:
    """Paired percentile bootstrap for ``stat(B) - stat(A)`` over shared replication indices."""
    a_vals, b_vals = np.asarray(a_vals, float), np.asarray(b_vals, float)
    a_flags, b_flags = np.asarray(a_flags, bool), np.asarray(b_flags, bool)
    k = len(a_vals)
    rng = np.random.default_rng(seed)
    point = (_paired_stat(b_vals, b_flags, np.arange(k), stat)
             - _paired_stat(a_vals, a_flags, np.arange(k), stat))
    diffs = np.empty(resamples)
    chunk = 1000
    for lo in range(0, resamples, chunk):
        idx = rng.integers(0, k, size=(min(chunk, resamples - lo), k))
        diffs[lo:lo + len(idx)] = _paired_stat(b_vals, b_flags, idx, stat) - _paired_stat(a_vals, a_flags, idx, stat)
    diffs = diffs[np.isfinite(diffs)]
    tail = (1 - level) / 2
    lo, hi = (float(np.quantile(diffs, q)) for q in (tail, 1 - tail)) if len(diffs) else (math.nan, math.nan)
    return {"difference": float(point), "ci_low": lo, "ci_high": hi, "width": hi - lo,
            "contains_zero": bool(lo <= 0 <= hi), "resamples": int(len(diffs))}


def compare_policies(config_a: EnsembleConfig, config_b: EnsembleConfig, resamples: int = 10_000,
                     summaries: Optional[tuple] = None) -> dict:
    """Paired comparison of two ensembles that differ only in their policy.

    Both arms share the master seed, so replication ``k`` sees the same graph
    and random stream in each arm.
    """
    if not config_a.same_except_policy(config_b):
        raise ParameterError("configurations must be identical except for the policy")
    if summaries is None:
        summaries = (run_ensemble(config_a), run_ensemble(config_b))
    sa, sb = summaries
    lam = _lambda(config_a.params)
    report = {"metadata": sa.metadata(), "policy_a": config_a.policy.to_dict(),
              "policy_b": config_b.policy.to_dict(), "per_n": {}}
    for n in config_a.sizes():
        ra = {r.record["rep"]: r for r in sa.replications if r.record["n"] == n}
        rb = {r.record["rep"]: r for r in sb.replications if r.record["n"] == n}
        shared = sorted(set(ra) & set(rb))
        fa = np.array([ra[k].record["outbreak"] for k in shared])
        fb = np.array([rb[k].record["outbreak"] for k in shared])

        def col(side, fn):
            return np.array([fn(side[k]) for k in shared], dtype=float)

        quantities = {
            "R2_inf_frac": lambda r: r.record["R2_inf"] / n,
            "R1_inf_frac": lambda r: r.record["R1_inf"] / n,
            "log_R2_inf_over_ln_n": lambda r: _log_ratio(r.record["R2_inf"], n),
            "lambda_tau_2_eps_over_ln_n": lambda r: lam * r.record["tau_2_eps"] / math.log(n),
            "peak_I2_t": lambda r: r.peak_I2_t,
        }
        entry = {"paired_replications": len(shared),
                 "outbreak_fraction": bootstrap_difference(fa.astype(float), fa, fb.astype(float), fb,
                                                           "fraction", resamples, seed=n)}
        for name, fn in quantities.items():
            entry[name] = bootstrap_difference(col(ra, fn), fa, col(rb, fn), fb, "mean", resamples, seed=n)
        report["per_n"][str(n)] = entry
    return report
