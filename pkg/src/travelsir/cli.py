"""Command-line entry point.

Every command resolves one configuration document (file, then ``--set``
overrides, then dedicated flags), writes its outputs atomically into the
output directory and records the resolved document in ``manifest.json``.
Passing that manifest back as ``--config`` reproduces the run.

Exit status: 0 success, 1 invalid input, 2 runtime or budget failure
(including failed ``matrix-check`` suites).  Errors are also reported as one
JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (MeanFieldState, bp_survival_mc, meanfield_integrate, meanfield_rows, solve_pi,
                        solve_r_inf)
from .engine.core import BudgetError, InterventionPolicy
from .engine.ctmc import simulate_ctmc
from .engine.digraph import simulate_digraph
from .engine.io import write_run
from .experiments import EnsembleConfig, compare_policies, make_graph, run_ensemble
from .fileio import atomic_write_text, write_csv, write_json
from .netgen import dump, load
from .params import ModelParams, ParameterError, derive, params_from_dict
from .plotting import DEFAULT_SERIES, long_rows, render_panels
from . import ratematrix as rm

OUTPUT_ROOT_ENV = "TRAVELSIR_OUTPUT_ROOT"
MANIFEST = "manifest.json"
SECTIONS = ("params", "policy", "ensemble", "options", "seed")
_ENSEMBLE_FIELDS = {f.name for f in dataclasses.fields(EnsembleConfig)} - {"params", "policy", "jobs"}
_POLICY_FIELDS = {f.name for f in dataclasses.fields(InterventionPolicy)}

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class CheckFailed(RuntimeError):
    """A defect beyond tolerance or an exhausted budget; the partial outputs are still written."""

    def __init__(self, message: str, paths: list):
        super().__init__(message)
        self.paths = paths


# per-command option defaults; flags left unset fall back to the manifest, then to these
OPTION_DEFAULTS = {
    "derive": {},
    "solve-pi": {"c": None, "beta": None, "gamma": None, "tol": 1e-10, "mc_replications": 0},
    "solve-rinf": {"r0": None, "tol": 1e-12},
    "meanfield": {"t_end": 10.0, "mode": "conservative", "i0": None, "points": 201},
    "matrix-check": {"delta": 0.1, "beta_prime": None, "perturbations": 100, "w_norm": 1e-2,
                     "times": [0.5, 1.0, 5.0], "eig_tol": 1e-8, "triangular_tol": 1e-14,
                     "projector_tol": 1e-8},
    "bounds": {"points": 50, "t_max": None},
    "gen-graph": {"graph": "er", "mean_degree": None},
    "simulate": {"engine": "ctmc", "graph": "er", "mean_degree": None, "graph_file": None,
                 "dt": 0.05, "horizon": None, "audit": False, "max_events": 200_000_000},
    "ensemble": {},
    "compare": {"policy_b": "travel_ban", "resamples": 10_000},
    "plot-data": {"inputs": [], "series": list(DEFAULT_SERIES), "run_ids": None, "scale": None},
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def split_document(doc: dict) -> dict:
    """Normalize a config file, a manifest, or a flat parameter mapping into sections."""
    if not isinstance(doc, dict):
        raise ParameterError("configuration must be a JSON object")
    if "config" in doc and "command" in doc:
        doc = doc["config"]
    if "params" not in doc:
        doc = {"params": {k: v for k, v in doc.items() if k not in SECTIONS},
               **{k: v for k, v in doc.items() if k in SECTIONS}}
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ParameterError(f"unknown configuration sections: {sorted(unknown)}")
    out = {"params": dict(doc.get("params") or {}), "policy": dict(doc.get("policy") or {}),
           "ensemble": dict(doc.get("ensemble") or {}), "options": dict(doc.get("options") or {})}
    if doc.get("seed") is not None:
        out["seed"] = doc["seed"]
    return out


def apply_override(doc: dict, item: str) -> None:
    """``key=value`` sets a parameter; ``section.key=value`` sets a policy/ensemble/options field."""
    if "=" not in item:
        raise ParameterError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    value = _parse_value(raw)
    if key == "seed":
        doc["seed"] = value
        return
    section, _, name = key.rpartition(".")
    section = section or "params"
    if section not in ("params", "policy", "ensemble", "options") or not name:
        raise ParameterError(f"override key {key!r} names no configuration field")
    doc[section][name] = value


def load_document(path: str | None, overrides) -> dict:
    doc = {"params": {}, "policy": {}, "ensemble": {}, "options": {}}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = split_document(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides or ():
        apply_override(doc, item)
    return doc


def resolve_params(doc: dict) -> ModelParams:
    fields = dict(doc["params"])
    if "seed" in doc:
        fields["rng_seed"] = doc["seed"]
    return params_from_dict(fields)


def resolve_policy(doc: dict) -> InterventionPolicy:
    unknown = set(doc["policy"]) - _POLICY_FIELDS
    if unknown:
        raise ParameterError(f"unknown policy fields: {sorted(unknown)}")
    return InterventionPolicy(**doc["policy"])


def resolve_ensemble(doc: dict, params: ModelParams, policy: InterventionPolicy, jobs: int) -> EnsembleConfig:
    fields = dict(doc["ensemble"])
    unknown = set(fields) - _ENSEMBLE_FIELDS
    if unknown:
        raise ParameterError(f"unknown ensemble fields: {sorted(unknown)}")
    if "seed" in doc:
        fields["master_seed"] = doc["seed"]
    return EnsembleConfig(params=params, policy=policy, jobs=jobs, **fields)


def resolve_options(command: str, doc: dict, args: argparse.Namespace) -> dict:
    opts = dict(OPTION_DEFAULTS[command])
    unknown = set(doc["options"]) - set(opts)
    if unknown:
        raise ParameterError(f"unknown options for {command}: {sorted(unknown)}")
    opts.update(doc["options"])
    for name in OPTION_DEFAULTS[command]:
        value = getattr(args, name, None)
        if value is not None and value != []:
            opts[name] = value
    doc["options"] = opts
    return opts


def versions() -> dict:
    import matplotlib
    import numba
    import scipy
    return {"travelsir": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "matplotlib": matplotlib.__version__}


def output_dir(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, "travelsir-out")
    return Path(root) / args.command


def write_manifest(out: Path, command: str, doc: dict, outputs: list) -> None:
    write_json(out / MANIFEST, {
        "command": command,
        "config": doc,
        "seed": doc.get("seed"),
        "versions": versions(),
        "outputs": sorted(Path(p).name for p in outputs),
    })


def _params_section(params: ModelParams) -> dict:
    d = params.to_dict()
    d.pop("rng_seed")
    if d.get("rho0") is not None:
        d.pop("rho_T")
    return d


# ----------------------------------------------------------------- commands

def cmd_derive(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    dq = derive(params)
    return [write_json(out / "derived.json", dq.to_dict())]


def cmd_solve_pi(doc, opts, out, args):
    p = doc["params"]
    c = opts["c"] if opts["c"] is not None else p.get("c")
    beta = opts["beta"] if opts["beta"] is not None else p.get("beta")
    gamma = opts["gamma"] if opts["gamma"] is not None else p.get("gamma")
    if None in (c, beta, gamma):
        raise ParameterError("solve-pi needs c, beta and gamma (flags or config)")
    res = solve_pi(float(c), float(beta), float(gamma), tol=opts["tol"])
    report = {"c": c, "beta": beta, "gamma": gamma, "pi": res.value, **res.to_dict()}
    if opts["mc_replications"]:
        seed = doc.get("seed", 0)
        p_mc, se = bp_survival_mc(float(c), float(beta), float(gamma), int(opts["mc_replications"]), rng_seed=seed)
        report.update(pi_monte_carlo=p_mc, pi_monte_carlo_stderr=se)
    return [write_json(out / "pi.json", report)]


def cmd_solve_rinf(doc, opts, out, args):
    r0 = opts["r0"]
    if r0 is None:
        p = doc["params"]
        if not {"c", "beta", "gamma"} <= set(p):
            raise ParameterError("solve-rinf needs --r0 or c, beta and gamma in the config")
        r0 = p["c"] * p["beta"] / (p["beta"] + p["gamma"])
    res = solve_r_inf(float(r0), tol=opts["tol"])
    return [write_json(out / "rinf.json", {"R0": r0, "r_inf": res.value, **res.to_dict()})]


def cmd_meanfield(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    i0 = opts["i0"] if opts["i0"] is not None else 1.0 / params.n
    init = MeanFieldState(s=1.0 - i0, x=params.c * i0 * (1.0 - i0), i=i0, r=0.0)
    dq = _derive_lenient(params)
    t_eval = np.linspace(0.0, opts["t_end"], int(opts["points"]))
    states = meanfield_integrate(dq, init, opts["t_end"], mode=opts["mode"], t_eval=t_eval)
    return [write_csv(out / "meanfield.csv", ("t", "s", "x", "i", "r"), meanfield_rows(states))]


def _derive_lenient(params: ModelParams):
    # the mean-field system never uses the travel rates
    if params.rho_T > 0:
        return derive(params)
    return derive(params.replace(rho_T=1.0))


def matrix_suite(params: ModelParams, opts: dict, seed) -> dict:
    """Spectral, triangularization, projector and perturbation checks on the base operators."""
    lam = params.c * params.beta - params.beta - params.gamma
    beta_prime = opts["beta_prime"] if opts["beta_prime"] is not None else params.beta / 3
    m0 = rm.build("M0", params)
    spectral = rm.spectral_analysis(m0)
    others = [z.real for z in spectral.eigenvalues if abs(z - spectral.top_eigenvalue) > opts["eig_tol"]]
    checks = {
        "top_eigenvalue": {"value": spectral.top_eigenvalue, "expected": lam,
                           "ok": abs(spectral.top_eigenvalue - lam) <= opts["eig_tol"]},
        "top_multiplicity": {"value": spectral.top_multiplicity, "expected": 2, "ok": spectral.top_multiplicity == 2},
        "others_below_minus_gamma": {"value": max(others) if others else -math.inf,
                                     "ok": all(v <= -params.gamma + opts["eig_tol"] for v in others)},
        "triangular": {"permutation": spectral.triangularizing_permutation, "defect": spectral.triangular_defect,
                       "ok": spectral.triangular_defect is not None
                       and spectral.triangular_defect <= opts["triangular_tol"]},
        "projector": {"defect": spectral.projector_defect, "ok": spectral.projector_defect <= opts["projector_tol"]},
    }
    const = rm.growth_constant(m0, lam)
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    for _ in range(int(opts["perturbations"])):
        w = rng.random((rm.DIM, rm.DIM))
        np.fill_diagonal(w, rng.standard_normal(rm.DIM))
        w *= opts["w_norm"] * rng.random() / rm.induced_norm(w)
        for t in opts["times"]:
            pc = rm.perturbation_check(m0, w, lam, float(t), C=const)
            failures += not pc.ok
            worst = max(worst, pc.lhs / pc.rhs if pc.rhs > 0 else math.inf)
    checks["perturbation"] = {"growth_constant": const, "trials": int(opts["perturbations"]),
                              "times": opts["times"], "worst_ratio": worst, "failures": failures,
                              "ok": failures == 0}
    delta = opts["delta"]
    herd = rm.spectral_analysis(rm.build("herd0", params, delta=delta)).top_eigenvalue
    herd_expected = -params.beta * params.c * delta
    soc = rm.spectral_analysis(rm.build("socdist0", params, delta=delta, beta_prime=beta_prime)).top_eigenvalue
    lam_prime = params.c * beta_prime - beta_prime - params.gamma
    soc_expected = max(-params.c * delta * params.beta, lam_prime)
    checks["herd"] = {"value": herd, "expected": herd_expected,
                      "ok": herd < 0 and abs(herd - herd_expected) <= opts["eig_tol"]}
    checks["socdist"] = {"value": soc, "expected": soc_expected,
                         "ok": soc < 0 and abs(soc - soc_expected) <= opts["eig_tol"]}
    return {"spectrum": spectral.to_dict(), "checks": checks, "ok": all(c["ok"] for c in checks.values())}


def cmd_matrix_check(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    report = matrix_suite(params, opts, doc.get("seed", 0))
    path = write_json(out / "matrix_check.json", report)
    if not report["ok"]:
        bad = sorted(k for k, v in report["checks"].items() if not v["ok"])
        raise CheckFailed(f"rate-matrix checks failed: {bad}", [path])
    return [path]


def cmd_bounds(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    lam = params.c * params.beta - params.beta - params.gamma
    t_max = opts["t_max"] if opts["t_max"] is not None else 0.9 / lam * math.log(params.n)
    curves = rm.expected_bound_curves(params, np.linspace(0.0, t_max, int(opts["points"])))
    return [write_csv(out / "bounds.csv", ("t", "B1", "B2", "closed_form_B1", "envelope_B2"), curves.rows())]


def _graph_seeds(seed):
    return np.random.SeedSequence(seed).spawn(2)


def _build_graph(params: ModelParams, opts: dict, seed):
    cfg = EnsembleConfig(params=params, graph=opts["graph"], mean_degree=opts["mean_degree"])
    return make_graph(cfg, params.n, seed)


def cmd_gen_graph(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    graph_seq, _ = _graph_seeds(params.rng_seed)
    graph = _build_graph(params, opts, graph_seq)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "graph.bin"
    tmp = out / ".graph.bin.partial"
    dump(graph, tmp)
    os.replace(tmp.with_suffix(".partial.json"), path.with_suffix(".bin.json"))
    os.replace(tmp, path)
    return [path, path.with_suffix(".bin.json")]


def cmd_simulate(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    policy = resolve_policy(doc)
    doc["policy"] = policy.to_dict()
    graph_seq, sim_seq = _graph_seeds(params.rng_seed)
    if opts["graph_file"]:
        if not Path(opts["graph_file"]).exists():
            raise FileNotFoundError(f"graph file not found: {opts['graph_file']}")
        graph = load(opts["graph_file"])
    else:
        graph = _build_graph(params, opts, graph_seq)
    if opts["engine"] == "digraph":
        run = simulate_digraph(graph, params, horizon=opts["horizon"], rng_seed=sim_seq,
                               sampling_dt=opts["dt"], epsilon=policy.trigger_epsilon, policy=policy)
    else:
        try:
            run = simulate_ctmc(graph, params, policy, horizon=opts["horizon"], rng_seed=sim_seq,
                                sampling_dt=opts["dt"], audit=opts["audit"], max_events=int(opts["max_events"]))
        except BudgetError as exc:
            raise CheckFailed(str(exc), write_run(exc.partial, out)) from exc
    return write_run(run, out)


def cmd_ensemble(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    policy = resolve_policy(doc)
    doc["policy"] = policy.to_dict()
    config = resolve_ensemble(doc, params, policy, args.jobs or 1)
    summary = run_ensemble(config)
    paths = [write_json(out / "summary.json", summary.to_dict())]
    paths.append(atomic_write_text(out / "replications.csv", summary.table_csv()))
    if summary.failures:
        raise RuntimeError(f"{len(summary.failures)} replications failed; see summary.json")
    return paths


def cmd_compare(doc, opts, out, args):
    params = resolve_params(doc)
    doc["params"] = _params_section(params)
    policy_a = resolve_policy(doc)
    doc["policy"] = policy_a.to_dict()
    policy_b = dataclasses.replace(policy_a, kind=opts["policy_b"])
    config_a = resolve_ensemble(doc, params, policy_a, args.jobs or 1)
    config_b = dataclasses.replace(config_a, policy=policy_b)
    sa, sb = run_ensemble(config_a), run_ensemble(config_b)
    report = compare_policies(config_a, config_b, resamples=int(opts["resamples"]), summaries=(sa, sb))
    return [write_json(out / "comparison.json", report),
            atomic_write_text(out / "replications_a.csv", sa.table_csv()),
            atomic_write_text(out / "replications_b.csv", sb.table_csv())]


def cmd_plot_data(doc, opts, out, args):
    inputs = opts["inputs"]
    if not inputs:
        raise ParameterError("plot-data needs at least one trajectory CSV")
    for p in inputs:
        if not Path(p).exists():
            raise FileNotFoundError(f"trajectory file not found: {p}")
    rows = long_rows(inputs, opts["series"], opts["run_ids"])
    csv_path = write_csv(out / "long.csv", ("t", "series", "value", "run_id"), rows)
    png = render_panels(rows, out / "panels.png", scale=opts["scale"])
    return [csv_path, png]


COMMANDS = {
    "derive": (cmd_derive, "closed-form constants (R0, growth rate, travel law, s0, bound degrees)"),
    "solve-pi": (cmd_solve_pi, "large-outbreak probability from the survival fixed point"),
    "solve-rinf": (cmd_solve_rinf, "final-size fraction for a given R0"),
    "meanfield": (cmd_meanfield, "integrate the mean-field system from a small seed"),
    "matrix-check": (cmd_matrix_check, "rate-matrix verification suite"),
    "bounds": (cmd_bounds, "expected-infection bound curves"),
    "gen-graph": (cmd_gen_graph, "generate and dump a two-community graph"),
    "simulate": (cmd_simulate, "one stochastic run"),
    "ensemble": (cmd_ensemble, "Monte Carlo ensemble over one or more community sizes"),
    "compare": (cmd_compare, "paired comparison of two policies"),
    "plot-data": (cmd_plot_data, "merge trajectory CSVs into long format and draw panels"),
}


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="travelsir", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration or a previous manifest.json")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a field; bare keys are model parameters, "
                             "'policy.', 'ensemble.' and 'options.' prefixes address the other sections")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
    common.add_argument("--seed", type=int, help="random seed (run seed or ensemble master seed)")
    common.add_argument("--jobs", type=int, help="worker processes for ensembles")
    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--policy", choices=("none", "travel_ban", "social_distancing"),
                        help="intervention (policy.kind)")
    policy.add_argument("--beta-prime", type=float, help="reduced community-2 rate (policy.beta_prime)")
    policy.add_argument("--epsilon", type=float, help="trigger and threshold level (policy.trigger_epsilon)")
    policy.add_argument("--scope", choices=("location", "type"), help="social distancing scope (policy.scope)")

    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    mk = {}
    for name, (_fn, help_text) in COMMANDS.items():
        parents = [common, policy] if name in ("simulate", "ensemble", "compare") else [common]
        mk[name] = sub.add_parser(name, parents=parents, help=help_text, description=help_text)

    p = mk["solve-pi"]
    p.add_argument("--c", type=float, help="mean degree")
    p.add_argument("--beta", type=float, help="transmission rate per active edge")
    p.add_argument("--gamma", type=float, help="recovery rate")
    p.add_argument("--tol", type=float, help="root tolerance")
    p.add_argument("--mc-replications", type=int, help="also estimate by branching-process Monte Carlo")
    p = mk["solve-rinf"]
    p.add_argument("--r0", type=float, help="basic reproduction number")
    p.add_argument("--tol", type=float, help="root tolerance")
    p = mk["meanfield"]
    p.add_argument("--t-end", type=float, help="integration length")
    p.add_argument("--mode", choices=("conservative", "paper-literal"), help="infected-fraction equation")
    p.add_argument("--i0", type=float, help="initial infected fraction (default 1/n)")
    p.add_argument("--points", type=int, help="output rows")
    p = mk["matrix-check"]
    p.add_argument("--delta", type=float, help="margin below the herd-immunity level")
    p.add_argument("--beta-prime", type=float, help="reduced rate for the distancing operator (default beta/3)")
    p.add_argument("--perturbations", type=int, help="random Metzler perturbations")
    p.add_argument("--w-norm", type=float, help="maximum perturbation norm")
    p.add_argument("--times", type=_float_list, help="comma-separated check times")
    p = mk["bounds"]
    p.add_argument("--points", type=int, help="grid points")
    p.add_argument("--t-max", type=float, help="last time (default 0.9 ln n / growth rate)")
    for name in ("gen-graph", "simulate"):
        p = mk[name]
        p.add_argument("--graph", choices=("er", "configuration"), help="graph family")
        p.add_argument("--mean-degree", type=float, help="mean degree for configuration graphs")
    p = mk["simulate"]
    p.add_argument("--engine", choices=("ctmc", "digraph"), help="simulation engine")
    p.add_argument("--graph-file", help="load a dumped graph instead of generating one")
    p.add_argument("--dt", type=float, help="trajectory sampling interval")
    p.add_argument("--horizon", type=float, help="window for the ever-travelled count (default ln^2 n)")
    p.add_argument("--audit", action="store_true", default=None, help="keep the event log and recount the census")
    p.add_argument("--max-events", type=int, help="event cap; a capped run writes its partial trajectory and exits 2")
    for name in ("ensemble", "compare"):
        p = mk[name]
        p.add_argument("--replications", type=int, help="replications per size (ensemble.replications)")
        p.add_argument("--n-grid", type=lambda s: [int(float(v)) for v in s.split(",")],
                       help="comma-separated community sizes (ensemble.n_grid)")
    mk["compare"].add_argument("--policy-b", choices=("none", "travel_ban", "social_distancing"),
                               help="second arm (the first arm is policy.kind)")
    mk["compare"].add_argument("--resamples", type=int, help="bootstrap resamples")
    p = mk["plot-data"]
    p.add_argument("inputs", nargs="*", help="trajectory CSV files")
    p.add_argument("--series", type=lambda s: s.split(","), help="comma-separated columns")
    p.add_argument("--run-ids", type=lambda s: s.split(","), help="comma-separated labels, one per input")
    p.add_argument("--scale", type=float, help="divide values by this (e.g. n) before plotting")
    return parser


def _apply_flags(doc: dict, args: argparse.Namespace) -> None:
    if args.seed is not None:
        doc["seed"] = args.seed
    for flag, field in (("policy", "kind"), ("beta_prime", "beta_prime"), ("epsilon", "trigger_epsilon"),
                        ("scope", "scope")):
        if args.command in ("simulate", "ensemble", "compare") and getattr(args, flag, None) is not None:
            doc["policy"][field] = getattr(args, flag)
    if args.command in ("ensemble", "compare"):
        if args.epsilon is not None:
            doc["ensemble"]["epsilon"] = args.epsilon
        for flag in ("replications", "n_grid"):
            if getattr(args, flag) is not None:
                doc["ensemble"][flag] = getattr(args, flag)


def _error(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    fn = COMMANDS[args.command][0]
    out = output_dir(args)
    try:
        doc = load_document(args.config, args.overrides)
        _apply_flags(doc, args)
        opts = resolve_options(args.command, doc, args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            paths = fn(doc, opts, out, args)
        for w in caught:
            sys.stderr.write(f"warning: {w.message}\n")
        write_manifest(out, args.command, copy.deepcopy(doc), paths)
    except CheckFailed as exc:
        write_manifest(out, args.command, copy.deepcopy(doc), exc.paths)
        return _error(exc, EXIT_RUNTIME)
    except (ParameterError, FileNotFoundError, ValueError) as exc:
        return _error(exc, EXIT_INVALID)
    except Exception as exc:  # budget, overflow, integration and other runtime failures
        return _error(exc, EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
