"""Command line driver: toy check, figure sweeps, validation, single solves."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import (
    femtocaching_pop,
    femtocaching_pref,
    global_pop_policy,
    local_pop_policy,
)
from .config import ConfigError, config_hash, file_size_bits, load_config, radio_params
from .delay import evaluate
from .demand import DemandModel, InfeasibleSimilarityError, global_popularity, synthesize_demand
from .geometry import build_layout
from .montecarlo import (
    SimConfig,
    simulate,
    validate_delay_model,
    validate_rate_approximation,
    validate_tau,
)
from .optimizer import LpSolveError, build_lp, solve, solve_policy1, solve_policy2, write_lp
from .radio import TauMonotonicityError, TauTable, compute_tau_table
from .toy import toy_problem

log = logging.getLogger("prefcache")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

POLICY_NAMES = (
    "Policy 1",
    "Policy 2",
    "Global Pop",
    "Local Pop",
    "Femtocaching (Pop)",
    "Femtocaching (Pref)",
    "Pop LP",
)
BASELINE_NAMES = POLICY_NAMES[2:]
# stream keys keep each figure's demand draws independent of the others
_FIG_KEY = {"fig3": 3, "fig5": 5, "fig6": 6}
CSV_HEADER = ["sweep_param", "sweep_value", "policy", "metric", "value", "seed",
              "config_hash", "note"]


# ---------------------------------------------------------------- building blocks

def _setting(cfg: dict):
    layout = build_layout(int(cfg["layout"]["n_cells"]), float(cfg["layout"]["D"]))
    return layout, radio_params(cfg), file_size_bits(cfg), float(cfg["cache"]["n_cache"])


def make_demand(cfg: dict, stream: int, **override) -> DemandModel:
    """Demand model of ``cfg`` (explicit matrices or synthesized)."""
    d = {**cfg["demand"], **override}
    if d["matrices"]:
        return DemandModel.load(d["matrices"])
    rng = np.random.default_rng([int(cfg["seed"]), stream])
    return synthesize_demand(
        int(d["n_users"]), int(d["n_files"]), int(cfg["layout"]["n_cells"]),
        delta_p=d["delta_p"], delta_s=d["delta_s"], delta_a=d["delta_a"],
        target_sim=d["target_sim"], rng=rng, delta_u=d["diverse_skew"],
    )


def baseline_policies(model, tau, layout, F, n_cache) -> dict:
    """Every reference placement, keyed by display name."""
    return {
        "Global Pop": lambda: global_pop_policy(global_popularity(model), layout.n_cells, n_cache),
        "Local Pop": lambda: local_pop_policy(model, n_cache),
        "Femtocaching (Pop)": lambda: femtocaching_pop(model, tau, layout, F, n_cache),
        "Femtocaching (Pref)": lambda: femtocaching_pref(model, tau, layout, F, n_cache),
        "Pop LP": lambda: solve_policy1(model.popularity_only(), tau, layout, F, n_cache).policy,
    }


def all_policies(model, tau, layout, F, n_cache) -> dict:
    makers = {
        "Policy 1": lambda: solve_policy1(model, tau, layout, F, n_cache).policy,
        "Policy 2": lambda: solve_policy2(model, tau, layout, F, n_cache).policy,
    }
    makers.update(baseline_policies(model, tau, layout, F, n_cache))
    return makers


def _score(makers: dict, model, tau, layout, F, params, mc_requests: int, seed: int):
    """Rows ``(policy, metric, value, note)`` for every placement maker."""
    rows = []
    for k, (name, make) in enumerate(makers.items()):
        try:
            pol = make()
        except LpSolveError as exc:
            rows.append((name, "error", "", str(exc)))
            continue
        rep = evaluate(pol, tau, model, layout, F)
        rows.append((name, "network_avg_s", repr(rep.network_avg), ""))
        rows.append((name, "max_weighted_s", repr(rep.max_weighted), ""))
        if mc_requests > 0:
            sim = simulate(pol, model, layout, params, F,
                           SimConfig(n_requests=mc_requests, seed=seed * 1000 + k))
            rows.append((name, "network_avg_mc_s", repr(sim.T), ""))
            rows.append((name, "network_avg_mc_se_s", repr(sim.T_se), ""))
    return rows


# ---------------------------------------------------------------- toy

TOY_CHECKS = [
    # label, reference value, tolerance
    ("hom T* (Policy 1)", 1.84, 0.01),
    ("hom max weighted (Policy 2)", 2.13, 0.01),
    ("het T* (Policy 1)", 1.61, 0.01),
    ("het max weighted (Policy 2)", 1.63, 0.01),
    ("het Policy 2 BS2 file 1", 0.0, 0.02),
    ("het Policy 2 BS2 file 2", 0.57, 0.02),
    ("het Policy 2 BS2 file 3", 0.43, 0.02),
    ("het Policy 1 matrix [[1,0,0],[0,0,1]]", 1.0, 0.0),
]


def toy_results() -> dict:
    """Solve both toy cases; values in the order of :data:`TOY_CHECKS`."""
    out = {}
    for kind in ("hom", "het"):
        model, tau, layout = toy_problem(kind)
        p1 = solve_policy1(model, tau, layout, 1.0, 1)
        p2 = solve_policy2(model, tau, layout, 1.0, 1)
        out[kind] = {
            "P1": p1.policy.C,
            "P2": p2.policy.C,
            "T": evaluate(p1.policy, tau, model, layout, 1.0).network_avg,
            "max": evaluate(p2.policy, tau, model, layout, 1.0).max_weighted,
        }
    return out


def run_toy(stream=None) -> bool:
    """Print the worked-example headline numbers with pass/fail; True if all pass."""
    stream = stream or sys.stdout
    t0 = time.perf_counter()
    r = toy_results()
    elapsed = time.perf_counter() - t0
    het_p1_exact = float(np.array_equal(r["het"]["P1"], [[1, 0, 0], [0, 0, 1]]))
    values = [r["hom"]["T"], r["hom"]["max"], r["het"]["T"], r["het"]["max"],
              *r["het"]["P2"][1], het_p1_exact]
    ok_all = True
    print(f"{'check':40s} {'value':>10s} {'ref':>8s} {'tol':>6s}  status", file=stream)
    for (label, ref, tol), val in zip(TOY_CHECKS, values):
        ok = abs(val - ref) <= tol + 1e-12
        ok_all &= ok
        print(f"{label:40s} {val:10.4f} {ref:8.2f} {tol:6.2f}  {'PASS' if ok else 'FAIL'}",
              file=stream)
    ok = elapsed < 1.0
    ok_all &= ok
    print(f"{'runtime (s)':40s} {elapsed:10.4f} {'< 1':>8s} {'':6s}  {'PASS' if ok else 'FAIL'}",
          file=stream)
    return ok_all


# ---------------------------------------------------------------- sweep

def _sweep_task(task):
    fig, param, value, cfg, tau_values = task
    layout, params, F, n_cache = _setting(cfg)
    tau = TauTable(tau_values)
    stream = _FIG_KEY[fig]
    mc = int(cfg["sweep"]["mc_requests"])
    seed = int(cfg["seed"])
    try:
        if param == "similarity":
            model = make_demand(cfg, stream, target_sim=float(value))
        elif param == "delta_a":
            model = make_demand(cfg, stream, delta_a=float(value))
        else:
            model = make_demand(cfg, stream)
    except InfeasibleSimilarityError as exc:
        log.warning("%s %s=%s: %s", fig, param, value, exc)
        return [("-", "infeasible", "", str(exc))]
    if param == "eta":
        if value == "baselines":
            makers = baseline_policies(model, tau, layout, F, n_cache)
        else:
            eta = float(value)
            makers = {"Tradeoff": lambda: solve(eta, model, tau, layout, F, n_cache).policy}
    else:
        makers = all_policies(model, tau, layout, F, n_cache)
    return _score(makers, model, tau, layout, F, params, mc, seed)


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)


def run_sweep(cfg: dict, jobs: int = 1) -> list[Path]:
    """Write the figure CSVs into ``cfg['out']``; returns their paths.

    Rows are ``(sweep_param, sweep_value, policy, metric, value, seed,
    config_hash, note)``; values are seconds. Figures 3 and 5 draw demand from
    a fixed stream per figure, so neighbouring sweep points share their random
    numbers and differ only through the swept parameter.
    """
    figs = list(dict.fromkeys(cfg["sweep"]["figures"]))
    if cfg["demand"]["matrices"] and {"fig3", "fig5"} & set(figs):
        raise ConfigError("explicit demand matrices cannot be swept (fig3/fig5)")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    layout, params, _, _ = _setting(cfg)
    tau = compute_tau_table(layout, params)
    h = config_hash({k: v for k, v in cfg.items() if k != "out"})
    seed = str(cfg["seed"])

    tasks = []
    for fig in figs:
        if fig == "fig3":
            tasks += [(fig, "similarity", v, cfg, tau.values) for v in cfg["sweep"]["similarity"]]
        elif fig == "fig5":
            tasks += [(fig, "delta_a", v, cfg, tau.values) for v in cfg["sweep"]["delta_a"]]
        else:
            tasks += [(fig, "eta", v, cfg, tau.values) for v in cfg["sweep"]["eta"]]
            tasks.append((fig, "eta", "baselines", cfg, tau.values))
    log.info("running %d sweep points with %d job(s)", len(tasks), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]

    by_fig: dict[str, list] = {f: [] for f in figs}
    fig6_base = []
    for (fig, param, value, *_), rows in zip(tasks, results):
        if value == "baselines":
            fig6_base = rows
            continue
        by_fig[fig] += [(param, _fmt(value), *r) for r in rows]
    if "fig6" in by_fig:
        # baselines do not depend on eta; repeat them at every point for plotting
        by_fig["fig6"] += [("eta", _fmt(e), *r) for e in cfg["sweep"]["eta"] for r in fig6_base]

    def tag(rows):
        return [(*r[:5], seed, h, r[5]) for r in rows]

    paths = []
    for fig, rows in by_fig.items():
        if fig == "fig6":
            paths.append(out / "fig6.csv")
            _write_csv(paths[-1], tag(rows))
            continue
        avg = [r for r in rows if r[3] != "max_weighted_s"]
        mw = [r for r in rows if r[3] in ("max_weighted_s", "error", "infeasible")]
        for suffix, sel in (("a", avg), ("b", mw)):
            paths.append(out / f"{fig}{suffix}.csv")
            _write_csv(paths[-1], tag(sel))
    return paths


# ---------------------------------------------------------------- validate

def run_validate(cfg: dict, stream=None) -> bool:
    """Radio, quadrature and delay-model checks; True when all pass."""
    stream = stream or sys.stdout
    v = cfg["validate"]
    seed = int(cfg["seed"])
    layout, params, F, n_cache = _setting(cfg)
    ok_all = True

    def report(label, value, tol):
        nonlocal ok_all
        ok = bool(value <= tol)
        ok_all &= ok
        print(f"{label:48s} {value:10.4%} <= {tol:.2%}  {'PASS' if ok else 'FAIL'}", file=stream)

    errs = validate_rate_approximation(layout, params, int(v["rate_points"]),
                                       int(v["fading_draws"]), seed)
    report(f"rate approximation, max over {len(errs)} points", float(errs.max()), v["rate_tol"])
    try:
        tau = compute_tau_table(layout, params)
    except TauMonotonicityError as exc:
        print(f"tau monotonicity: {exc}  FAIL", file=stream)
        return False
    print(f"{'tau monotonicity':48s} {'':>10s}    {'':5s}  PASS", file=stream)
    tau_err = validate_tau(layout, params, SimConfig(n_requests=int(v["tau_samples"]), seed=seed),
                           table=tau)
    for rank, e in tau_err.items():
        report(f"tau rank {rank} vs location sampling", e, v["tau_tol"])

    model = make_demand(cfg, 0)
    makers = all_policies(model, tau, layout, F, n_cache)
    for k, name in enumerate(("Policy 1", *BASELINE_NAMES[:4])):
        pol = makers[name]()
        e = validate_delay_model(pol, model, layout, params, F,
                                 SimConfig(n_requests=int(v["n_requests"]), seed=seed + k),
                                 tau=tau)
        report(f"delay model, {name}", e, v["delay_tol"])
    return ok_all


# ---------------------------------------------------------------- solve / export

def _single_instance(cfg):
    layout, params, F, n_cache = _setting(cfg)
    tau = compute_tau_table(layout, params)
    return make_demand(cfg, 0), tau, layout, F, n_cache


def run_solve(cfg: dict, eta: float, stream=None) -> dict:
    """Solve one instance and write its artefacts to ``cfg['out']``."""
    stream = stream or sys.stdout
    model, tau, layout, F, n_cache = _single_instance(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sol = solve(eta, model, tau, layout, F, n_cache)
    rep = evaluate(sol.policy, tau, model, layout, F)
    sol.policy.to_csv(out / "policy.csv")
    tau.to_csv(out / "tau.csv")
    layout.to_csv(out / "layout.csv")
    model.save(out / "demand.json")
    summary = {
        "eta": eta,
        "T_s": rep.network_avg,
        "max_weighted_s": rep.max_weighted,
        "argmax_user": rep.argmax_user,
        "per_user_s": [float(x) for x in rep.per_user],
        "lp": {k: v for k, v in sol.stats.items()},
        "seed": cfg["seed"],
        "config_hash": config_hash({k: v for k, v in cfg.items() if k != "out"}),
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"eta={eta}  T={rep.network_avg:.6g} s  max_weighted={rep.max_weighted:.6g} s  "
          f"(user {rep.argmax_user})", file=stream)
    return summary


def run_export_lp(cfg: dict, eta: float) -> Path:
    model, tau, layout, F, n_cache = _single_instance(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"placement_eta{eta:g}.lp"
    write_lp(build_lp(eta, model, tau, layout, F, n_cache), path)
    return path


# ---------------------------------------------------------------- entry point

def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prefcache", description=__doc__)
    ap.add_argument("command", choices=["toy", "sweep", "validate", "solve", "export-lp"])
    ap.add_argument("--config", metavar="PATH", help="YAML file overriding the defaults")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--paper-scale", action="store_true", help="100 users and 100 files")
    ap.add_argument("--eta", type=_float_list, metavar="LIST")
    ap.add_argument("--similarity", type=_float_list, metavar="LIST")
    ap.add_argument("--delta-a", type=_float_list, metavar="LIST")
    ap.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    sweep = {}
    for key, val in (("eta", args.eta), ("similarity", args.similarity),
                     ("delta_a", args.delta_a)):
        if val is not None:
            sweep[key] = val
    if sweep:
        over["sweep"] = sweep
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "toy":
        return EXIT_OK if run_toy() else EXIT_FAIL
    try:
        cfg = load_config(args.config, _overrides(args), paper_scale=args.paper_scale)
        if args.command == "sweep":
            for p in run_sweep(cfg, jobs=max(1, args.jobs)):
                print(p)
            return EXIT_OK
        if args.command == "validate":
            return EXIT_OK if run_validate(cfg) else EXIT_FAIL
        eta = (args.eta or [0.0])[0]
        if not 0.0 <= eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if args.command == "solve":
            run_solve(cfg, eta)
        else:
            print(run_export_lp(cfg, eta))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleSimilarityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except LpSolveError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
