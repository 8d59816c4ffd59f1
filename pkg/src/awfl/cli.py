"""Command-line harness: ``awfl {solve,simulate,sweep,bounds}``.

Every output file carries the resolved config, the seeds and the ρ values
it was produced with (a ``# provenance:`` line in CSVs, a ``provenance``
key in JSON). Exit codes: 0 ok, 2 config error, 3 solver failure,
4 simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    bounds_p,
    build_cell,
    build_fading,
    build_profiles,
    build_task,
    load_config,
    solve_gains,
    solver_settings,
)
from .engine import RunOptions, Wireless, run_training
from .metrics import BoundConstants, BoundValidityError, delta_approx, lemma1_terms, theorem1_bound
from .schemes import AgeBasedPolicy, GreedyPolicy, ProposedPolicy, RandomPolicy, calibrate_k_sel
from .solver import (
    InfeasiblePlanError,
    OnlineInstance,
    ProblemInstance,
    SolverError,
    solve_joint,
    solve_online,
)

log = logging.getLogger("awfl")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SIMULATION = 0, 2, 3, 4

RESULTS_VERSION = 1
RESULTS_COLUMNS = (
    "run_id", "scheme", "rho", "seed", "round", "participants", "n_participants",
    "expected_energy_j", "realized_energy_j", "cum_energy_j",
    "train_loss", "test_accuracy", "global_grad_norm_sq",
)
SUMMARY_COLUMNS = (
    "scheme", "rho", "seed", "total_energy_j", "final_test_accuracy",
    "final_train_loss", "mean_participants",
)
DIAGNOSTICS_COLUMNS = ("iteration", "residual_norm", "objective")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _provenance(cfg, seeds, rhos=None) -> dict:
    out = {"version": __version__, "config": cfg, "seeds": list(seeds),
           "benchmark_bandwidth": "equal split among selected clients"}
    if rhos is not None:
        out["rho"] = list(rhos)
    return out


def _write_csv(path: Path, columns, rows, provenance, tag) -> None:
    buf = io.StringIO()
    buf.write(f"# {tag} v{RESULTS_VERSION}\n")
    buf.write("# provenance: " + json.dumps(provenance, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a CSV written by this tool into ``(provenance, rows)``."""
    lines = Path(path).read_text().splitlines()
    prov = {}
    body = []
    for line in lines:
        if line.startswith("# provenance: "):
            prov = json.loads(line[len("# provenance: "):])
        elif not line.startswith("#"):
            body.append(line)
    return prov, list(csv.DictReader(body))


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- simulate

def _build_world(cfg, seed):
    task = build_task(cfg, seed)
    cell = build_cell(cfg, task.model_size_bits)
    profiles = build_profiles(cfg, cell, seed)
    wireless = Wireless(cell, profiles, build_fading(cfg), seed)
    return task, cell, profiles, wireless


def _proposed(cfg, rho, cell, profiles):
    return ProposedPolicy(rho, cfg["scheme"]["lambda_min"], cell, profiles,
                          max(cfg["rounds"], 1), solver_settings(cfg))


def _participation_only(cfg, rho, cell, profiles, wireless) -> float | None:
    pol = _proposed(cfg, rho, cell, profiles)
    for r in range(cfg["rounds"]):
        pol.decide(r, wireless.gains(r), None)
    return float(np.mean(pol.mean_participation)) if pol.mean_participation else None


def run_job(cfg: dict, seed: int, rho: float) -> list[dict]:
    """All configured schemes for one (seed, ρ); returns one record per scheme.

    With ``match_participation`` the benchmarks are calibrated to the mean
    expected number of participants of the optimised policy.
    """
    task, cell, profiles, wireless = _build_world(cfg, seed)
    sch = cfg["scheme"]
    K = len(profiles)
    eng = cfg["engine"]
    options = RunOptions(seed, eng["force_cap"], eng["divide_by_participants"])
    names = sorted(sch["names"], key=lambda n: n != "proposed")

    records = []
    matched = None
    if sch["match_participation"] and "proposed" not in names:
        matched = _participation_only(cfg, rho, cell, profiles, wireless)
    for name in names:
        if name == "proposed":
            policy = _proposed(cfg, rho, cell, profiles)
            params = {}
        elif name == "random":
            p_const = matched / K if matched is not None else sch["p_const"]
            policy, params = RandomPolicy(p_const), {"p_const": p_const}
        else:
            k_sel = calibrate_k_sel([matched]) if matched is not None else sch["k_sel"]
            cls = GreedyPolicy if name == "greedy" else AgeBasedPolicy
            policy, params = cls(k_sel), {"k_sel": k_sel}
        trace = run_training(task, policy, wireless, cfg["rounds"], options)
        if name == "proposed" and sch["match_participation"] and policy.mean_participation:
            matched = float(np.mean(policy.mean_participation))
        records.append(_record(trace, name, rho, seed, params))
    return records


def _record(trace, scheme, rho, seed, params) -> dict:
    run_id = f"{scheme}-rho{rho!r}-s{seed}"
    rows = [{
        "run_id": run_id, "scheme": scheme, "rho": rho, "seed": seed,
        "round": m.round,
        "participants": ";".join(str(k) for k in sorted(m.participants)),
        "n_participants": m.n_participants,
        "expected_energy_j": m.expected_energy_j,
        "realized_energy_j": m.realized_energy_j,
        "cum_energy_j": m.cum_energy_j,
        "train_loss": m.train_loss,
        "test_accuracy": m.test_accuracy,
        "global_grad_norm_sq": m.global_grad_norm_sq,
    } for m in trace.rounds]
    last = trace.rounds[-1] if trace.rounds else None
    summary = {
        "run_id": run_id, "scheme": scheme, "rho": rho, "seed": seed,
        "rounds": len(trace.rounds),
        "total_energy_j": trace.total_energy_j,
        "client_energy_j": trace.client_energy_j.tolist(),
        "participation": trace.final_state.participation.tolist(),
        "final_test_accuracy": last.test_accuracy if last else None,
        "final_train_loss": last.train_loss if last else None,
        "mean_participants": (float(np.mean([m.n_participants for m in trace.rounds]))
                              if trace.rounds else None),
        "scheme_params": params,
    }
    return {"rows": rows, "summary": summary}


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def _aggregate(summaries) -> list[dict]:
    groups = defaultdict(list)
    for s in summaries:
        groups[(s["scheme"], s["rho"])].append(s)
    out = []
    for (scheme, rho), runs in groups.items():
        out.append({
            "scheme": scheme, "rho": rho, "seed": "mean", "n_seeds": len(runs),
            "total_energy_j": _mean([r["total_energy_j"] for r in runs]),
            "final_test_accuracy": _mean([r["final_test_accuracy"] for r in runs]),
            "final_train_loss": _mean([r["final_train_loss"] for r in runs]),
            "mean_participants": _mean([r["mean_participants"] for r in runs]),
        })
    return out


def _run_all(cfg, seeds, rhos, parallel: int) -> list[dict]:
    jobs = [(cfg, s, r) for r in rhos for s in seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run_job, *zip(*jobs)))
    else:
        results = [run_job(*j) for j in jobs]
    return [rec for res in results for rec in res]


def cmd_simulate(cfg: dict, out: Path, rhos, parallel: int = 1) -> dict:
    """Run every (ρ, seed, scheme) and write results, summary and tables."""
    seeds = cfg["seeds"]
    records = _run_all(cfg, seeds, rhos, parallel)
    prov = _provenance(cfg, seeds, rhos)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", RESULTS_COLUMNS,
               [row for rec in records for row in rec["rows"]], prov, "awfl-results")
    summaries = [rec["summary"] for rec in records]
    aggregate = _aggregate(summaries)
    table = [{c: s[c] for c in SUMMARY_COLUMNS} for s in summaries]
    table += [{c: a[c] for c in SUMMARY_COLUMNS} for a in aggregate]
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS,
               [{c: ("" if v is None else v) for c, v in r.items()} for r in table],
               prov, "awfl-summary")
    payload = {"provenance": prov, "runs": summaries, "aggregate": aggregate}
    _write_json(out / "summary.json", payload)
    return payload


def cmd_sweep(cfg: dict, out: Path, rhos, parallel: int = 1) -> dict:
    """``cmd_simulate`` over several ρ values (one run per ρ, seed and scheme)."""
    if not rhos:
        raise ConfigError("empty rho list", "rho")
    return cmd_simulate(cfg, out, rhos, parallel)


# ---------------------------------------------------------------- solve

def cmd_solve(cfg: dict, out: Path) -> dict:
    seed = cfg["seeds"][0]
    cell = build_cell(cfg)
    profiles = build_profiles(cfg, cell, seed)
    gains = solve_gains(cfg, profiles, seed)
    sch = cfg["scheme"]
    settings = solver_settings(cfg)
    prov = _provenance(cfg, [seed], [sch["rho"]])
    out.mkdir(parents=True, exist_ok=True)
    try:
        if cfg["solve"]["mode"] == "offline":
            sol = solve_joint(ProblemInstance(sch["rho"], sch["lambda_min"], cell, profiles, gains),
                              settings)
            p, w = sol.p, sol.w
            residual_sq, objective = sol.residual_sq, sol.objective
        else:
            horizon = cfg["solve"]["horizon"] or cfg["solve"]["T"]
            sol = solve_online(OnlineInstance(sch["rho"], sch["lambda_min"], cell, profiles,
                                              gains[:, 0], horizon), settings)
            p, w = sol.p[:, None], sol.w[:, None]
            residual_sq = sol.diagnostics.residual_sq[-1]
            objective = sol.diagnostics.objective[-1]
    except ValueError as exc:
        if isinstance(exc, InfeasiblePlanError):
            raise
        raise ConfigError(str(exc), "solve") from None
    diag = sol.diagnostics
    _write_csv(out / "diagnostics.csv", DIAGNOSTICS_COLUMNS, list(diag.rows()), prov,
               "awfl-diagnostics")
    plan_cols = ("client",) + tuple(f"t{t}" for t in range(p.shape[1]))
    for name, mat in (("p", p), ("w", w)):
        rows = [{"client": k + 1, **{f"t{t}": float(v) for t, v in enumerate(r)}}
                for k, r in enumerate(mat)]
        _write_csv(out / f"{name}.csv", plan_cols, rows, prov, f"awfl-plan-{name}")
    payload = {
        "provenance": prov,
        "mode": cfg["solve"]["mode"],
        "objective": objective,
        "residual_sq": residual_sq,
        "iterations": diag.iterations,
        "fallbacks": diag.fallbacks,
        "objective_monotone": diag.objective_monotone,
        "p": p.tolist(),
        "w": w.tolist(),
    }
    _write_json(out / "summary.json", payload)
    return payload


# ---------------------------------------------------------------- bounds

def cmd_bounds(cfg: dict) -> dict:
    b = cfg["bounds"]
    if b is None:
        raise ConfigError("bound constants are required", "bounds")
    c = BoundConstants(b["L"], b["G_max"], b["sigma_sq"], b["f_max"], b["eta"])
    p = bounds_p(cfg)
    K, T = p.shape
    if np.any((p <= 0) | (p > 1)):
        raise ConfigError("selection probabilities must lie in (0, 1]", "bounds.p")
    deltas = np.array([delta_approx(row, T) for row in p])
    try:
        terms = lemma1_terms(deltas, c, T, K)
        thm = theorem1_bound(p, c, T, K)
    except BoundValidityError as exc:
        raise ConfigError(str(exc), "bounds.eta") from None
    return {
        "provenance": _provenance(cfg, cfg["seeds"]),
        "delta_approx": deltas.tolist(),
        "lemma1_bound": float(sum(terms.values())),
        "lemma1_terms": terms,
        "theorem1_bound": thm,
    }


# ---------------------------------------------------------------- entry point

def _float_list(text: str) -> list[float]:
    vals = [v for v in text.split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    try:
        return [float(v) for v in vals]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _int_list(text: str) -> list[int]:
    vals = [v for v in text.split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    try:
        return [int(v) for v in vals]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awfl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve the joint selection/bandwidth problem"),
                        ("simulate", "run federated training with the configured schemes"),
                        ("sweep", "simulate over a list of rho values"),
                        ("bounds", "evaluate the convergence bounds")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seeds", type=_int_list)
        if name in ("simulate", "sweep"):
            p.add_argument("--parallel", type=int, default=1)
        if name == "sweep":
            p.add_argument("--rho", type=_float_list, required=True)
        elif name in ("simulate", "solve"):
            p.add_argument("--rho", type=float)
    return parser


def _fail(out: Path | None, code: int, exc: Exception, **extra) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, **extra}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = load_config(args.config)
        if args.seeds is not None:
            cfg["seeds"] = args.seeds
        rho = getattr(args, "rho", None)
        if isinstance(rho, float):
            cfg["scheme"]["rho"] = rho
        rhos = rho if isinstance(rho, list) else [cfg["scheme"]["rho"]]
        if any(not 0 < r < 1 for r in rhos):
            raise ConfigError("rho values must lie in (0, 1)", "rho")
        if getattr(args, "parallel", 1) < 1:
            raise ConfigError("--parallel must be >= 1", "parallel")
    except ConfigError as exc:
        return _fail(out, EXIT_CONFIG, exc, field=exc.field)

    (out / "error.json").unlink(missing_ok=True)
    try:
        if args.command == "bounds":
            report = cmd_bounds(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "bounds.json", report)
        elif args.command == "solve":
            res = cmd_solve(cfg, out)
            print(json.dumps({k: res[k] for k in ("objective", "residual_sq", "iterations")}))
        else:
            run = cmd_sweep if args.command == "sweep" else cmd_simulate
            res = run(cfg, out, rhos, args.parallel)
            print(json.dumps(res["aggregate"], indent=2))
    except ConfigError as exc:
        return _fail(out, EXIT_CONFIG, exc, field=exc.field)
    except (SolverError, InfeasiblePlanError) as exc:
        extra = {"residual": getattr(exc, "residual", None)}
        return _fail(out, EXIT_SOLVER, exc, **extra)
    except Exception as exc:  # anything else is a failed run
        if args.command in ("simulate", "sweep"):
            log.debug("simulation failed", exc_info=True)
            return _fail(out, EXIT_SIMULATION, exc)
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
