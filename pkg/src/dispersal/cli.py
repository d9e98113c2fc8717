"""Command-line runner.

    dispersal run <config.json> [--out DIR] [--seed N]
    dispersal acceptance [--fast]

Artifacts are written into a scratch directory next to the output directory
and moved into place only when the experiment finishes, so a failed run leaves
nothing behind. Errors go to stderr as one JSON record.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import acceptance
from .config import ConfigError, ExperimentConfig, parse_config, sigma_callable, sigma_descriptor, sigma_field
from .dynamics import admissible_dt, comparison_check, invasion_experiment, logistic_reaction, simulate
from .mesh import ball_nodes, candidate_balls
from .operators import operator
from .scenarios import run_construction_a, run_construction_b
from .sharmonic import fit_s_harmonic, local_impossibility
from .spectral import principal_eigenpair, reverse_condition
from .stability import mismatch_scan
from .steady import max_principle_check, minimize_energy

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def _write_field_csv(path, grid, columns: dict):
    names = ["x", "y"][: grid.dim] + list(columns)
    rows = [list(map(float, pt)) + [float(columns[c][k]) for c in columns] for k, pt in enumerate(grid.nodes)]
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")


def _exp_eigen(cfg, out):
    grid = cfg.grid.build()
    s = 0.5 if cfg.s is None else cfg.s
    rep = principal_eigenpair(operator(grid, s))
    _write_field_csv(out / "eigenfunction.csv", grid, {"phi": rep.eigenfunction})
    numbers = {"lambda_1": rep.eigenvalue, "poincare_constant": 1 / rep.eigenvalue,
               "residual": rep.residual, "iterations": rep.iterations}
    return numbers, {"converged": rep.converged, "eigenfunction nonnegative": bool(np.all(rep.eigenfunction >= 0))}


def _resource(cfg, grid, default):
    return sigma_field(cfg.sigma, grid) if cfg.sigma is not None else default(grid)


def _twice_lambda(grid):
    return np.full(grid.size, 2 * principal_eigenpair(operator(grid, 1.0)).eigenvalue)


def _exp_steady(cfg, out):
    grid = cfg.grid.build()
    s = 1.0 if cfg.s is None else cfg.s
    sigma = _resource(cfg, grid, _twice_lambda)
    st = minimize_energy(grid, s, sigma, descriptor=sigma_descriptor(cfg.sigma))
    st.to_csv(out / "steady.csv")
    rc = reverse_condition(grid, s, sigma)
    numbers = {"residual": st.residual, "energy": st.energy.value, "sup_u": st.sup,
               "reverse_condition": rc.holds, "nu": rc.nu}
    tol = cfg.tolerances.steady or 1e-8 * max(1.0, float(sigma.max()))
    return numbers, {"residual": st.residual <= tol, "nonnegative": bool(np.all(st.u >= 0)),
                     "max principle": max_principle_check(st, sigma),
                     "nontrivial iff reverse condition": st.nontrivial == rc.holds}


def _exp_mismatch(cfg, out):
    grid = cfg.grid.build()
    s = 0.5 if cfg.s is None else cfg.s
    sigma = _resource(cfg, grid, _twice_lambda)
    st = minimize_energy(grid, 1.0, sigma, descriptor=sigma_descriptor(cfg.sigma))
    cands = [(np.asarray(cfg.x0), cfg.r)] if cfg.x0 is not None and cfg.r is not None else candidate_balls(grid)
    cert = mismatch_scan(grid, s, sigma, st.u, cands)
    cert.to_json(out / "certificate.json")
    st.to_csv(out / "steady.csv")
    return cert.as_dict(), {"certified": cert.certified}


def _exp_rescaled(cfg, out):
    s = 0.5 if cfg.s is None else cfg.s
    grid = cfg.grid.build()
    base = sigma_field(cfg.sigma, grid) if cfg.sigma is not None else None
    if base is not None and (grid.dim != 1 or grid.lower != (-1.0,) or grid.upper != (1.0,)):
        raise ConfigError("the rescaled construction runs on the interval (-1, 1)")
    a = run_construction_a(s, grid.n, base)
    a.certificate.to_json(out / "certificate.json")
    return a.summary(), {"satisfied": a.certificate.satisfied, "sign pair": a.sign_pair,
                         "certified": a.certificate.certified}


def _exp_branching(cfg, out):
    s = 0.3 if cfg.s is None else cfg.s
    x0 = tuple(cfg.x0) if cfg.x0 is not None else (0.0,)
    r = 0.125 if cfg.r is None else cfg.r
    b = run_construction_b(s, cfg.grid.n, x0, r, cfg.s_prime, cfg.levels, with_tau_star=not cfg.fast)
    b.sweep.to_csv(out / "sweep.csv")
    b.sweep.curve.to_csv(out / "branching_curve.csv")
    if b.certificate is not None:
        b.certificate.to_json(out / "certificate.json")
    return b.summary(), {"certified tau found": b.certified_tau is not None, "sign pair": b.sign_pair,
                         "sup decreasing": b.sweep.sup_monotone()}


def _exp_invasion(cfg, out):
    s = 0.3 if cfg.s is None else cfg.s
    x0 = tuple(cfg.x0) if cfg.x0 is not None else (0.0,)
    r = 0.125 if cfg.r is None else cfg.r
    b = run_construction_b(s, cfg.grid.n, x0, r, cfg.s_prime, cfg.levels, with_tau_star=False)
    cert = b.certificate
    if cert is None:
        raise RuntimeError("no certified scenario to invade")
    k = [row.tau for row in b.sweep.rows].index(b.certified_tau)
    sigma = b.certified_tau * ball_nodes(b.grid, b.sweep.x0, b.sweep.r).chi
    ut = b.sweep.states[k].u
    grow = invasion_experiment(b.grid, ut, cert.witness, cfg.eps, sigma, s, lam=cert.lam)
    half = invasion_experiment(b.grid, ut, cert.witness, cfg.eps / 2, sigma, s, lam=cert.lam)
    dt = cfg.dt or 0.9 * admissible_dt(sigma, ut, cfg.eps * cert.witness)
    traj = simulate(b.grid, ut, cfg.eps * cert.witness, sigma, s, cfg.T, dt)
    traj.to_csv(out / "trajectory.csv")
    numbers = {"tau": b.certified_tau, "lambda": cert.lam, "growth_rate": grow.rate,
               "growth_rate_half_eps": half.rate, "final_L2_v": traj.diagnostics[-1]["L2_v"]}
    return numbers, {"growth sign matches lambda": np.sign(grow.rate) == np.sign(cert.lam),
                     "linear regime": abs(half.rate - grow.rate) < 0.05 * abs(grow.rate)}


def _exp_comparison(cfg, out, rng):
    grid = cfg.grid.build()
    s = 0.5 if cfg.s is None else cfg.s
    sigma = _resource(cfg, grid, _twice_lambda)
    results = []
    for _ in range(cfg.pairs):
        w0 = rng.uniform(0, 1, grid.size) * sigma
        v0 = w0 + rng.uniform(0, 1, grid.size)
        reaction = logistic_reaction(sigma, float(max(v0.max(), sigma.max())))
        dt = cfg.dt or 1 / (4 * (reaction.lipschitz + 1))
        results.append(comparison_check(grid, v0, w0, reaction, s, cfg.T, dt))
    with open(out / "comparison.csv", "w") as fh:
        fh.write("pair,holds,min_gap,tol\n")
        for k, rep in enumerate(results):
            fh.write(f"{k},{int(rep.holds)},{rep.min_gap!r},{rep.tol!r}\n")
    return {"min_gap": min(r.min_gap for r in results)}, {"ordering preserved": all(r.holds for r in results)}


def _exp_sharmonic(cfg, out):
    s = 0.5 if cfg.s is None else cfg.s
    target = sigma_callable(cfg.sigma if cfg.sigma is not None else "1 + x^2/2", cfg.grid.dim)
    misfits = []
    for R in cfg.radii:
        fit = fit_s_harmonic(target, s, R, cfg.grid.n, cfg.grid.dim)
        tag = f"R{R:g}"
        fit.to_csv(out / f"fit_{tag}.csv")
        fit.to_json(out / f"fit_{tag}.json")
        misfits.append(fit.misfit)
    order = sorted(range(len(cfg.radii)), key=lambda k: cfg.radii[k])
    ordered = [misfits[k] for k in order]
    return ({"radii": cfg.radii, "misfits": misfits},
            {"misfit improves with R": all(b < a for a, b in zip(ordered, ordered[1:]))})


def _exp_impossibility(cfg, out):
    s = 0.5 if cfg.s is None else cfg.s
    rep = local_impossibility(cfg.M, cfg.grid.n, cfg.grid.dim, fractional_s=s if s < 1 else None)
    (out / "impossibility.json").write_text(json.dumps(rep.summary(), indent=2) + "\n")
    return rep.summary(), {"harmonic misfit obeys Harnack bound": rep.harmonic_misfit >= rep.harnack_bound - 1e-9}


def _exp_acceptance(cfg, out, seed):
    run = acceptance.run_acceptance(seed=seed, fast=cfg.fast)
    (out / "acceptance.txt").write_text("\n".join(run.lines()) + "\n")
    numbers = acceptance.key_numbers(run.results)
    return numbers, {f"criterion {r.number}": r.passed for r in run.results}


def execute(cfg: ExperimentConfig, out: Path, seed: int) -> tuple[dict, dict]:
    rng = np.random.default_rng(seed)
    name = cfg.experiment
    if name == "comparison":
        return _exp_comparison(cfg, out, rng)
    if name == "acceptance":
        return _exp_acceptance(cfg, out, seed)
    runners = {
        "eigen": _exp_eigen,
        "steady": _exp_steady,
        "mismatch": _exp_mismatch,
        "rescaled": _exp_rescaled,
        "branching": _exp_branching,
        "invasion": _exp_invasion,
        "sharmonic": _exp_sharmonic,
        "impossibility": _exp_impossibility,
    }
    return runners[name](cfg, out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def run(cfg: ExperimentConfig, out_dir, seed: int | None = None) -> tuple[int, dict]:
    """Run one experiment and publish its artifacts atomically; returns (exit status, summary)."""
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".dispersal-", dir=out.parent))
    start = time.perf_counter()
    try:
        numbers, flags = execute(cfg, scratch, seed)
        summary = _jsonable({
            "experiment": cfg.experiment,
            "inputs": cfg.model_dump(mode="json") | {"seed": seed},
            "key_numbers": numbers,
            "pass_flags": flags,
            "wall_time": time.perf_counter() - start,
        })
        (scratch / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        out.mkdir(parents=True, exist_ok=True)
        for item in scratch.iterdir():
            target = out / item.name
            if target.exists():
                target.unlink()
            shutil.move(str(item), target)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    status = EXIT_OK if all(summary["pass_flags"].values()) else EXIT_FAILED
    return status, summary


def _error(exc: Exception, kind: str) -> int:
    record = getattr(exc, "detail", None) or {"error": str(exc)}
    record = {"type": kind, **_jsonable(record)}
    print(json.dumps(record), file=sys.stderr)
    return EXIT_ERROR


def _cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
    except ConfigError as exc:
        return _error(exc, "config")
    except (OSError, UnicodeDecodeError) as exc:
        return _error(exc, "io")
    out = args.out or cfg.out or "results"
    try:
        status, summary = run(cfg, out, args.seed)
    except ConfigError as exc:
        return _error(exc, "config")
    except Exception as exc:  # module errors become a machine-readable record
        return _error(exc, type(exc).__name__)
    print(json.dumps({"experiment": summary["experiment"], "out": str(out),
                      "pass_flags": summary["pass_flags"]}))
    return status


def _cmd_acceptance(args) -> int:
    run_ = acceptance.run_acceptance(seed=args.seed, fast=args.fast)
    for line in run_.lines():
        print(line)
    return EXIT_OK if run_.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispersal", description="Local/nonlocal competition experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default: config 'out' or ./results)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)
    p_acc = sub.add_parser("acceptance", help="run the acceptance suite")
    p_acc.add_argument("--fast", action="store_true", help="skip the determinism re-run")
    p_acc.add_argument("--seed", type=int, default=0)
    p_acc.set_defaults(func=_cmd_acceptance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
