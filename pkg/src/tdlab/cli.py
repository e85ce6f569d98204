"""Batch experiment driver.

Usage::

    tdlab run      --config exp.json --out results/
    tdlab sweep    --config sweep.json --out results/ --workers 4
    tdlab check    --config exp.json
    tdlab safedist --config exp.json --seed 3

Exit status: 0 when the experiment ran (diverging runs included), 2 for
configuration errors, 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import (COUNTEREXAMPLE_RESTART, CounterExampleParams, classify,
                       counterexample_build, format_table, safe_distribution_search, sigma_k,
                       verify_contraction)
from .linear import FeatureMap, SingularSystemError, spectral_radius
from .mrp import InvalidMrpError, Mrp, check_distribution
from .objectives import (ControlProblem, FixedTargetQuadratic, Objective, QuadraticLinear, control_quadratic,
                         estimate_constants, huber_linear, logistic_linear, quadratic_linear,
                         ridge_regularized)
from .solvers import SolverConfig, Trajectory, solve_exact, solve_gradient

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


class ConfigError(ValueError):
    pass


class OutputError(OSError):
    pass


def _field(doc: dict, key: str, where: str, kind=float, default: Any = ...):
    if key not in doc:
        if default is ...:
            raise ConfigError(f"{where}.{key}: missing required field '{key}'")
        return default
    try:
        return kind(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from None


# problem / objective construction ------------------------------------------------------


def _problem_kind(problem: dict) -> str:
    sources = [k for k in ("builtin", "P", "control") if k in problem]
    if len(sources) != 1:
        raise ConfigError("problem: exactly one of 'builtin', inline MRP ('P', ...) or "
                          f"'control' is required, found {sources or 'none'}")
    kind = sources[0]
    if kind == "builtin" and problem["builtin"] != "counterexample":
        raise ConfigError(f"problem.builtin: unknown builtin {problem['builtin']!r}")
    return {"builtin": "counterexample", "P": "inline", "control": "control"}[kind]


def build_problem(problem: dict):
    """Return ``(mrp, phi, d, restart)`` or a :class:`ControlProblem`."""
    kind = _problem_kind(problem)
    if kind == "counterexample":
        try:
            params = CounterExampleParams(
                epsilon=_field(problem, "epsilon", "problem"),
                gamma=_field(problem, "gamma", "problem"),
                d1=_field(problem, "d1", "problem", default=0.5),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"problem: {exc}") from None
        mrp, phi, d = counterexample_build(params)
        if "d" in problem:
            d = np.asarray(problem["d"], dtype=float)
        return mrp, phi, d, COUNTEREXAMPLE_RESTART
    if kind == "inline":
        try:
            mrp = Mrp.from_dict(problem)
        except InvalidMrpError as exc:
            raise ConfigError(f"problem: {exc}") from None
        for key in ("Phi", "d"):
            if key not in problem:
                raise ConfigError(f"problem.{key}: missing required field '{key}'")
        phi = FeatureMap(problem["Phi"])
        bad = phi.problems(mrp)
        if bad:
            raise ConfigError("problem.Phi: " + "; ".join(bad))
        try:
            d = check_distribution(mrp, problem["d"])
        except ValueError as exc:
            raise ConfigError(f"problem.d: {exc}") from None
        return mrp, phi, d, problem.get("restart")
    doc = problem["control"]
    for key in ("d", "pi", "P", "r", "features", "gamma"):
        _field(doc, key, "problem.control", kind=lambda x: x)
    return doc


def build_objective(problem: dict, section: dict) -> Objective:
    loss = section.get("loss", "quadratic")
    built = build_problem(problem)
    try:
        if loss == "control":
            if not isinstance(built, dict):
                raise ConfigError("objective.loss: 'control' needs a problem.control section")
            cp = ControlProblem(**built, greedify=section.get("greedify", "max"),
                                tau=_field(section, "tau", "objective", default=1.0))
            obj = control_quadratic(cp)
        else:
            if isinstance(built, dict):
                raise ConfigError(f"objective.loss: {loss!r} needs an MRP problem, not a control one")
            mrp, phi, d, _ = built
            if loss == "quadratic":
                obj = quadratic_linear(mrp, phi, d)
            elif loss == "huber":
                obj = huber_linear(mrp, phi, d, _field(section, "delta", "objective"))
            elif loss == "logcosh":
                obj = logistic_linear(mrp, phi, d, _field(section, "scale", "objective"))
            elif loss == "fixed_target":
                target = _field(section, "target", "objective", kind=lambda x: np.asarray(x, float))
                if target.shape != (mrp.n,):
                    raise ConfigError(f"objective.target: expected {mrp.n} entries")
                obj = FixedTargetQuadratic(phi, d, target)
            else:
                raise ConfigError(f"objective.loss: unknown loss {loss!r}")
        if section.get("ridge") is not None:
            obj = ridge_regularized(obj, _field(section, "ridge", "objective"))
    except ConfigError:
        raise
    except (ValueError, SingularSystemError) as exc:
        raise ConfigError(f"objective: {exc}") from None
    return obj


def build_solver(section: dict) -> tuple[str, SolverConfig, np.ndarray | None]:
    method = section.get("method", "exact")
    if method not in ("exact", "gradient"):
        raise ConfigError(f"solver.method: unknown method {method!r}")
    kwargs = {}
    for key, kind in (("T", int), ("K", int), ("alpha", float), ("inner_tol", float),
                      ("divergence_guard", float), ("step_tol", float), ("grad_tol", float)):
        if section.get(key) is not None:
            kwargs[key] = _field(section, key, "solver", kind=kind)
    try:
        cfg = SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None
    theta0 = section.get("theta0")
    return method, cfg, None if theta0 is None else np.asarray(theta0, dtype=float)


def _constants(obj: Objective, seed: int, samples: int = 1000, box=(-10.0, 10.0)):
    analytic = obj.analytic_constants()
    estimated = estimate_constants(obj, probe_box=box, samples=samples, rng_seed=seed)
    return analytic, estimated


def _solve(obj: Objective, method: str, cfg: SolverConfig, theta0) -> Trajectory:
    if theta0 is not None and theta0.shape != (obj.dim,):
        raise ConfigError(f"solver.theta0: expected {obj.dim} entries, got {theta0.shape}")
    solve = solve_exact if method == "exact" else solve_gradient
    try:
        return solve(obj, theta0, cfg)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


# output helpers ---------------------------------------------------------------------------


def _out_dir(args, config: dict) -> Path:
    out = args.out or config.get("output", {}).get("dir") or "."
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise OutputError(f"output directory {out} is not writable")
    return path


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _finite(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


# subcommands ------------------------------------------------------------------------------


def cmd_run(config: dict, args) -> int:
    problem = config.get("problem")
    if problem is None:
        raise ConfigError("problem: missing required section 'problem'")
    obj = build_objective(problem, config.get("objective", {}))
    method, cfg, theta0 = build_solver(config.get("solver", {}))
    traj = _solve(obj, method, cfg, theta0)
    out = _out_dir(args, config)

    report = None
    if traj.distances is not None:
        fc = obj.analytic_constants() or estimate_constants(obj, rng_seed=config["seed"])
        report = verify_contraction(traj, fc)
    _write(out / "trajectory.csv", traj.to_csv())
    doc = {"config": config, "trajectory": traj.to_dict(),
           "contraction": None if report is None else report.to_dict()}
    _write(out / "trajectory.json", _dump(doc))

    status = "diverged" if traj.diverged else "converged" if traj.converged else "not converged"
    print(f"{method} solve: {len(traj.thetas) - 1} steps, {status}")
    if report is not None:
        print(format_table([[report.predicted_sigma, report.max_observed_ratio,
                             report.bound_satisfied, report.margin, report.n_ratios]],
                           ["predicted", "max_ratio", "bound_ok", "margin", "ratios"]))
    for note in traj.notes:
        print(f"note: {note}")
    return EXIT_OK


SWEEP_COLUMNS = ["epsilon", "gamma", "d1", "K", "rho", "converged", "predicted", "observed",
                 "max_ratio", "bound"]


def observed_verdict(traj: Trajectory) -> str:
    """Empirical verdict: solver flags first, then the trend over the second half."""
    if traj.converged:
        return "converge"
    if traj.diverged:
        return "diverge"
    d = traj.distances
    if d is None or len(d) < 3:
        return "undecided"
    mid, last = d[len(d) // 2], d[-1]
    if last > mid:
        return "diverge"
    return "converge" if last < mid else "undecided"


def sweep_cell(cell: dict) -> list:
    """Run one grid cell; pure function of its arguments."""
    problem = copy.deepcopy(cell["problem"])
    for key in ("epsilon", "gamma", "d1"):
        if cell[key] is not None:
            problem[key] = cell[key]
    solver = dict(cell["solver"])
    if cell["K"] is not None:
        solver["K"] = cell["K"]
        solver["method"] = "gradient"
    obj = build_objective(problem, cell["objective"])
    method, cfg, theta0 = build_solver(solver)
    rho = None
    if isinstance(obj, QuadraticLinear):
        rho = spectral_radius(obj.system.A)
    traj = _solve(obj, method, cfg, theta0)
    observed = observed_verdict(traj)
    fc = obj.analytic_constants()
    bound = ""
    if fc is not None and np.isfinite(fc.eta):
        bound = fc.eta if method == "exact" else sigma_k(fc.kappa, fc.eta, cfg.K)
    ratios = traj.ratios
    return [
        problem.get("epsilon", ""), problem.get("gamma", ""), problem.get("d1", ""),
        cfg.K if method == "gradient" else "",
        "" if rho is None else rho,
        traj.converged,
        "" if rho is None else classify(rho),
        observed,
        float(ratios.max()) if ratios.size else "",
        bound,
    ]


def _axis(sweep: dict, key: str, kind) -> list:
    vals = sweep.get(key)
    if vals is None:
        return [None]
    if not isinstance(vals, list) or not vals:
        raise ConfigError(f"sweep.{key}: must be a nonempty list")
    try:
        return [kind(v) for v in vals]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep.{key}: {exc}") from None


def cmd_sweep(config: dict, args) -> int:
    sweep = config.get("sweep")
    if not sweep:
        raise ConfigError("sweep: missing required section 'sweep'")
    problem = config.get("problem")
    if problem is None:
        raise ConfigError("problem: missing required section 'problem'")
    kind = _problem_kind(problem)
    if kind != "counterexample" and any(k in sweep for k in ("epsilon", "d1")):
        raise ConfigError("sweep: epsilon and d1 axes need the builtin counterexample problem")
    if kind == "control" and "gamma" in sweep:
        raise ConfigError("sweep.gamma: not supported for control problems")
    axes = [_axis(sweep, "epsilon", float), _axis(sweep, "gamma", float),
            _axis(sweep, "d1", float), _axis(sweep, "K", int)]
    cells = [{"problem": problem, "objective": config.get("objective", {}),
              "solver": config.get("solver", {}), "epsilon": e, "gamma": g, "d1": d1, "K": K}
             for e, g, d1, K in itertools.product(*axes)]
    # validate configuration once up front so errors surface with their field names
    sweep_cell(dict(cells[0], solver={**cells[0]["solver"], "T": 1}))
    out = _out_dir(args, config)

    workers = max(1, args.workers or config.get("workers", 1))
    if workers == 1 or len(cells) == 1:
        rows = [sweep_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(sweep_cell, cells))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    _write(out / "sweep.csv", buf.getvalue())
    _write(out / "sweep.json", _dump({"config": config, "columns": SWEEP_COLUMNS, "rows": rows}))
    print(format_table(rows, SWEEP_COLUMNS))
    return EXIT_OK


def cmd_check(config: dict, args) -> int:
    problem = config.get("problem")
    if problem is None:
        raise ConfigError("problem: missing required section 'problem'")
    obj = build_objective(problem, config.get("objective", {}))
    check = config.get("check", {})
    Ks = [int(k) for k in check.get("K", [1, 5, 20])]
    samples = int(check.get("samples", 1000))
    box = tuple(check.get("probe_box", (-10.0, 10.0)))
    try:
        analytic, estimated = _constants(obj, config["seed"], samples, box)
    except ValueError as exc:
        raise ConfigError(f"check: {exc}") from None

    rows, doc = [], {"config": config, "constants": {}}
    for label, fc in (("analytic", analytic), ("estimated", estimated)):
        if fc is None:
            continue
        sig = {K: (sigma_k(fc.kappa, fc.eta, K) if np.isfinite(fc.eta) else None) for K in Ks}
        holds = fc.hypothesis_holds
        rows.append([label, fc.F_theta, fc.F_w, fc.L, fc.eta, fc.kappa,
                     *[("" if sig[K] is None else sig[K]) for K in Ks],
                     "hypothesis holds" if holds else "hypothesis fails"])
        doc["constants"][label] = {**{k: _finite(v) if isinstance(v, float) else v
                                      for k, v in fc.to_dict().items()},
                                   "sigma_K": {str(K): sig[K] for K in Ks},
                                   "hypothesis_holds": holds}
    headers = ["source", "F_theta", "F_w", "L", "eta", "kappa", *[f"sigma_{K}" for K in Ks],
               "F_theta < F_w"]
    print(format_table(rows, headers))
    if analytic is not None and analytic.lambda_max_theta is not None:
        lam = analytic.lambda_max_theta
        doc["lambda_max_theta"] = lam
        if not np.isclose(lam, analytic.F_theta, rtol=1e-12, atol=1e-15):
            print(f"note: largest eigenvalue of Mtheta ({lam:.6g}) differs from its operator "
                  f"norm ({analytic.F_theta:.6g}); F_theta uses the operator norm")
    if args.out or config.get("output", {}).get("dir"):
        _write(_out_dir(args, config) / "check.json", _dump(doc))
    return EXIT_OK


def cmd_safedist(config: dict, args) -> int:
    problem = config.get("problem")
    if problem is None:
        raise ConfigError("problem: missing required section 'problem'")
    built = build_problem(problem)
    if isinstance(built, dict):
        raise ConfigError("problem: safedist needs an MRP problem, not a control one")
    mrp, phi, _, restart = built
    trials = int(config.get("safedist", {}).get("trials", 1000))
    try:
        res = safe_distribution_search(mrp, phi, trials=trials, rng_seed=config["seed"],
                                       restart=restart)
    except (ValueError, SingularSystemError) as exc:
        raise ConfigError(f"problem: {exc}") from None
    print(format_table([[res.rho, res.found, res.evaluated, res.stationary_rho,
                         " ".join(f"{x:.4g}" for x in res.d)]],
                       ["rho", "found", "evaluated", "stationary_rho", "d"]))
    print("randomised search heuristic; not a certificate of the best distribution")
    if args.out or config.get("output", {}).get("dir"):
        _write(_out_dir(args, config) / "safedist.json",
               _dump({"config": config, "result": res.to_dict()}))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "safedist": cmd_safedist}


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OutputError(f"cannot read config {path}: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdlab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config seed)")
        p.add_argument("--workers", type=int, help="parallel sweep workers")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        config.setdefault("seed", 0)
        if not isinstance(config["seed"], int) or config["seed"] < 0:
            raise ConfigError("seed: must be a nonnegative integer")
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
