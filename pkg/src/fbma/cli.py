"""Command line entry point: ``python -m fbma <subcommand> ...``.

Subcommands
-----------
solve          minimize the energy for a config, then run the verification battery
verify         re-run the battery on a saved ``pair.json``
oracle-1d      write the 1D shooting profile as CSV
fit-expansion  boundary exponent fit of a saved solution
inequalities   explicit-constant bounds over a seeded random corpus

Exit codes: 0 when every asserted check passes, 1 when some check fails,
2 for a malformed config or arguments, 3 when the solver fails (a partial
report is still written).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _cap_threads() -> None:
    """Honour ``MA_FB_THREADS`` (only effective before numpy is first imported)."""
    cap = os.environ.get("MA_FB_THREADS")
    if cap:
        for var in _THREAD_VARS:
            os.environ[var] = cap


_cap_threads()

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",", header=",".join(header),
               comments="", fmt="%.17g")


def _manifest(args, out: Path, seed) -> dict:
    return {"config_path": getattr(args, "config", None), "output_directory": str(out),
            "subcommand": args.command, "timestamp": datetime.now(timezone.utc).isoformat(),
            "seed": seed, "version": __version__}


def _load_config(path: str):
    from .solver import SolverConfig
    from .verification.battery import VerificationOptions
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    ver = data.pop("verification", None)
    try:
        return SolverConfig.from_json(data), VerificationOptions.from_json(ver)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _write_solution(out: Path, v, k: int, header: dict) -> None:
    from .verification.battery import profile_rows
    _dump(out / "pair.json", {"k": k, "v": v.to_json(), **header})
    pieces = np.column_stack([v.slopes, v.intercepts])
    _write_csv(out / "pieces.csv", [f"a{i}" for i in range(v.dimension)] + ["b"], pieces)
    if v.dimension == 1:
        _write_csv(out / "profile.csv", ["y", "v", "vstar"], profile_rows(v))


def _battery(out: Path, v, k: int, opts, header: dict) -> tuple[dict, dict]:
    from .convex import legendre_transform
    from .verification.battery import run_battery
    from .verification.checks import trace_level_set
    results, verdicts = run_battery(v, k, opts)
    if v.dimension == 2:
        u = legendre_transform(v)
        center = np.zeros(2) if u.value_at_origin < 0 else u.min_point
        pts = trace_level_set(u.slopes, u.intercepts, center, opts.convexity_resolution)
        _write_csv(out / "free_boundary.csv", ["x1", "x2"], pts)
    return results, verdicts


def cmd_solve(args) -> int:
    from .errors import ConvergenceError
    from .solver import ERROR, minimize_energy
    cfg, opts = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = {"version": __version__, "config_hash": cfg.digest()}
    _dump(out / "manifest.json", _manifest(args, out, cfg.random_seed))
    try:
        v, u, rep = minimize_energy(cfg)
    except ConvergenceError as exc:
        _dump(out / "report.json", {**header, "config": cfg.to_json(), "error": str(exc),
                                    "diagnostics": getattr(exc, "diagnostics", None)})
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    report = {**header, "config": cfg.to_json(), "solve": rep.to_json()}
    report["solve"].pop("runtime_seconds", None)  # keeps reports bit-identical across runs
    _dump(out / "timing.json", {"runtime_seconds": rep.runtime_seconds})
    _write_solution(out, v, cfg.k, header)
    if rep.convergence_flag == ERROR:
        _dump(out / "report.json", report)
        print(f"solver error: {rep.message}", file=sys.stderr)
        return EXIT_SOLVER
    results, verdicts = _battery(out, v, cfg.k, opts, header)
    report.update(checks=results, verdicts=verdicts, passed=all(verdicts.values()))
    _dump(out / "report.json", report)
    _summary(verdicts)
    return EXIT_OK if report["passed"] else EXIT_CHECKS


def _load_pair(path: str):
    from .convex import MaxAffineFunction
    try:
        data = json.loads(Path(path).read_text())
        return MaxAffineFunction.from_json(data["v"]), int(data["k"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read solution {path}: {exc}") from exc


def cmd_verify(args) -> int:
    from .verification.battery import VerificationOptions
    v, k = _load_pair(args.pair)
    try:
        opts = VerificationOptions.from_json(json.loads(args.options) if args.options else None)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = {"version": __version__, "pair": Path(args.pair).name}
    results, verdicts = _battery(out, v, k, opts, header)
    _dump(out / "verify.json", {**header, "checks": results, "verdicts": verdicts,
                                "passed": all(verdicts.values())})
    _summary(verdicts)
    return EXIT_OK if all(verdicts.values()) else EXIT_CHECKS


def cmd_oracle(args) -> int:
    from .geometry import Polytope
    from .verification.checks import fit_boundary_exponent
    from .verification.ode import ode_shooting_oracle
    if args.k < 1:
        raise ConfigError("the shooting oracle needs k >= 1")
    prof = ode_shooting_oracle(args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"oracle_k{args.k}.csv", ["y", "v", "dv", "vstar"], prof.to_rows())
    fit = fit_boundary_exponent(prof, 1, (0.0, 0.3), k=args.k, domain=Polytope.box([-1.0], [1.0]))
    info = {"version": __version__, "k": args.k, "v0": prof.v0,
            "boundary_value": prof.boundary_value, "boundary_slope": prof.boundary_slope,
            "boundary_vstar": prof.boundary_vstar, "columns": ["y", "v", "dv", "vstar"],
            "exponent_fit": fit.to_json() | {"relative_error": fit.relative_error}}
    _dump(out / f"oracle_k{args.k}.json", info)
    print(f"k={args.k} v(0)={prof.v0:.12f} exponent={fit.fitted_exponent:.5f}")
    return EXIT_OK if fit.relative_error <= 0.01 else EXIT_CHECKS


def cmd_fit(args) -> int:
    from .verification.battery import default_exponent_window
    from .verification.checks import fit_boundary_exponent
    v, k = _load_pair(args.pair)
    window = tuple(args.window) if args.window else default_exponent_window(v)
    faces = [args.face] if args.face is not None else range(len(v.domain.normals))
    fits = []
    for face in faces:
        fit = fit_boundary_exponent(v, face, window, k=k)
        fits.append(fit.to_json() | {"relative_error": fit.relative_error,
                                     "hessian_positive_definite": fit.hessian_positive_definite})
    text = json.dumps({"version": __version__, "fits": fits}, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    ok = all(f["relative_error"] <= 0.05 and f["hessian_positive_definite"] for f in fits)
    return EXIT_OK if ok else EXIT_CHECKS


def cmd_inequalities(args) -> int:
    from .functionals import inequality_suite, random_admissible
    from .geometry import barycentered_simplex
    rng = np.random.default_rng(args.seed)
    records = []
    for n in args.dimensions:
        P = barycentered_simplex(n)
        for i in range(args.count):
            v = random_admissible(P, rng)
            w = random_admissible(P, rng)
            r = inequality_suite(v, w)
            records.append({"n": n, "index": i, "passed": bool(r["passed"]),
                            "margins": {key: r[key]["margin"] for key in
                                        ("lower_bound", "upper_bound_origin",
                                         "upper_bound_centered", "concavity")}})
    passed = sum(r["passed"] for r in records)
    summary = {"version": __version__, "seed": args.seed, "count": len(records),
               "passed": passed, "records": records}
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{passed}/{len(records)} pass")
    return EXIT_OK if passed == len(records) else EXIT_CHECKS


def _summary(verdicts: dict) -> None:
    for name, ok in verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbma", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="minimize the energy and verify the result")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("verify", help="re-run checks on a saved solution")
    s.add_argument("--pair", required=True, help="pair.json written by solve")
    s.add_argument("--options", help="JSON object of verification options")
    s.add_argument("--out", default="verify")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("oracle-1d", help="1D shooting profile as CSV")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--out", default="oracle")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("fit-expansion", help="boundary exponent fit of a saved solution")
    s.add_argument("--pair", required=True)
    s.add_argument("--face", type=int)
    s.add_argument("--window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("inequalities", help="bounds on a seeded random corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--dimensions", type=int, nargs="+", default=[1, 2])
    s.add_argument("--out")
    s.set_defaults(func=cmd_inequalities)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
