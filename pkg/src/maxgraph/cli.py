"""Command line front end: ``solve``, ``verify`` and ``barrier`` subcommands.

Exit codes: 0 success, 2 configuration or argument error, 3 acausal boundary
data, 4 solver nonconvergence, 5 a verification probe failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis as an
from . import barrier as ba
from .boundary_data import PRESETS, preset
from .domain_grid import build_grid, hessian_at, read_field_csv, write_field_csv
from .errors import AcausalityViolation, InfeasibleFit, InvalidArgument, NonConvergence, PreconditionViolation
from .solver import SolverConfig, continuity_solve

log = logging.getLogger("maxgraph")

EXIT_OK, EXIT_CONFIG, EXIT_ACAUSAL, EXIT_NONCONVERGENCE, EXIT_PROBE = 0, 2, 3, 4, 5

PROBES = (
    "residual",
    "first_variation",
    "second_variation",
    "volume_maximality",
    "uniqueness",
    "gradient_ellipticity",
    "ricci",
    "comparison",
)

_num_list = {"type": "array", "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["signature", "domain", "boundary"],
    "additionalProperties": False,
    "properties": {
        "signature": {
            "type": "object",
            "required": ["n", "m"],
            "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 1}, "m": {"type": "integer", "minimum": 1}},
        },
        "domain": {
            "type": "object",
            "required": ["bounds", "counts"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["cartesian_box", "polar_annulus"]},
                "bounds": {"type": "array", "items": _num_list, "minItems": 1},
                "counts": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            },
        },
        "boundary": {
            "type": "object",
            "required": ["preset"],
            "additionalProperties": False,
            "properties": {"preset": {"enum": list(PRESETS)}, "params": {"type": "object"}},
        },
        "solver": {"type": "object"},
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probes": {"type": "array", "items": {"enum": list(PROBES)}},
                "trials": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "solution_csv": {"type": ["string", "null"]},
                "comparison": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "eps": {"type": "number", "exclusiveMinimum": 0},
                        "Lambda": {"type": "number", "exclusiveMaximum": 0},
                        "theta": _num_list,
                        "node": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: {"type": "string"} for k in ("solution_csv", "progress_jsonl", "report_json", "probes_json")
            },
        },
    },
}

DEFAULT_OUTPUT = {
    "solution_csv": "solution.csv",
    "progress_jsonl": "progress.jsonl",
    "report_json": "report.json",
    "probes_json": "probes.json",
}


class ConfigError(Exception):
    pass


class Run:
    """A parsed and validated configuration."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            raw = json.loads(self.path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        self.raw = raw
        self.n = raw["signature"]["n"]
        self.m = raw["signature"]["m"]
        try:
            self.grid = build_grid(raw["domain"])
            if self.grid.n != self.n:
                raise ConfigError(f"domain dimension {self.grid.n} does not match signature n = {self.n}")
            b = raw["boundary"]
            self.boundary = preset(self.grid, b["preset"], self.m, **b.get("params", {}))
            self.solver = SolverConfig.from_dict(raw.get("solver"))
        except (InvalidArgument, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        self.verify = raw.get("verify") or {}
        out = {**DEFAULT_OUTPUT, **raw.get("output", {})}
        self.output = {k: self.resolve(v) for k, v in out.items()}

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.path.parent / p


def _dump_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _solve(run: Run):
    """Continuity solve with progress JSONL; returns ``(state, exit_code)``."""
    prog = run.output["progress_jsonl"]
    prog.parent.mkdir(parents=True, exist_ok=True)
    with open(prog, "w") as fh:

        def progress(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        try:
            return continuity_solve(run.boundary, run.grid, run.solver, progress), EXIT_OK
        except AcausalityViolation as exc:
            print(f"error: boundary data is not acausal: mu0 = {exc.mu0:.17g}", file=sys.stderr)
            return None, EXIT_ACAUSAL
        except NonConvergence as exc:
            t = exc.last_good_t if exc.last_good_t is not None else float("nan")
            print(f"error: solver did not converge: {exc}; last good t = {t:.17g}", file=sys.stderr)
            return None, EXIT_NONCONVERGENCE


def _write_solution(run: Run, state):
    write_field_csv(run.output["solution_csv"], state.u)
    report = an.gradient_ellipticity_report(state.u)
    _dump_json(run.output["report_json"], report.as_dict())
    return report


def cmd_solve(config) -> int:
    try:
        run = Run(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    state, code = _solve(run)
    if code:
        return code
    report = _write_solution(run, state)
    print(f"solved: residual_inf = {report.residual_inf:.3e}, sigma_max_Du = {report.sigma_max_Du:.6f}")
    return EXIT_OK


def _comparison_probe(run: Run, u, opts) -> dict:
    grid = u.grid
    eps = opts.get("eps", 0.01)
    lam = opts.get("Lambda", -1.0)
    theta = np.asarray(opts.get("theta", [1.0] + [0.0] * (run.m - 1)), float)
    node = opts.get("node")
    if node is None:
        b = grid.boundary_nodes
        # farthest boundary node from the origin in the first coordinate, avoiding box corners
        cand = [k for k in b[np.argsort(-grid.coords[b, 0], kind="stable")] if _has_frame(grid, k)]
        node = int(cand[0])
    p = ba.fit_boundary_barrier(node, theta, eps, lam, run.boundary, grid)
    rep = ba.comparison_check(u, p)
    return {
        "probe": "comparison",
        "node": node,
        "xi": p.xi.tolist(),
        "eta": p.eta.tolist(),
        "tangency_residual": p.tangency_residual,
        "boundary_contained": rep.boundary_contained,
        "interior_contained": rep.interior_contained,
        "interior_violations": rep.interior_violations,
        "worst_violation": rep.worst_violation,
        "passed": bool(rep.consistent),
    }


def _has_frame(grid, node):
    try:
        grid.boundary_frame(int(node))
        return True
    except InvalidArgument:
        return False


def _run_probe(name, run: Run, u, trials, seed) -> dict:
    tol = run.solver.newton_tol
    if name == "residual":
        res = an.interior_residual_inf(u)
        return {"probe": name, "residual_inf": res, "passed": bool(res <= 100 * tol)}
    if name == "first_variation":
        return an.first_variation_probe(u, min(trials, 20), seed)
    if name == "second_variation":
        return an.second_variation_probe(u, trials, seed)
    if name == "volume_maximality":
        return an.volume_maximality_probe(u, trials, seed)
    if name == "uniqueness":
        rep = an.uniqueness_probe(run.boundary, run.grid, run.solver)
        sols = rep.pop("solutions")
        # the state under test must agree with the independently solved routes too
        rep["state_vs_routes"] = float(max(np.abs(u.values - v).max() for v in sols.values()))
        rep["passed"] = bool(rep["passed"] and rep["state_vs_routes"] <= 1e-8)
        return rep
    if name == "gradient_ellipticity":
        rep = an.gradient_ellipticity_report(u, ricci=False)
        checks = rep.checks()
        return {"probe": name, **rep.as_dict(), **checks, "passed": bool(all(checks.values()))}
    if name == "ricci":
        val = an.ricci_check(u, tol)
        scale = max(1.0, float(np.nanmax(np.abs(hessian_at(u)))) ** 2)
        floor = -1e-6 * scale
        return {"probe": name, "ricci_min_eig": val, "floor": floor, "passed": bool(val >= floor)}
    if name == "comparison":
        return _comparison_probe(run, u, run.verify.get("comparison", {}))
    raise InvalidArgument(f"unknown probe {name!r}")


def cmd_verify(config) -> int:
    try:
        run = Run(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    probes = run.verify.get("probes", [])
    trials = run.verify.get("trials", 100)
    seed = run.verify.get("seed", 0)
    injected = run.verify.get("solution_csv")
    if injected:
        try:
            u = read_field_csv(run.resolve(injected), run.grid)
        except (OSError, InvalidArgument, ValueError) as exc:
            print(f"error: cannot load solution {injected}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if u.m != run.m:
            print("error: injected solution has the wrong number of components", file=sys.stderr)
            return EXIT_CONFIG
    else:
        state, code = _solve(run)
        if code:
            return code
        _write_solution(run, state)
        u = state.u
    if not probes:
        print("warning: verify block selects no probes; nothing to check", file=sys.stderr)
    results = {}
    for name in probes:
        try:
            res = _run_probe(name, run, u, trials, seed)
        except (PreconditionViolation, InvalidArgument, InfeasibleFit, NonConvergence) as exc:
            res = {"probe": name, "passed": False, "error": str(exc)}
        results[name] = res
        print(f"{name}: {'PASS' if res['passed'] else 'FAIL'}")
    all_ok = all(r["passed"] for r in results.values())
    _dump_json(run.output["probes_json"], {"passed": all_ok, "probes": results})
    return EXIT_OK if all_ok else EXIT_PROBE


def barrier_table(n: int, m: int, K: float, Lambda: float, samples: int, r_max: float | None = None):
    """Rows ``(r, f, f', c1, c2, c3)`` on an even grid of the admissible radii.

    ``r_max`` defaults to ``10 K`` when ``Lambda = 0``.  For ``Lambda < 0``
    the default range stops short of the admissible radius, which is
    excluded.  Shape values at ``r = 0`` are NaN.
    """
    if samples < 2:
        raise InvalidArgument("samples must be at least 2")
    p = ba.BarrierParams.at_origin(n, m, K, Lambda)
    if r_max is None:
        r = np.linspace(0.0, 10.0 * K, samples) if Lambda == 0 else np.linspace(0.0, p.r_max, samples, endpoint=False)
    else:
        if not (0 < r_max < p.r_max):
            raise InvalidArgument(f"--r-max must lie in (0, {p.r_max:.17g})")
        r = np.linspace(0.0, r_max, samples)
    f = ba.f_eval_many(p, r)
    rows = []
    for ri, fi in zip(r, f):
        if ri == 0:
            rows.append((ri, fi, 1.0, np.nan, np.nan, np.nan))
        else:
            s = ba.shape_spectrum(p, ri, fi)
            rows.append((ri, fi, float(ba.f_prime(p, ri)), s.c1, s.c2, s.c3))
    return rows


def cmd_barrier(args) -> int:
    try:
        rows = barrier_table(args.n, args.m, args.K, args.Lambda, args.samples, args.r_max)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["r", "f", "f_prime", "c1", "c2", "c3"])
        for row in rows:
            w.writerow(["%.17g" % v for v in row])
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maxgraph", description="Spacelike maximal graphs in R^{n,m}.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
    bp = sub.add_parser("barrier", help="tabulate the comparison profile")
    bp.add_argument("--n", type=_positive_int, required=True)
    bp.add_argument("--m", type=_positive_int, required=True)
    bp.add_argument("--K", type=float, required=True)
    bp.add_argument("--Lambda", type=float, required=True)
    bp.add_argument("--samples", type=int, required=True)
    bp.add_argument("--r-max", dest="r_max", type=float, default=None)
    bp.add_argument("--output", default=None, help="CSV path (default: stdout)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "solve":
        return cmd_solve(args.config)
    if args.command == "verify":
        return cmd_verify(args.config)
    return cmd_barrier(args)


if __name__ == "__main__":
    sys.exit(main())
