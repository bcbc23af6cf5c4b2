"""Configuration ingestion, run orchestration, artifact emission.

A run is batch only: parse and validate the JSON config (hypothesis
failures are rejected up front with the violated inequality named),
calibrate barriers, iterate to a fixed point, audit, and emit the fields
CSV, the iteration trace JSON, and the certificate JSON.

Exit codes: 0 converged and all audits pass; 1 config or hypothesis
error (nothing solved); 2 anything else (artifacts still written when
possible).  VARPX_THREADS caps the worker count for sweep rows.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import barriers as bmod
from . import forms, grid, plaplace, sysfix, verify
from .barriers import ProblemSpec, Regime
from .errors import (CalibrationError, ConfigError, EnvelopeError,
                     MixedSignError, OrderingError, SolveError)
from .expspace import ExponentField
from .grid import DomainSpec, GridFunction
from .plaplace import SolverOptions
from .sysfix import IterationOptions

_DEFAULT_OUTPUTS = {
    "fields_csv": "fields.csv",
    "certificate_json": "certificate.json",
    "trace_json": "trace.json",
}

MIN_RESOLUTION = 16

_REQUIRED = object()


def _get(d, key, path, types=None, default=_REQUIRED):
    if key not in d:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    v = d[key]
    if types is not None and not isinstance(v, types):
        raise ConfigError(f"{path}.{key}",
                          f"expected {types}, got {type(v).__name__}")
    return v


@dataclass
class RunConfig:
    domain: DomainSpec
    resolution: int
    mesh: grid.Mesh
    problem: ProblemSpec
    solver: SolverOptions
    iteration: IterationOptions
    outputs: dict
    seed: int
    hypothesis_report: object
    raw: dict
    barrier_C: float | None = None  # fixed scale; None means calibrate


def _parse_domain(obj, path="domain"):
    kind = _get(obj, "kind", path, str)
    if kind == "interval":
        return DomainSpec.interval(_get(obj, "a", path, (int, float)),
                                   _get(obj, "b", path, (int, float)))
    if kind == "rectangle":
        return DomainSpec.rectangle(_get(obj, "ax", path, (int, float)),
                                    _get(obj, "bx", path, (int, float)),
                                    _get(obj, "ay", path, (int, float)),
                                    _get(obj, "by", path, (int, float)))
    raise ConfigError(f"{path}.kind", f"unknown domain kind {kind!r}")


def _exponent_pair(mesh, obj, path):
    if not isinstance(obj, list) or len(obj) != 2:
        raise ConfigError(path, "expected a two-element list of expressions")
    out = []
    for i, e in enumerate(obj):
        expr = forms.spatial_only(forms.parse_expr(e, f"{path}[{i}]"), f"{path}[{i}]")
        vals = forms.evaluate_spatial(expr, mesh.nodes)
        out.append(ExponentField(mesh, vals))
    return tuple(out)


def parse_config(text: str, mesh_n: int | None = None) -> RunConfig:
    """Parse, materialize fields on the mesh, and validate eagerly.

    Hypothesis failures are raised as ConfigError naming the violated
    inequality with both sides evaluated."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("$", "top level must be an object")

    domain = _parse_domain(_get(raw, "domain", "$", dict))
    resolution = int(mesh_n if mesh_n is not None else
                     _get(raw, "resolution", "$", int))
    if resolution < MIN_RESOLUTION:
        raise ConfigError("$.resolution", f"must be >= {MIN_RESOLUTION}")
    mesh = grid.build_mesh(domain, resolution)

    p = _exponent_pair(mesh, _get(raw, "p", "$", list), "$.p")
    alpha = _exponent_pair(mesh, _get(raw, "alpha", "$", list), "$.alpha")
    beta = _exponent_pair(mesh, _get(raw, "beta", "$", list), "$.beta")
    gamma = _exponent_pair(mesh, _get(raw, "gamma", "$", list), "$.gamma")
    gamma_bar = _exponent_pair(mesh, _get(raw, "gamma_bar", "$", list), "$.gamma_bar")

    mm = _get(raw, "m", "$", list)
    MM = _get(raw, "M", "$", list)
    if len(mm) != 2 or len(MM) != 2:
        raise ConfigError("$.m", "m and M must be two-element lists")
    fobj = _get(raw, "f", "$", list)
    if not isinstance(fobj, list) or len(fobj) != 2:
        raise ConfigError("$.f", "expected a two-element list of expressions")
    f = tuple(forms.parse_expr(e, f"$.f[{i}]") for i, e in enumerate(fobj))

    seed = int(_get(raw, "seed", "$", int, default=0))
    try:
        problem = ProblemSpec(mesh=mesh, p1=p[0], p2=p[1], alpha=alpha, beta=beta,
                              gamma=gamma, gamma_bar=gamma_bar,
                              m=tuple(float(v) for v in mm),
                              M=tuple(float(v) for v in MM),
                              f=f, N_dim=int(_get(raw, "N_dim", "$", int, default=2)))
        problem.envelope_check(np.random.default_rng(seed))
    except (ValueError, TypeError, EnvelopeError) as exc:
        raise ConfigError("$.f" if isinstance(exc, EnvelopeError) else "$",
                          str(exc))

    try:
        report = bmod.validate_hypotheses(problem)
    except MixedSignError as exc:
        raise ConfigError("$.alpha", str(exc))
    if not report.passed:
        c = report.failed_checks()[0]
        raise ConfigError(
            "$.hypotheses",
            f"violated {c.name}: lhs={c.lhs:.6g} vs rhs={c.rhs:.6g}")

    sopts = _get(raw, "solver", "$", dict, default={})
    solver = SolverOptions(**{k: sopts[k] for k in
                              ("eps_reg", "tol_residual", "max_newton",
                               "line_search_shrink") if k in sopts})
    iopts = _get(raw, "iteration", "$", dict, default={})
    iteration = IterationOptions(**{k: iopts[k] for k in
                                    ("theta", "tol_step", "tol_residual",
                                     "max_iters", "anderson_depth") if k in iopts})
    outputs = dict(_DEFAULT_OUTPUTS)
    outputs.update(_get(raw, "outputs", "$", dict, default={}))
    barr = _get(raw, "barriers", "$", dict, default={})
    barrier_C = barr.get("C")
    if barrier_C is not None and not barrier_C > 1.0:
        raise ConfigError("$.barriers.C", "barrier scale must exceed 1")
    return RunConfig(domain=domain, resolution=resolution, mesh=mesh,
                     problem=problem, solver=solver, iteration=iteration,
                     outputs=outputs, seed=seed, hypothesis_report=report,
                     barrier_C=barrier_C, raw=raw)


@dataclass
class PipelineResult:
    mesh: grid.Mesh
    problem: ProblemSpec
    calibration: bmod.CalibrationResult
    solution: tuple
    report: sysfix.IterationReport
    caps: tuple | None


def run_pipeline(config: RunConfig, mesh_n: int | None = None) -> PipelineResult:
    """Calibrate and iterate; no audits, no artifacts."""
    if mesh_n is not None and mesh_n != config.resolution:
        mesh = grid.build_mesh(config.domain, mesh_n)
        problem = _rematerialize(config, mesh)
    else:
        mesh, problem = config.mesh, config.problem

    regime = bmod.validate_hypotheses(problem).regime
    caps = None
    if config.barrier_C is not None:
        # fixed scale requested: build the pair at that C and let the
        # membership trace expose whether it is large enough
        delta, xi, xid = bmod.resolve_delta(mesh, problem, config.solver)
        pair = bmod.build_barriers(mesh, problem, config.barrier_C, delta,
                                   config.solver, torsions=(xi, xid))
        if regime is Regime.POSITIVE_SUM:
            chk = bmod.check_barriers_positive_regime(mesh, problem, pair)
        else:
            chk = bmod.check_barriers_singular_regime(mesh, problem, pair, 2.0)
        cal = bmod.CalibrationResult(C=config.barrier_C, delta=delta, pair=pair,
                                     regime=regime,
                                     trajectory=[(config.barrier_C,
                                                  chk.worst_margin)])
    else:
        cal = bmod.calibrate_barriers(mesh, problem, config.solver)

    if regime is Regime.POSITIVE_SUM:
        solution, report = sysfix.fixed_point_iterate(
            mesh, problem, cal.pair, opts=config.iteration,
            solver_opts=config.solver, regime=regime)
    else:
        cres = sysfix.calibrate_caps(mesh, problem, cal.pair,
                                     opts=config.iteration,
                                     solver_opts=config.solver)
        # rechecks with the found cap; escalates C when the provisional
        # pass no longer holds at the final L
        chk = bmod.check_barriers_singular_regime(mesh, problem, cal.pair, cres.L)
        if not chk.ok and config.barrier_C is None:
            cal = bmod.calibrate_barriers(mesh, problem, config.solver, L=cres.L)
            cres = sysfix.calibrate_caps(mesh, problem, cal.pair,
                                         opts=config.iteration,
                                         solver_opts=config.solver)
        caps = (cres.L, cres.L_tilde)
        solution, report = sysfix.fixed_point_iterate(
            mesh, problem, cal.pair, opts=config.iteration,
            solver_opts=config.solver, regime=regime,
            L=cres.L, L_tilde=cres.L_tilde)
    return PipelineResult(mesh=mesh, problem=problem, calibration=cal,
                          solution=solution, report=report, caps=caps)


def _rematerialize(config: RunConfig, mesh) -> ProblemSpec:
    raw = config.raw

    def pair(key):
        return _exponent_pair(mesh, raw[key], f"$.{key}")

    p = pair("p")
    return ProblemSpec(mesh=mesh, p1=p[0], p2=p[1], alpha=pair("alpha"),
                       beta=pair("beta"), gamma=pair("gamma"),
                       gamma_bar=pair("gamma_bar"),
                       m=config.problem.m, M=config.problem.M,
                       f=config.problem.f, N_dim=config.problem.N_dim)


def _write_fields_csv(path, mesh, pipeline: PipelineResult):
    cols = {
        "u1": pipeline.solution[0].values,
        "u2": pipeline.solution[1].values,
        "d": mesh.distance,
        "under1": pipeline.calibration.pair.under[0].values,
        "over1": pipeline.calibration.pair.over[0].values,
        "under2": pipeline.calibration.pair.under[1].values,
        "over2": pipeline.calibration.pair.over[1].values,
    }
    grid.export_csv(path, mesh, cols)


def run(config: RunConfig, out_dir: str = ".") -> int:
    """Full pipeline with audits and artifacts; returns the exit status."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in config.outputs.items()}
    try:
        pipeline = run_pipeline(config)
        refined = run_pipeline(config, mesh_n=2 * pipeline.mesh.n)
        cert = verify.solution_certificate(
            pipeline.mesh, pipeline.problem, pipeline.solution,
            pipeline.calibration.pair, pipeline.report, caps=pipeline.caps,
            refined=(refined.solution, refined.mesh),
            rng=np.random.default_rng(config.seed),
            solver_opts=config.solver)
        _write_fields_csv(paths["fields_csv"], pipeline.mesh, pipeline)
        with open(paths["trace_json"], "w") as f:
            f.write(verify.certificate_to_json(pipeline.report.as_dict()))
        with open(paths["certificate_json"], "w") as f:
            f.write(verify.certificate_to_json(cert))
        ok = pipeline.report.converged and cert["all_audits_pass"]
        return 0 if ok else 2
    except (CalibrationError, SolveError, OrderingError, EnvelopeError) as exc:
        stub = {"error": str(exc), "schema_version": 1}
        with open(paths["certificate_json"], "w") as f:
            f.write(verify.certificate_to_json(stub))
        with open(paths["trace_json"], "w") as f:
            f.write(verify.certificate_to_json(stub))
        return 2


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if not isinstance(cur, dict) or k not in cur:
            raise ConfigError(dotted, "path does not address an existing key")
        cur = cur[k]
    if not isinstance(cur, dict) or keys[-1] not in cur:
        raise ConfigError(dotted, "path does not address an existing key")
    cur[keys[-1]] = value


def _sweep_row(raw, param, value, mesh_n):
    cfg_dict = copy.deepcopy(raw)
    _set_path(cfg_dict, param, value)
    row = {"value": value, "converged": False, "iters": None,
           "c0": None, "c1": None, "residual": None, "member": None,
           "error": ""}
    try:
        cfg = parse_config(json.dumps(cfg_dict), mesh_n=mesh_n)
        pv = run_pipeline(cfg)
        sandwich = verify.sandwich_audit(pv.solution, pv.mesh, pv.calibration.pair)
        row.update(converged=pv.report.converged, iters=pv.report.iters,
                   c0=sandwich["c0"], c1=sandwich["c1"],
                   member=all(pv.report.membership_trace),
                   residual=pv.report.residuals[-1] if pv.report.residuals else None)
    except Exception as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(raw_config: dict, param: str, values: list,
          out_dir: str = ".", mesh_n: int | None = None) -> list:
    """Run the pipeline once per parameter value; partial failures are
    recorded per row and the sweep continues."""
    os.makedirs(out_dir, exist_ok=True)
    workers = max(1, int(os.environ.get("VARPX_THREADS", "1")))
    rows = [None] * len(values)
    if workers > 1 and len(values) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            futs = {ex.submit(_sweep_row, raw_config, param, v, mesh_n): i
                    for i, v in enumerate(values)}
            for fut in concurrent.futures.as_completed(futs):
                rows[futs[fut]] = fut.result()
    else:
        for i, v in enumerate(values):
            rows[i] = _sweep_row(raw_config, param, v, mesh_n)
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w") as f:
        f.write("value,converged,iters,c0,c1,residual,member,error\n")
        for r in rows:
            f.write(",".join("" if r[k] is None else
                             (repr(r[k]) if isinstance(r[k], float) else str(r[k]))
                             for k in ("value", "converged", "iters", "c0", "c1",
                                       "residual", "member", "error")) + "\n")
    return rows


_AUDIT_NAMES = ("gradient", "linfty", "mvt")


def audit(config: RunConfig, only: str | None = None, out_dir: str = ".") -> int:
    """Standalone estimate audits on the configured exponents with unit
    data; 'mvt' runs the mean-value sampling on the first component."""
    names = _AUDIT_NAMES if only is None else (only,)
    for n in names:
        if n not in _AUDIT_NAMES:
            raise ConfigError("--only", f"unknown audit {n!r}; pick from {_AUDIT_NAMES}")
    mesh, problem = config.mesh, config.problem
    ones = GridFunction.constant(mesh, 1.0)
    out = []
    ok = True
    for name in names:
        if name == "gradient":
            for i in (0, 1):
                a = verify.gradient_estimate_audit(mesh, problem.p[i], ones,
                                                   opts=config.solver)
                a.name = f"gradient_estimate_p{i+1}"
                out.append(a.as_dict())
                ok &= a.verdict == "pass"
        elif name == "linfty":
            for i in (0, 1):
                a = verify.linfty_estimate_audit(mesh, problem.p[i], ones,
                                                 opts=config.solver)
                a.name = f"linfty_estimate_p{i+1}"
                out.append(a.as_dict())
                ok &= a.verdict == "pass"
        else:
            rng = np.random.default_rng(config.seed)
            res = plaplace.solve_dirichlet(mesh, problem.p1, ones, config.solver)
            tol = verify.mvt_tolerance(mesh, res.residual)
            checks = []
            for _ in range(50):
                f = verify.random_lipschitz_field(mesh, rng, 0.5, 2.0)
                phi = verify.random_sign_constant_test(mesh, rng)
                gam = verify.mvt_ratio(mesh, problem.p1, res.u, ones, f, phi)
                checks.append({"gamma_hat": gam,
                               "ok": bool(0.5 - tol <= gam <= 2.0 + tol)})
            ok &= all(c["ok"] for c in checks)
            out.append({"name": "mvt_sampling", "tolerance": tol,
                        "checks": checks,
                        "verdict": "pass" if all(c["ok"] for c in checks) else "fail"})
    os.makedirs(out_dir, exist_ok=True)
    payload = verify.certificate_to_json({"audits": out})
    with open(os.path.join(out_dir, "audit.json"), "w") as f:
        f.write(payload)
    sys.stdout.write(payload)
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="varpx",
                                     description="variable-exponent system solver")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to the JSON run configuration")
        p.add_argument("--mesh-n", type=int, default=None,
                       help="override the mesh resolution")
        p.add_argument("--out-dir", default=".", help="artifact directory")

    common(sub.add_parser("solve", help="run the full pipeline"))
    ps = sub.add_parser("sweep", help="re-run the pipeline over a parameter range")
    common(ps)
    ps.add_argument("--param", required=True, help="dotted path into the config")
    ps.add_argument("--values", required=True,
                    help="comma-separated JSON scalars")
    pa = sub.add_parser("audit", help="standalone estimate audits")
    common(pa)
    pa.add_argument("--only", default=None, choices=_AUDIT_NAMES)

    args = parser.parse_args(argv)
    try:
        with open(args.config) as f:
            text = f.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "sweep":
            raw = json.loads(text)
            values = [json.loads(v) for v in args.values.split(",")] \
                if args.values else []
            rows = sweep(raw, args.param, values, out_dir=args.out_dir,
                         mesh_n=args.mesh_n)
            for r in rows:
                print(r)
            return 0
        config = parse_config(text, mesh_n=args.mesh_n)
        if args.command == "solve":
            return run(config, out_dir=args.out_dir)
        return audit(config, only=args.only, out_dir=args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
