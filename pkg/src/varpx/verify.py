"""Numerical audits of the a priori estimates and identities.

Each audit measures a candidate constant across a family of scaled
inputs and certifies boundedness; the constants themselves exist only
abstractly upstream, so the measured values are regression data, not
reference values.  The mean-value ratio check evaluates

    gamma_hat = int f |grad u|^(p-2) grad u . grad phi dx / int h phi dx

for a solve u of the scalar Dirichlet problem with sign-constant data h
and a sign-constant test field phi, and asserts gamma_hat lies in the
range of f up to a tolerance coupled to the solver residual (the
identity is exact only for the exact weak solution).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import barriers as bmod
from . import grid, plaplace, sysfix
from .barriers import BarrierPair, ProblemSpec, validate_hypotheses
from .expspace import ExponentField
from .grid import GridFunction, Mesh, QuadField
from .plaplace import SolverOptions

DEFAULT_SCALES = (1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)

# An audit family fails if the top-of-scale trend still grows by more
# than this fraction (blow-up), or if any ratio is non-finite.
_TREND_TOL = 0.05


@dataclass
class EstimateAudit:
    name: str
    measured_ratio: float            # candidate constant: max of the family
    scale_family: list               # (input_scale, ratio) pairs
    verdict: str                     # "pass" | "fail"
    tolerance: float
    spread: float = 0.0              # (max-min)/max over the family
    notes: list = field(default_factory=list)

    def as_dict(self):
        def safe(v):
            return float(v) if np.isfinite(v) else None

        return {
            "name": self.name,
            "measured_ratio": safe(self.measured_ratio),
            "ratios": [[safe(s), safe(r)] for s, r in self.scale_family],
            "verdict": self.verdict,
            "tolerance": self.tolerance,
            "spread": safe(self.spread),
            "notes": list(self.notes),
        }


def _family_verdict(ratios):
    arr = np.array([r for _, r in ratios])
    if not np.all(np.isfinite(arr)):
        return "fail", 0.0
    spread = float((arr.max() - arr.min()) / arr.max()) if arr.max() > 0 else 0.0
    if len(arr) >= 3:
        trend = (arr[-1] - arr[-3]) / arr[-3] if arr[-3] > 0 else 0.0
        if trend > _TREND_TOL:
            return "fail", spread
    return "pass", spread


def _branch_exponent(p: ExponentField, norm_of_h: float) -> float:
    """p_minus when the data norm exceeds one, p_plus otherwise."""
    return p.p_minus if norm_of_h > 1.0 else p.p_plus


def gradient_estimate_audit(mesh: Mesh, p: ExponentField, h_base: GridFunction,
                            scales=DEFAULT_SCALES,
                            opts: SolverOptions | None = None) -> EstimateAudit:
    """Ratio |grad u|_inf / |h|_inf^(1/(p_pm - 1)) across a scale family
    of the data, with the branch exponent chosen by whether |h|_inf
    exceeds one.  Passes when the family stays bounded (no growth trend
    at the top scales)."""
    hb = h_base.values
    if np.any(hb > 0) and np.any(hb < 0):
        raise ValueError("h_base must be sign-constant")
    if not np.any(hb != 0):
        raise ValueError("h_base must be nontrivial")
    family = []
    for lam in scales:
        res = plaplace.solve_dirichlet(mesh, p, GridFunction(mesh, lam * hb), opts)
        if not res.converged:
            raise plaplace.SolveError(f"audit solve stalled at scale {lam}")
        hinf = float(np.abs(lam * hb).max())
        expo = _branch_exponent(p, hinf)
        ratio = grid.gradient(mesh, res.u).inf_norm / hinf ** (1.0 / (expo - 1.0))
        family.append((float(lam), float(ratio)))
    verdict, spread = _family_verdict(family)
    return EstimateAudit(name="gradient_estimate", measured_ratio=max(r for _, r in family),
                         scale_family=family, verdict=verdict,
                         tolerance=_TREND_TOL, spread=spread)


def lebesgue_n_norm(mesh: Mesh, h, N: int) -> float:
    hq = grid.as_quad_values(mesh, h)
    return float((mesh.qweights @ np.abs(hq) ** N) ** (1.0 / N))


def linfty_estimate_audit(mesh: Mesh, p: ExponentField, h_base,
                          scales=DEFAULT_SCALES,
                          opts: SolverOptions | None = None) -> EstimateAudit:
    """Ratio |u|_inf / |h|_LN^(1/(p_pm - 1)) across a scale family.  The
    exponent N is the ambient dimension; on one-dimensional meshes N=2
    is used for the exponent arithmetic and recorded as a deviation."""
    notes = []
    N = mesh.dim
    if N < 2:
        N = 2
        notes.append("dim=1: N=2 used for the exponent arithmetic")
    hq = grid.as_quad_values(mesh, h_base)
    if np.any(hq > 0) and np.any(hq < 0):
        raise ValueError("h_base must be sign-constant")
    family = []
    for lam in scales:
        res = plaplace.solve_dirichlet(mesh, p, QuadField(mesh, lam * hq), opts)
        if not res.converged:
            raise plaplace.SolveError(f"audit solve stalled at scale {lam}")
        hn = lebesgue_n_norm(mesh, QuadField(mesh, lam * hq), N)
        expo = _branch_exponent(p, hn)
        ratio = float(np.abs(res.u.values).max()) / hn ** (1.0 / (expo - 1.0))
        family.append((float(lam), float(ratio)))
    verdict, spread = _family_verdict(family)
    return EstimateAudit(name="linfty_estimate", measured_ratio=max(r for _, r in family),
                         scale_family=family, verdict=verdict,
                         tolerance=_TREND_TOL, spread=spread, notes=notes)


def mvt_ratio(mesh: Mesh, p: ExponentField, u: GridFunction, h,
              f: GridFunction, phi: GridFunction) -> float:
    """The flux-weighted mean value gamma_hat of f against the test
    field phi; f Lipschitz with known range, phi sign-constant with zero
    trace, h the sign-constant data of the solve that produced u."""
    grid.check_same_mesh(mesh, u, f, phi)
    pv = phi.values
    if np.any(pv > 0) and np.any(pv < 0):
        raise ValueError("phi must be sign-constant")
    if np.any(pv[mesh.boundary_nodes] != 0.0):
        raise ValueError("phi must vanish on the boundary")
    hq = grid.as_quad_values(mesh, h)
    if np.any(hq > 1e-14) and np.any(hq < -1e-14):
        raise ValueError("h must be sign-constant")
    den = float(mesh.qweights @ (hq * grid.at_quad(mesh, pv)))
    if abs(den) < 1e-14:
        raise ZeroDivisionError("degenerate test field: int h phi vanishes")
    gu = grid.cell_gradients(mesh, u.values)[mesh.qcells]
    gphi = grid.cell_gradients(mesh, pv)[mesh.qcells]
    g2 = (gu ** 2).sum(axis=1)
    pq = p.at_quad()
    coeff = plaplace._unreg_flux_coeff(g2, pq)
    fq = grid.at_quad(mesh, f.values)
    num = float(mesh.qweights @ (fq * coeff * (gu * gphi).sum(axis=1)))
    return num / den


def mvt_tolerance(mesh: Mesh, solver_residual: float) -> float:
    """5 x (solver residual + quadrature tolerance); the quadrature term
    is the h^2 consistency scale of the P1 pipeline."""
    return 5.0 * (solver_residual + mesh.h ** 2)


def random_lipschitz_field(mesh: Mesh, rng: np.random.Generator, lo: float,
                           hi: float, knots: int = 17) -> GridFunction:
    """Piecewise-linear random field with a mesh-independent Lipschitz
    scale: random values at a coarse knot grid, interpolated, then
    rescaled to attain [lo, hi] exactly."""
    if mesh.dim == 1:
        a, b = mesh.domain.bounds
        kx = np.linspace(a, b, knots)
        kv = rng.normal(size=knots)
        vals = np.interp(mesh.nodes[:, 0], kx, kv)
    else:
        ax, bx, ay, by = mesh.domain.bounds
        kx = np.linspace(ax, bx, knots)
        ky = np.linspace(ay, by, knots)
        kv = rng.normal(size=(knots, knots))
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        ix = np.clip(np.searchsorted(kx, x) - 1, 0, knots - 2)
        iy = np.clip(np.searchsorted(ky, y) - 1, 0, knots - 2)
        tx = (x - kx[ix]) / (kx[ix + 1] - kx[ix])
        ty = (y - ky[iy]) / (ky[iy + 1] - ky[iy])
        vals = ((1 - tx) * (1 - ty) * kv[iy, ix] + tx * (1 - ty) * kv[iy, ix + 1]
                + (1 - tx) * ty * kv[iy + 1, ix] + tx * ty * kv[iy + 1, ix + 1])
    vmin, vmax = vals.min(), vals.max()
    if vmax - vmin < 1e-12:
        vals = np.full_like(vals, 0.5 * (lo + hi))
    else:
        vals = lo + (hi - lo) * (vals - vmin) / (vmax - vmin)
    return GridFunction(mesh, vals)


def random_sign_constant_test(mesh: Mesh, rng: np.random.Generator,
                              knots: int = 9) -> GridFunction:
    """Nonnegative zero-trace test field: a coarse random positive
    profile times the distance field (keeping the Lipschitz scale
    mesh-independent and the trace exactly zero)."""
    base = random_lipschitz_field(mesh, rng, 0.1, 1.0, knots=knots)
    vals = base.values * mesh.distance
    vals[mesh.boundary_nodes] = 0.0
    return GridFunction(mesh, vals, zero_trace=True)


def distance_ratio(mesh: Mesh, u_values: np.ndarray):
    """(min, max) of u/d over interior nodes."""
    ii = mesh.interior_nodes
    q = np.asarray(u_values, dtype=float)[ii] / mesh.distance[ii]
    return float(q.min()), float(q.max())


def sandwich_audit(solution, mesh: Mesh, pair: BarrierPair,
                   refined=None, tol_rel: float = 0.2) -> dict:
    """Distance-comparability constants of an accepted solution pair:
    c0 = min u_i/d, c1 = max u_i/d over interior nodes.  Pass requires
    c0 > 0 with both constants stable within tol_rel under one mesh
    refinement; ``refined`` supplies (solution, mesh) at the finer
    resolution when that part of the audit is wanted."""
    per = []
    for i in (0, 1):
        c0_i, c1_i = distance_ratio(mesh, solution[i].values)
        per.append({"c0": c0_i, "c1": c1_i})
    c0 = min(p["c0"] for p in per)
    c1 = max(p["c1"] for p in per)
    out = {"c0": c0, "c1": c1, "per_component": per,
           "stability_checked": False, "verdict": "pass"}
    if not (c0 > 0.0 and np.isfinite(c1)):
        out["verdict"] = "fail"
        return out
    if refined is not None:
        fine_solution, fine_mesh = refined
        f_per = [distance_ratio(fine_mesh, fine_solution[i].values) for i in (0, 1)]
        fc0 = min(v[0] for v in f_per)
        fc1 = max(v[1] for v in f_per)
        out["stability_checked"] = True
        out["refined"] = {"c0": fc0, "c1": fc1}
        drift0 = abs(fc0 - c0) / max(abs(c0), 1e-30)
        drift1 = abs(fc1 - c1) / max(abs(c1), 1e-30)
        out["drift"] = {"c0": drift0, "c1": drift1}
        if drift0 > tol_rel or drift1 > tol_rel or fc0 <= 0.0:
            out["verdict"] = "fail"
    return out


def mvt_spot_checks(mesh: Mesh, spec: ProblemSpec, solution, pair: BarrierPair,
                    rng: np.random.Generator, n_checks: int = 5,
                    f_range=(0.5, 2.0)) -> list:
    """Mean-value checks on the solution's own component equations with
    random Lipschitz weights and the solution itself as test field."""
    h1, h2 = bmod.frozen_rhs_quad(mesh, spec, solution[0], solution[1], pair)
    checks = []
    for i, hq in ((0, h1), (1, h2)):
        u = solution[i]
        resid = plaplace.weak_residual(mesh, spec.p[i], u, hq)
        tol = mvt_tolerance(mesh, resid)
        for _ in range(n_checks):
            f = random_lipschitz_field(mesh, rng, *f_range)
            gam = mvt_ratio(mesh, spec.p[i], u, hq, f, u)
            checks.append({
                "component": i + 1,
                "gamma_hat": gam,
                "range": [f_range[0], f_range[1]],
                "tolerance": tol,
                "ok": bool(f_range[0] - tol <= gam <= f_range[1] + tol),
            })
    return checks


def certificate_to_json(cert: dict) -> str:
    """Stable serialization: sorted keys, shortest round-trip floats."""
    return json.dumps(cert, sort_keys=True, indent=2, allow_nan=False) + "\n"


def solution_certificate(mesh: Mesh, spec: ProblemSpec, solution,
                         pair: BarrierPair, report, caps=None,
                         refined=None, rng=None,
                         solver_opts: SolverOptions | None = None,
                         audit_scales=DEFAULT_SCALES) -> dict:
    """Machine-readable verification record for a completed run:
    residuals, membership, sandwich constants, hypothesis report, the
    estimate audits, and mean-value spot checks.  Deterministic given
    the same inputs and rng seed."""
    rng = rng or np.random.default_rng(0)
    r1, r2 = sysfix.coupled_residual(mesh, spec, solution[0], solution[1], pair)
    hyp = validate_hypotheses(spec)
    audits = []
    ones = GridFunction.constant(mesh, 1.0)
    for i in (0, 1):
        a = gradient_estimate_audit(mesh, spec.p[i], ones, audit_scales, solver_opts)
        a.name = f"gradient_estimate_p{i+1}"
        audits.append(a)
        a = linfty_estimate_audit(mesh, spec.p[i], ones, audit_scales, solver_opts)
        a.name = f"linfty_estimate_p{i+1}"
        audits.append(a)
    sandwich = sandwich_audit(solution, mesh, pair, refined=refined)
    mvt = mvt_spot_checks(mesh, spec, solution, pair, rng)
    cert = {
        "schema_version": 1,
        "mesh": {"dim": mesh.dim, "n": mesh.n, "h": mesh.h},
        "residuals": {"component_1": r1, "component_2": r2, "max": max(r1, r2)},
        "membership": {
            "final": bool(report.membership_trace[-1]) if report.membership_trace else False,
            "all_iterations": bool(all(report.membership_trace)),
            "gradient_cap_all": bool(all(report.grad_cap_trace)),
        },
        "iteration": {"iters": report.iters, "converged": bool(report.converged),
                      "damping": report.damping_used},
        "sandwich": sandwich,
        "barriers": {"C": pair.C, "delta": pair.delta, "R": pair.R,
                     "c0_measured": pair.c0_measured,
                     "c1_measured": pair.c1_measured},
        "hypothesis_report": hyp.as_dict(),
        "audits": [a.as_dict() for a in audits],
        "mvt_spot_checks": mvt,
    }
    if caps is not None:
        cert["caps"] = {"L": caps[0], "L_tilde": caps[1]}
    audits_pass = (all(a.verdict == "pass" for a in audits)
                   and sandwich["verdict"] == "pass"
                   and all(c["ok"] for c in mvt))
    cert["all_audits_pass"] = bool(audits_pass)
    return cert
