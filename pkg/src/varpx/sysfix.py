"""Decoupled solves and the damped fixed-point iteration.

Freezing the state (z1, z2) decouples the system: each component then
solves an independent scalar Dirichlet problem whose data is the
nonlinearity evaluated at the frozen state.  Iterating that map with
damping, starting from the lower barrier and clamping back into the
barrier box after each step, realizes the existence argument as a
computation: convergence is certified by a small step norm AND a small
weak residual of the coupled system at the final iterate, with set
membership recorded at every step.

The underlying existence proof is non-constructive, so non-convergence
of this particular iteration is a reported outcome, never an assertion
failure of the theory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import barriers as bmod
from . import expspace, grid, plaplace
from .barriers import BarrierPair, ProblemSpec, Regime
from .errors import SolveError
from .grid import GridFunction, Mesh
from .plaplace import SolverOptions

_MEMBER_ATOL = 1e-8
_MEMBER_RTOL = 1e-6


@dataclass
class IterationOptions:
    theta: float = 0.7
    tol_step: float = 1e-8
    tol_residual: float = 1e-6
    max_iters: int = 500
    anderson_depth: int = 0

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("damping theta must lie in (0, 1]")
        if self.anderson_depth < 0:
            raise ValueError("anderson_depth must be >= 0")


@dataclass
class SystemState:
    """Frozen state: the two fields, their gradients, and the norms the
    membership test needs."""

    z: tuple                  # (GridFunction, GridFunction)
    grad_z: tuple             # (VectorField, VectorField)
    grad_inf_norm: tuple
    grad_lux_norm: tuple
    in_set: bool = False

    @staticmethod
    def build(mesh: Mesh, spec: ProblemSpec, z1: GridFunction,
              z2: GridFunction) -> "SystemState":
        g1 = grid.gradient(mesh, z1)
        g2 = grid.gradient(mesh, z2)
        lux = []
        for gi, pi in ((g1, spec.p1), (g2, spec.p2)):
            mags = gi.magnitudes[mesh.qcells]
            lux.append(expspace.luxemburg_norm_from_samples(
                mags, pi.at_quad(), mesh.qweights, mesh.domain.measure))
        return SystemState(z=(z1, z2), grad_z=(g1, g2),
                           grad_inf_norm=(g1.inf_norm, g2.inf_norm),
                           grad_lux_norm=tuple(lux))


@dataclass
class IterationReport:
    """Trace of one damped fixed-point run.  Membership flags refer to
    the raw map output of each iteration (the invariance evidence);
    clamped iterates sit inside the value box by construction, so
    recording them would be vacuous."""

    iters: int
    step_norms: list          # per iteration: (step_1, step_2)
    residuals: list           # per iteration: max coupled weak residual
    membership_trace: list    # combined membership per iteration
    box_trace: list           # nodewise-sandwich part only
    grad_cap_trace: list      # gradient-cap part only
    converged: bool
    damping_used: float
    iterates: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "iters": self.iters,
            "converged": self.converged,
            "damping_used": self.damping_used,
            "step_norms": [list(s) for s in self.step_norms],
            "residuals": list(self.residuals),
            "membership_trace": list(self.membership_trace),
            "box_trace": list(self.box_trace),
            "grad_cap_trace": list(self.grad_cap_trace),
        }


def freeze_rhs(spec: ProblemSpec, state: SystemState, pair: BarrierPair):
    """Data for the decoupled solves: nonlinearities at the clamped
    state, sampled at interior quadrature points only."""
    return bmod.frozen_rhs_quad(spec.mesh, spec, state.z[0], state.z[1], pair)


def apply_map(mesh: Mesh, spec: ProblemSpec, state: SystemState,
              pair: BarrierPair, opts: SolverOptions | None = None):
    """One application of the frozen-state map: two independent scalar
    solves.  Component order is irrelevant because the frozen data
    decouples them."""
    h1, h2 = freeze_rhs(spec, state, pair)
    results = []
    for i, hq in ((0, h1), (1, h2)):
        res = plaplace.solve_dirichlet(mesh, spec.p[i], hq, opts)
        if not res.converged:
            raise SolveError(
                f"component {i+1} solve stalled at residual {res.residual:.3e}")
        results.append(res)
    return (results[0].u, results[1].u), (results[0], results[1])


def membership_check(state: SystemState, pair: BarrierPair, regime: Regime,
                     L: float | None = None, L_tilde: float | None = None):
    """(member, worst_violation) for the invariant set of the regime.

    positive_sum: under <= z <= over nodewise and |grad z|_inf <= C R.
    negative_sum: under <= z <= L nodewise and Luxemburg gradient norm
    <= L_tilde.  Violations are measured beyond a mixed tolerance.
    """
    viol = []
    split = {}
    for i in (0, 1):
        zi = state.z[i].values
        lower = pair.under[i].values
        low_v = float((lower - zi).max())
        if regime is Regime.POSITIVE_SUM:
            upper = pair.over[i].values
            up_v = float((zi - upper).max())
            cap = pair.C * pair.R
            g_v = state.grad_inf_norm[i] - cap
            scale = float(np.abs(upper).max())
        else:
            if L is None or L_tilde is None:
                raise ValueError("negative-sum membership needs L and L_tilde")
            up_v = float((zi - L).max())
            g_v = state.grad_lux_norm[i] - L_tilde
            scale = L
        tol = _MEMBER_ATOL + _MEMBER_RTOL * scale
        viol.append(max(low_v, up_v, g_v) - tol)
        split.setdefault("box", []).append(max(low_v, up_v) - tol)
        split.setdefault("grad", []).append(g_v - tol)
    worst = max(viol)
    state.in_set = worst <= 0.0
    return state.in_set, max(worst, 0.0), {
        "box_ok": max(split["box"]) <= 0.0,
        "grad_ok": max(split["grad"]) <= 0.0,
    }


def coupled_residual(mesh: Mesh, spec: ProblemSpec, z1: GridFunction,
                     z2: GridFunction, pair: BarrierPair):
    """Weak residual of each component equation with the nonlinearity
    evaluated at the pair itself (zero exactly at a discrete fixed point)."""
    h1, h2 = bmod.frozen_rhs_quad(mesh, spec, z1, z2, pair)
    r1 = plaplace.weak_residual(mesh, spec.p1, z1, h1)
    r2 = plaplace.weak_residual(mesh, spec.p2, z2, h2)
    return r1, r2


def _anderson_step(x_hist, g_hist, depth):
    """Type-II Anderson mixing on the residuals g - x; falls back to the
    newest damped target when the least-squares system is degenerate."""
    f_hist = [g - x for x, g in zip(x_hist, g_hist)]
    m = min(depth, len(x_hist) - 1)
    if m < 1:
        return g_hist[-1]
    F = np.column_stack([f_hist[-1] - f_hist[-2 - j] for j in range(m)])
    G = np.column_stack([g_hist[-1] - g_hist[-2 - j] for j in range(m)])
    try:
        coef, *_ = np.linalg.lstsq(F, f_hist[-1], rcond=1e-10)
    except np.linalg.LinAlgError:
        return g_hist[-1]
    if not np.all(np.isfinite(coef)):
        return g_hist[-1]
    return g_hist[-1] - G @ coef


def fixed_point_iterate(mesh: Mesh, spec: ProblemSpec, pair: BarrierPair,
                        init: SystemState | None = None,
                        opts: IterationOptions | None = None,
                        solver_opts: SolverOptions | None = None,
                        regime: Regime | None = None,
                        L: float | None = None,
                        L_tilde: float | None = None,
                        store_iterates: bool = False):
    """Damped iteration z <- (1-theta) z + theta T(z), clamped back into
    the invariant box nodewise after every step (clamping preserves the
    zero trace; gradient-cap violations are only flagged, never edited).

    Stops when the step norm <= tol_step AND the coupled weak residual
    <= tol_residual.  Returns ((z1, z2), IterationReport).
    """
    opts = opts or IterationOptions()
    if regime is None:
        regime = bmod.validate_hypotheses(spec).regime
    if regime is Regime.NEGATIVE_SUM and (L is None or L_tilde is None):
        raise ValueError("negative-sum iteration needs calibrated caps L, L_tilde")

    if init is None:
        z1 = pair.under[0].copy()
        z2 = pair.under[1].copy()
    else:
        z1, z2 = init.z[0].copy(), init.z[1].copy()

    nn = mesh.n_nodes
    x_hist, g_hist = [], []
    steps, residuals, member_trace, box_trace, grad_trace = [], [], [], [], []
    iterates = []
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        state = SystemState.build(mesh, spec, z1, z2)
        (u1, u2), _ = apply_map(mesh, spec, state, pair, solver_opts)
        out_state = SystemState.build(mesh, spec, u1, u2)
        member, _, parts = membership_check(out_state, pair, regime, L, L_tilde)
        x = np.concatenate([z1.values, z2.values])
        g = (1.0 - opts.theta) * x + opts.theta * np.concatenate([u1.values, u2.values])
        if opts.anderson_depth > 0:
            x_hist.append(x)
            g_hist.append(g)
            x_new = _anderson_step(x_hist, g_hist, opts.anderson_depth)
            keep = opts.anderson_depth + 1
            x_hist, g_hist = x_hist[-keep:], g_hist[-keep:]
        else:
            x_new = g
        v1, v2 = x_new[:nn].copy(), x_new[nn:].copy()
        for i, v in ((0, v1), (1, v2)):
            np.maximum(v, pair.under[i].values, out=v)
            if regime is Regime.POSITIVE_SUM:
                np.minimum(v, pair.over[i].values, out=v)
            else:
                np.minimum(v, L, out=v)
        s1 = float(np.abs(v1 - z1.values).max())
        s2 = float(np.abs(v2 - z2.values).max())
        z1 = GridFunction(mesh, v1, zero_trace=True)
        z2 = GridFunction(mesh, v2, zero_trace=True)

        r1, r2 = coupled_residual(mesh, spec, z1, z2, pair)
        steps.append((s1, s2))
        residuals.append(max(r1, r2))
        member_trace.append(bool(member))
        box_trace.append(bool(parts["box_ok"]))
        grad_trace.append(bool(parts["grad_ok"]))
        if store_iterates:
            iterates.append((v1.copy(), v2.copy()))
        if max(s1, s2) <= opts.tol_step and residuals[-1] <= opts.tol_residual:
            # stationary and consistent; success additionally requires the
            # final map output to sit inside the invariant set
            converged = bool(member)
            break

    report = IterationReport(iters=it, step_norms=steps, residuals=residuals,
                             membership_trace=member_trace, box_trace=box_trace,
                             grad_cap_trace=grad_trace, converged=converged,
                             damping_used=opts.theta, iterates=iterates)
    return (z1, z2), report


@dataclass
class CapsResult:
    L: float
    L_tilde: float
    pilot_iters: int
    pilot_converged: bool
    max_sup: float
    max_grad_lux: float
    formula_L: float | None = None   # measured-constant sup bound, when available


def calibrate_caps(mesh: Mesh, spec: ProblemSpec, pair: BarrierPair,
                   opts: IterationOptions | None = None,
                   solver_opts: SolverOptions | None = None,
                   linfty_constants: tuple | None = None) -> CapsResult:
    """Doubling search for the sup-norm cap L and the Luxemburg gradient
    cap L_tilde of the singular regime.

    A pilot run of the iteration (upper clamp disabled) records the
    largest sup norm and gradient norm any iterate attains; each cap is
    then the smallest power of two with 5 percent headroom above the
    record (and L > 1 always).  When measured constants from the sup-norm
    estimate audit are supplied, the bound const * |h|_LN^(1/(p_pm-1))
    evaluated at the final frozen data joins the search floor.  The caps
    exist for 'large enough' constants only; this search finds concrete
    ones.
    """
    opts = opts or IterationOptions()
    big = float(np.finfo(float).max) ** 0.25
    z1 = pair.under[0].copy()
    z2 = pair.under[1].copy()
    max_sup = max(float(np.abs(z1.values).max()), float(np.abs(z2.values).max()))
    st = SystemState.build(mesh, spec, z1, z2)
    max_lux = max(st.grad_lux_norm)
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        state = SystemState.build(mesh, spec, z1, z2)
        (u1, u2), _ = apply_map(mesh, spec, state, pair, solver_opts)
        v1 = (1.0 - opts.theta) * z1.values + opts.theta * u1.values
        v2 = (1.0 - opts.theta) * z2.values + opts.theta * u2.values
        v1 = np.minimum(np.maximum(v1, pair.under[0].values), big)
        v2 = np.minimum(np.maximum(v2, pair.under[1].values), big)
        s = max(float(np.abs(v1 - z1.values).max()),
                float(np.abs(v2 - z2.values).max()))
        z1 = GridFunction(mesh, v1, zero_trace=True)
        z2 = GridFunction(mesh, v2, zero_trace=True)
        st = SystemState.build(mesh, spec, z1, z2)
        max_sup = max(max_sup, float(np.abs(v1).max()), float(np.abs(v2).max()))
        max_lux = max(max_lux, *st.grad_lux_norm)
        if s <= opts.tol_step:
            converged = True
            break

    formula_L = None
    if linfty_constants is not None:
        N = max(mesh.dim, 2)
        hqs = bmod.frozen_rhs_quad(mesh, spec, z1, z2, pair)
        formula_L = 0.0
        for i in (0, 1):
            hn = float((mesh.qweights @ np.abs(hqs[i].values) ** N) ** (1.0 / N))
            expo = spec.p[i].p_minus if hn > 1.0 else spec.p[i].p_plus
            formula_L = max(formula_L,
                            linfty_constants[i] * hn ** (1.0 / (expo - 1.0)))

    target = max(max_sup, formula_L or 0.0)
    L = 2.0
    while L < 1.05 * target:
        L *= 2.0
    Lt = 1.0
    while Lt < 1.05 * max_lux:
        Lt *= 2.0
    return CapsResult(L=L, L_tilde=Lt, pilot_iters=it, pilot_converged=converged,
                      max_sup=max_sup, max_grad_lux=max_lux, formula_L=formula_L)
