"""Growth hypotheses and sub/supersolution barriers.

The coupled system's nonlinearities are pinned between a product lower
envelope m * s1^alpha s2^beta and an upper envelope that adds gradient
powers.  Validation classifies the signed extremes of each exponent,
checks the admissibility inequalities, and assigns the solve regime:

    POSITIVE_SUM  - every component has signed-extreme sum > 0; barriers
                    sandwich iterates between scaled torsion fields.
    NEGATIVE_SUM  - some component sum is <= 0 (the strongly singular
                    case); extra smallness caps on the exponents apply
                    and iterates are capped above by a sup-norm bound.

Barriers are under = xi_delta / C and over = C * xi built from the
torsion fields; the calibration search doubles C until the weak-form
comparison inequalities hold at every interior hat function.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import grid, plaplace
from .errors import (CalibrationError, DeltaTooLargeError, EnvelopeError,
                     MixedSignError, OrderingError)
from .expspace import ExponentField
from .forms import Expr
from .grid import GridFunction, Mesh
from .plaplace import SolverOptions

# Weak inequalities are asserted with this slack (quadrature noise floor).
_INEQ_ATOL = 1e-8
_INEQ_RTOL = 1e-6


class Regime(str, enum.Enum):
    POSITIVE_SUM = "positive_sum"
    NEGATIVE_SUM = "negative_sum"


def sign_class(f: ExponentField) -> str:
    """'nonneg' if f >= 0 everywhere, 'negative' if f <= 0 with f < 0
    somewhere; a genuine sign change is rejected because the signed
    extreme and the comparison case tables presume a fixed sign."""
    if f.p_minus >= 0.0:
        return "nonneg"
    if f.p_plus <= 0.0:
        return "negative"
    raise MixedSignError(
        f"exponent changes sign on the domain (range [{f.p_minus}, {f.p_plus}])")


def signed_extreme(f: ExponentField) -> float:
    """inf for nonnegative exponents, sup for nonpositive ones."""
    return f.p_minus if sign_class(f) == "nonneg" else f.p_plus


@dataclass
class ProblemSpec:
    """Full description of the coupled system on a fixed mesh."""

    mesh: Mesh
    p1: ExponentField
    p2: ExponentField
    alpha: tuple            # (ExponentField, ExponentField), one per component
    beta: tuple
    gamma: tuple
    gamma_bar: tuple
    m: tuple                # positive lower-envelope constants
    M: tuple                # upper-envelope constants
    f: tuple                # (Expr, Expr) nonlinearities
    N_dim: int = 2

    def __post_init__(self):
        for i in (0, 1):
            if not self.m[i] > 0:
                raise ValueError("lower envelope constants m must be positive")
            if self.m[i] > self.M[i]:
                raise ValueError("need m <= M")
        fields = [self.p1, self.p2, *self.alpha, *self.beta,
                  *self.gamma, *self.gamma_bar]
        grid.check_same_mesh(self.mesh, *fields)
        if self.N_dim < 1:
            raise ValueError("N_dim must be a positive integer")
        for i, fe in enumerate(self.f):
            if not isinstance(fe, Expr):
                raise TypeError(f"f[{i}] must be a parsed expression")

    @property
    def p(self):
        return (self.p1, self.p2)

    def p_prime_values(self, i: int) -> np.ndarray:
        pv = self.p[i].values
        return pv / (pv - 1.0)

    def evaluate_f(self, i: int, x, s1, s2, xi1, xi2) -> np.ndarray:
        env = {"x": x[..., 0] if np.ndim(x) > 1 else x,
               "s1": s1, "s2": s2, "xi1": xi1, "xi2": xi2}
        if np.ndim(x) > 1 and np.shape(x)[-1] > 1:
            env["y"] = x[..., 1]
        val = self.f[i].evaluate(env)
        return np.broadcast_to(val, np.shape(s1)).astype(float)

    def envelope_check(self, rng: np.random.Generator, n_samples: int = 200,
                       rtol: float = 1e-9):
        """Sample the two-sided growth envelope at random points and
        states; raises EnvelopeError on any escape."""
        nodes = rng.integers(0, self.mesh.n_nodes, size=n_samples)
        x = self.mesh.nodes[nodes]
        s1 = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), size=n_samples))
        s2 = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), size=n_samples))
        xi1 = np.abs(rng.normal(0.0, 3.0, size=n_samples))
        xi2 = np.abs(rng.normal(0.0, 3.0, size=n_samples))
        for i in (0, 1):
            a = self.alpha[i].values[nodes]
            bqq = self.beta[i].values[nodes]
            g = self.gamma[i].values[nodes]
            gb = self.gamma_bar[i].values[nodes]
            prod = s1 ** a * s2 ** bqq
            fv = self.evaluate_f(i, x, s1, s2, xi1, xi2)
            if not np.all(np.isfinite(fv)):
                raise EnvelopeError(f"f[{i}] is non-finite at a sampled state")
            lower = self.m[i] * prod
            upper = self.M[i] * (prod + xi1 ** g + xi2 ** gb)
            slack = rtol * (1.0 + np.abs(upper))
            bad = (fv < lower - slack) | (fv > upper + slack)
            if np.any(bad):
                j = int(np.flatnonzero(bad)[0])
                raise EnvelopeError(
                    f"f[{i}] escapes envelope at sample {j}: "
                    f"{lower[j]:.6g} <= {fv[j]:.6g} <= {upper[j]:.6g} fails")


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    passed: bool


@dataclass
class HypothesisReport:
    regime: Regime
    checks: list
    deviations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed_checks(self):
        return [c for c in self.checks if not c.passed]

    def as_dict(self):
        return {
            "regime": self.regime.value,
            "passed": self.passed,
            "checks": [{"name": c.name, "lhs": c.lhs, "rhs": c.rhs,
                        "passed": c.passed} for c in self.checks],
            "deviations": list(self.deviations),
        }


def validate_hypotheses(spec: ProblemSpec) -> HypothesisReport:
    """Classify signed extremes, check every admissibility inequality,
    and assign the regime.  Pure: identical spec gives an identical
    report.  Mixed-sign singular exponents raise."""
    checks = []
    deviations = []
    sums = []
    for i in (0, 1):
        p = spec.p[i]
        pm = p.p_minus
        checks.append(Check(f"p{i+1}_lower", pm, 1.0, pm > 1.0))
        if p.p_plus >= spec.N_dim:
            deviations.append(
                f"p{i+1}_plus={p.p_plus} >= N={spec.N_dim}; recorded, not enforced")
        a_mp = signed_extreme(spec.alpha[i])
        b_mp = signed_extreme(spec.beta[i])
        sums.append(a_mp + b_mp)
        checks.append(Check(
            f"singular_budget_{i+1}", abs(a_mp) + abs(b_mp), pm - 1.0,
            abs(a_mp) + abs(b_mp) < pm - 1.0))
        gmin = min(spec.gamma[i].p_minus, spec.gamma_bar[i].p_minus)
        gmax = max(spec.gamma[i].p_plus, spec.gamma_bar[i].p_plus)
        checks.append(Check(f"gradient_power_nonneg_{i+1}", gmin, 0.0, gmin >= 0.0))
        checks.append(Check(f"gradient_power_growth_{i+1}", gmax, pm - 1.0,
                            gmax < pm - 1.0))

    regime = Regime.POSITIVE_SUM if min(sums) > 0.0 else Regime.NEGATIVE_SUM

    for i in (0, 1):
        if sums[i] >= 0.0:
            continue
        # strongly singular component: smallness caps
        a_mp = signed_extreme(spec.alpha[i])
        b_mp = signed_extreme(spec.beta[i])
        ppl = spec.p_prime_values(i)
        cap = 1.0 / (spec.N_dim * float(ppl.max()))
        checks.append(Check(f"singular_smallness_{i+1}",
                            abs(a_mp) + abs(b_mp), cap,
                            abs(a_mp) + abs(b_mp) <= cap))
        g_margin = float((spec.p1.values / (spec.N_dim * ppl)
                          - spec.gamma[i].values).min())
        gb_margin = float((spec.p2.values / (spec.N_dim * ppl)
                           - spec.gamma_bar[i].values).min())
        checks.append(Check(f"gradient_cap_{i+1}", -g_margin, 0.0, g_margin >= 0.0))
        checks.append(Check(f"gradient_cap_bar_{i+1}", -gb_margin, 0.0,
                            gb_margin >= 0.0))
        e_min = float(((spec.alpha[i].values + spec.beta[i].values) * ppl).min())
        checks.append(Check(f"distance_power_integrability_{i+1}",
                            e_min, -1.0, e_min > -1.0))

    return HypothesisReport(regime=regime, checks=checks, deviations=deviations)


@dataclass
class BarrierPair:
    """Ordered barriers built from torsion fields: under = xi_delta / C,
    over = C * xi, with the measured regularity scale R and the measured
    distance-comparability constants."""

    under: tuple            # (GridFunction, GridFunction)
    over: tuple
    C: float
    delta: float
    R: float
    c0_measured: float
    c1_measured: float
    xi: tuple = None
    xi_delta: tuple = None


def _c1_bound(mesh, u: GridFunction) -> float:
    """Discrete C1-style size: max nodal value plus max cell gradient."""
    gmax = grid.gradient(mesh, u).inf_norm
    return float(np.abs(u.values).max()) + gmax


def build_barriers(mesh: Mesh, spec: ProblemSpec, C: float, delta: float,
                   opts: SolverOptions | None = None,
                   torsions: tuple | None = None) -> BarrierPair:
    """Construct the barrier pair at scale C > 1 and strip width delta.

    ``torsions`` may carry precomputed (xi, xi_delta) pairs so the
    calibration search does not re-solve per C.  Raises OrderingError if
    under > over anywhere (C too small)."""
    if not C > 1.0:
        raise ValueError("barrier scale C must exceed 1")
    if torsions is None:
        xi = tuple(plaplace.torsion(mesh, spec.p[i], opts) for i in (0, 1))
        xid = tuple(plaplace.torsion_delta(mesh, spec.p[i], delta, opts, xi=xi[i])
                    for i in (0, 1))
    else:
        xi, xid = torsions
    under = tuple(GridFunction(mesh, xid[i].values / C, zero_trace=True)
                  for i in (0, 1))
    over = tuple(GridFunction(mesh, C * xi[i].values, zero_trace=True)
                 for i in (0, 1))
    for i in (0, 1):
        gap = over[i].values - under[i].values
        if np.any(gap < 0.0):
            raise OrderingError(
                f"under exceeds over for component {i+1}; escalate C")
    R = max(1.0, *(_c1_bound(mesh, xi[i]) for i in (0, 1)),
            *(_c1_bound(mesh, xid[i]) for i in (0, 1)))
    ii = mesh.interior_nodes
    d = mesh.distance[ii]
    c0 = min(float((under[i].values[ii] / d).min()) for i in (0, 1))
    c1 = max(float((over[i].values[ii] / d).max()) for i in (0, 1))
    return BarrierPair(under=under, over=over, C=float(C), delta=float(delta),
                       R=R, c0_measured=c0, c1_measured=c1, xi=xi, xi_delta=xid)


@dataclass
class InequalityReport:
    ok: bool
    worst_margin: float     # most negative tested margin (>= 0 is clean)
    margins: dict           # name -> min margin over interior tests


def _power_quad(mesh, base: GridFunction, expo: ExponentField) -> np.ndarray:
    """base(x)^expo(x) at quadrature points; base must be positive there."""
    vals = grid.at_quad(mesh, base.values)
    ev = expo.at_quad()
    with np.errstate(over="ignore", divide="ignore"):
        out = np.power(vals, ev)
    if not np.all(np.isfinite(out)):
        raise OrderingError("barrier power is non-finite at a quadrature point")
    return out


def _weak_margin(mesh, lhs_vec, rhs_vec):
    """min over interior hats of rhs - lhs with mixed tolerance applied
    by the caller; returns the raw margin array."""
    ii = mesh.interior_nodes
    return rhs_vec[ii] - lhs_vec[ii]


def _case_lower(spec, pair, i):
    """Product envelope minorized over the barrier box, per the sign
    case of (alpha_i, beta_i)."""
    mesh = spec.mesh
    sa, sb = sign_class(spec.alpha[i]), sign_class(spec.beta[i])
    u1, u2 = pair.under
    o1, o2 = pair.over
    if sa == "nonneg" and sb == "nonneg":
        return (_power_quad(mesh, u1, spec.alpha[i])
                * _power_quad(mesh, u2, spec.beta[i]))
    if sa == "negative" and sb == "nonneg":
        return (_power_quad(mesh, o1, spec.alpha[i])
                * _power_quad(mesh, u2, spec.beta[i]))
    if sa == "nonneg" and sb == "negative":
        return (_power_quad(mesh, u1, spec.alpha[i])
                * _power_quad(mesh, o2, spec.beta[i]))
    # both negative cannot occur in the positive-sum regime
    return (_power_quad(mesh, o1, spec.alpha[i])
            * _power_quad(mesh, o2, spec.beta[i]))


def _case_upper(spec, pair, i):
    """Product envelope majorized over the barrier box."""
    mesh = spec.mesh
    sa, sb = sign_class(spec.alpha[i]), sign_class(spec.beta[i])
    u1, u2 = pair.under
    o1, o2 = pair.over
    if sa == "nonneg" and sb == "nonneg":
        return (_power_quad(mesh, o1, spec.alpha[i])
                * _power_quad(mesh, o2, spec.beta[i]))
    if sa == "negative" and sb == "nonneg":
        return (_power_quad(mesh, u1, spec.alpha[i])
                * _power_quad(mesh, o2, spec.beta[i]))
    if sa == "nonneg" and sb == "negative":
        return (_power_quad(mesh, o1, spec.alpha[i])
                * _power_quad(mesh, u2, spec.beta[i]))
    return (_power_quad(mesh, u1, spec.alpha[i])
            * _power_quad(mesh, u2, spec.beta[i]))


def check_barriers_positive_regime(mesh: Mesh, spec: ProblemSpec,
                                   pair: BarrierPair) -> InequalityReport:
    """Weak-form comparison inequalities for the positive-sum regime.

    Subsolution side: the operator applied to ``under`` tested against
    every nonnegative interior hat must not exceed m_i times the
    case-selected barrier product.  Supersolution side: the operator on
    ``over`` must dominate 2 M_i (R C)^gamma_max plus M_i times the
    majorized product.  Pointwise second derivatives do not exist for P1
    fields, so both are asserted in the tested sense.
    """
    margins = {}
    worst = np.inf
    for i in (0, 1):
        lhs = plaplace.apply_operator(mesh, spec.p[i], pair.under[i].values)
        rhs = grid.load_vector(mesh, spec.m[i] * _case_lower(spec, pair, i))
        raw = _weak_margin(mesh, lhs, rhs)
        tol = _INEQ_ATOL + _INEQ_RTOL * np.maximum(np.abs(lhs[mesh.interior_nodes]),
                                                   np.abs(rhs[mesh.interior_nodes]))
        m_sub = float((raw + tol).min())
        margins[f"subsolution_{i+1}"] = m_sub

        gmax = max(spec.gamma[i].p_plus, spec.gamma_bar[i].p_plus)
        bulk = 2.0 * spec.M[i] * (pair.R * pair.C) ** gmax
        rhs2 = grid.load_vector(mesh, bulk + spec.M[i] * _case_upper(spec, pair, i))
        lhs2 = plaplace.apply_operator(mesh, spec.p[i], pair.over[i].values)
        raw2 = _weak_margin(mesh, rhs2, lhs2)  # want lhs2 >= rhs2
        tol2 = _INEQ_ATOL + _INEQ_RTOL * np.maximum(np.abs(lhs2[mesh.interior_nodes]),
                                                    np.abs(rhs2[mesh.interior_nodes]))
        m_sup = float((raw2 + tol2).min())
        margins[f"supersolution_{i+1}"] = m_sup
        worst = min(worst, m_sub, m_sup)
    return InequalityReport(ok=worst >= 0.0, worst_margin=worst, margins=margins)


def check_barriers_singular_regime(mesh: Mesh, spec: ProblemSpec,
                                   pair: BarrierPair, L: float) -> InequalityReport:
    """Subsolution inequalities for the strongly singular regime, where
    iterates are capped above by the constant L > 1: the lower envelope
    is minorized with L replacing any component raised to a negative
    exponent."""
    if not L > 1.0:
        raise ValueError("sup-norm cap L must exceed 1")
    margins = {}
    worst = np.inf
    for i in (0, 1):
        sa, sb = sign_class(spec.alpha[i]), sign_class(spec.beta[i])
        u1, u2 = pair.under
        if sa == "negative" and sb == "nonneg":
            rhs_q = (L ** spec.alpha[i].p_minus) * _power_quad(mesh, u2, spec.beta[i])
        elif sa == "nonneg" and sb == "negative":
            rhs_q = (L ** spec.beta[i].p_minus) * _power_quad(mesh, u1, spec.alpha[i])
        elif sa == "negative" and sb == "negative":
            rhs_q = np.full_like(mesh.qweights,
                                 L ** (spec.alpha[i].p_minus + spec.beta[i].p_minus))
        else:
            rhs_q = (_power_quad(mesh, u1, spec.alpha[i])
                     * _power_quad(mesh, u2, spec.beta[i]))
        lhs = plaplace.apply_operator(mesh, spec.p[i], pair.under[i].values)
        rhs = grid.load_vector(mesh, spec.m[i] * rhs_q)
        raw = _weak_margin(mesh, lhs, rhs)
        tol = _INEQ_ATOL + _INEQ_RTOL * np.maximum(np.abs(lhs[mesh.interior_nodes]),
                                                   np.abs(rhs[mesh.interior_nodes]))
        m_sub = float((raw + tol).min())
        margins[f"subsolution_{i+1}"] = m_sub
        worst = min(worst, m_sub)
    return InequalityReport(ok=worst >= 0.0, worst_margin=worst, margins=margins)


@dataclass
class CalibrationResult:
    C: float
    delta: float
    pair: BarrierPair
    regime: Regime
    trajectory: list        # (C, worst_margin) along the doubling search
    L: float | None = None  # only for the singular regime


def resolve_delta(mesh: Mesh, spec: ProblemSpec,
                  opts: SolverOptions | None = None,
                  delta0: float | None = None):
    """Strip width search: start at 0.1 * max distance and halve until
    the strip-loaded torsion fields stay positive, flooring at two mesh
    widths.  Returns (delta, xi, xi_delta) with the solved fields."""
    delta = delta0 if delta0 is not None else 0.1 * mesh.max_distance
    floor = 2.0 * mesh.h
    xi = tuple(plaplace.torsion(mesh, spec.p[i], opts) for i in (0, 1))
    while True:
        try:
            xid = tuple(plaplace.torsion_delta(mesh, spec.p[i], delta, opts,
                                               xi=xi[i]) for i in (0, 1))
            return delta, xi, xid
        except DeltaTooLargeError:
            if delta <= floor:
                raise CalibrationError(
                    f"strip field not positive even at delta={delta}; "
                    "resolution too coarse for this exponent pair")
            delta = max(delta / 2.0, floor)


def calibrate_barriers(mesh: Mesh, spec: ProblemSpec,
                       opts: SolverOptions | None = None,
                       L: float | None = None,
                       c_max_exp: int = 20,
                       delta0: float | None = None) -> CalibrationResult:
    """Doubling search C in {2, 4, ..., 2^c_max_exp} with delta halved
    from 0.1 * max distance on positivity failure (floor two mesh
    widths).  Returns the first success; exhaustion raises
    CalibrationError, which cannot distinguish 'C must be larger' from
    'discretization too coarse' and says so.
    """
    report = validate_hypotheses(spec)
    if not report.passed:
        bad = ", ".join(f"{c.name} (lhs={c.lhs:.6g}, rhs={c.rhs:.6g})"
                        for c in report.failed_checks())
        raise CalibrationError(f"hypotheses rejected before search: {bad}")
    regime = report.regime
    if regime is Regime.NEGATIVE_SUM and L is None:
        L = 2.0  # provisional cap; refreshed by the cap search afterwards

    delta, xi, xid = resolve_delta(mesh, spec, opts, delta0)
    trajectory = []
    for k in range(1, c_max_exp + 1):
        C = 2.0 ** k
        try:
            pair = build_barriers(mesh, spec, C, delta, opts, torsions=(xi, xid))
        except OrderingError:
            trajectory.append((C, -np.inf))
            continue
        if regime is Regime.POSITIVE_SUM:
            rep = check_barriers_positive_regime(mesh, spec, pair)
        else:
            rep = check_barriers_singular_regime(mesh, spec, pair, L)
        trajectory.append((C, rep.worst_margin))
        if rep.ok:
            return CalibrationResult(C=C, delta=delta, pair=pair, regime=regime,
                                     trajectory=trajectory, L=L)
    raise CalibrationError(
        f"no C <= 2^{c_max_exp} satisfied the comparison inequalities; "
        "either C must be larger or the discretization is too coarse "
        "(indistinguishable at this resolution)")


def frozen_rhs_quad(mesh: Mesh, spec: ProblemSpec, z1: GridFunction,
                    z2: GridFunction, pair: BarrierPair):
    """Quadrature-point data f_i(x, z1^, z2^, grad z1, grad z2) with the
    singular floor clamp z^ = max(z, under).  Interior quadrature points
    keep negative powers finite because the floor is positive there."""
    zc1 = np.maximum(z1.values, pair.under[0].values)
    zc2 = np.maximum(z2.values, pair.under[1].values)
    s1 = grid.at_quad(mesh, zc1)
    s2 = grid.at_quad(mesh, zc2)
    xi1 = grid.cell_gradients(mesh, z1.values)
    xi2 = grid.cell_gradients(mesh, z2.values)
    m1 = np.sqrt((xi1 ** 2).sum(axis=1))[mesh.qcells]
    m2 = np.sqrt((xi2 ** 2).sum(axis=1))[mesh.qcells]
    out = []
    for i in (0, 1):
        hv = spec.evaluate_f(i, mesh.qpoints, s1, s2, m1, m2)
        if not np.all(np.isfinite(hv)):
            raise EnvelopeError(
                f"frozen right-hand side f[{i}] is non-finite at a quadrature point")
        out.append(grid.QuadField(mesh, hv))
    return tuple(out)
