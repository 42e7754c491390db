"""Weight functions and the constants of the weighted estimates.

Two families are supported:

* the linear weight ``phi(x, t) = -beta * t + psi(x)`` together with
  ``B = -beta + H . grad psi``, ``M0``, ``s0``, the levels ``r0 < r1`` and the
  cut-off width ``delta1``;
* the two-parameter weight ``phi_d(x, t) = exp(lam * (-beta * t + d(x)))``
  with ``J_d = lam * phi_d * (-beta + |grad d|^2)`` and the constants
  ``m0, r0, mu0, delta1``.

Suprema and infima over the closed domain are taken over grid vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .fields import SPACE, ExprField, Field, c2_norm, parse_field
from .geometry import Grid


class WeightError(ValueError):
    pass


class ThresholdError(WeightError):
    """Observation time too short for the weight; ``t_min`` is the threshold."""

    def __init__(self, message, t_min):
        super().__init__(message)
        self.t_min = t_min


def _vec(field: Field, pts, dim, t=0.0) -> np.ndarray:
    return np.asarray(field.at(pts, t)).reshape(len(pts), dim)


def h_dot_grad(grid: Grid, H: Field, psi: ExprField, points=None) -> np.ndarray:
    pts = grid.vertices if points is None else points
    return np.sum(_vec(H, pts, grid.dim) * _vec(psi.gradient(), pts, grid.dim), axis=1)


def compute_mu(grid: Grid, H: Field, psi: ExprField) -> float:
    """Minimum of ``H . grad psi`` over the grid vertices (may be negative)."""
    return float(np.min(h_dot_grad(grid, H, psi)))


def psi_range(grid: Grid, psi: Field) -> tuple[float, float]:
    v = psi.at(grid.vertices)
    return float(np.max(v)), float(np.min(v))


def threshold_time(grid: Grid, H: Field, psi: ExprField) -> float:
    mu = compute_mu(grid, H, psi)
    if mu <= 0:
        return math.inf
    R, r = psi_range(grid, psi)
    return (R - r) / mu


# --------------------------------------------------------------------------
# construction of psi


@dataclass
class PsiResult:
    case: int
    ok: bool
    psi: ExprField | None
    mu: float | None
    checks: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "ok": self.ok,
            "psi": None if self.psi is None else self.psi.text,
            "mu": self.mu,
            "checks": self.checks,
            "message": self.message,
        }


def _jacobian_frobenius(grid: Grid, H: ExprField) -> np.ndarray:
    rows = [_vec(r, grid.vertices, grid.dim) for r in H.jacobian()]
    return np.sqrt(sum(np.sum(r**2, axis=1) for r in rows))


def construct_psi(case: int, grid: Grid, H: ExprField, *, d=None, a=None, delta0=None, i0=None, b=None, tol=1e-8) -> PsiResult:
    """Build ``psi`` with ``min H . grad psi > 0`` following one of four recipes.

    Parameters
    ----------
    case : 1, 2, 3 or 4
        1: ``H = grad d`` with ``|grad d| > 0``, psi = d.
        2: ``a . H`` has one strict sign, psi = +-a . x.
        3: ``0`` inside the domain, ``|H| >= delta0`` and
        ``max|x| < min|H|^2 / (sup|H| sup|grad H|)``, psi = x . H(x).
        4: ``H[i0] > 0`` and the domain lies in ``{x[i0] > b}``,
        psi = (x[i0] - b)^2.

    Returns a ``PsiResult``; when the case hypothesis fails on the grid,
    ``ok`` is False, ``psi`` is None and ``checks`` holds both sides of the
    violated inequality.
    """
    dim = grid.dim
    V = grid.vertices
    checks: dict = {}

    def fail(msg):
        return PsiResult(case, False, None, None, checks, msg)

    if case == 1:
        if d is None:
            raise WeightError("case 1 needs d")
        d = parse_field(d, dim)
        gd = _vec(d.gradient(), V, dim)
        Hv = _vec(H, V, dim)
        checks["min_grad_d"] = float(np.min(np.linalg.norm(gd, axis=1)))
        checks["max_H_minus_grad_d"] = float(np.max(np.abs(Hv - gd)))
        if checks["max_H_minus_grad_d"] > tol * max(1.0, float(np.max(np.abs(Hv)))):
            return fail("H is not the gradient of d")
        if not checks["min_grad_d"] > 0:
            return fail("grad d vanishes on the grid")
        psi = d
    elif case == 2:
        if a is None:
            raise WeightError("case 2 needs a separating vector a")
        a = np.asarray(a, float).reshape(dim)
        if not np.any(a != 0):
            raise WeightError("separating vector must be nonzero")
        proj = _vec(H, V, dim) @ a
        checks["min_a_dot_H"] = float(np.min(proj))
        checks["max_a_dot_H"] = float(np.max(proj))
        if checks["min_a_dot_H"] > 0:
            sign = 1
        elif checks["max_a_dot_H"] < 0:
            sign = -1
        else:
            return fail("the hyperplane a . x = 0 does not separate H from the origin")
        checks["sign"] = sign
        psi = ExprField([sum(sign * sp.nsimplify(float(c)) * s for c, s in zip(a, SPACE))], dim, vector=False)
    elif case == 3:
        if delta0 is None:
            raise WeightError("case 3 needs delta0")
        inside = all(lo < 0 < hi for lo, hi in zip(grid.lo, grid.hi))
        Hv = _vec(H, V, dim)
        Hn = np.linalg.norm(Hv, axis=1)
        checks["origin_inside"] = inside
        checks["min_abs_H"] = float(np.min(Hn))
        checks["delta0"] = float(delta0)
        xmax = float(np.max(np.linalg.norm(V, axis=1)))
        gH = float(np.max(_jacobian_frobenius(grid, H)))
        bound = math.inf if gH == 0 else float(np.min(Hn) ** 2) / (float(np.max(Hn)) * gH)
        checks["max_abs_x"] = xmax
        checks["smallness_bound"] = bound
        if not inside:
            return fail("case 3 needs the origin inside the domain")
        if checks["min_abs_H"] < delta0:
            return fail(f"|H| >= delta0 fails: min|H| = {checks['min_abs_H']:.6g} < {delta0}")
        if not (0 < xmax < bound):
            return fail(f"smallness bound fails: max|x| = {xmax:.6g} >= {bound:.6g}")
        psi = ExprField([sum(s * e for s, e in zip(SPACE, H.exprs))], dim, vector=False)
    elif case == 4:
        if i0 is None or b is None:
            raise WeightError("case 4 needs i0 and b")
        i0 = int(i0)
        if not 0 <= i0 < dim:
            raise WeightError(f"i0 must lie in 0..{dim - 1}")
        hi0 = _vec(H, V, dim)[:, i0]
        checks["min_H_i0"] = float(np.min(hi0))
        checks["min_x_i0"] = float(grid.lo[i0])
        checks["b"] = float(b)
        if not checks["min_H_i0"] > 0:
            return fail(f"component {i0} of H is not positive everywhere")
        if not grid.lo[i0] > b:
            return fail(f"domain not contained in x[{i0}] > {b}")
        psi = ExprField([(SPACE[i0] - sp.nsimplify(float(b))) ** 2], dim, vector=False)
    else:
        raise WeightError(f"unknown case {case}")

    mu = compute_mu(grid, H, psi)
    checks["mu"] = mu
    if not mu > 0:
        return PsiResult(case, False, psi, mu, checks, f"mu = {mu:.6g} is not positive")
    return PsiResult(case, True, psi, mu, checks, "ok")


# --------------------------------------------------------------------------
# linear weight


def choose_beta(mu: float, R_max: float, r_min: float, T: float) -> float:
    """Midpoint of the open interval ``((R_max - r_min) / T, mu)``."""
    if not mu > 0:
        raise WeightError(f"mu = {mu} must be positive")
    t_min = (R_max - r_min) / mu
    lo = (R_max - r_min) / T
    if not T > t_min or not lo < mu:
        raise ThresholdError(f"T = {T} must exceed (max psi - min psi)/mu = {t_min:.6g}", t_min)
    beta = 0.5 * (lo + mu)
    assert lo < beta < mu
    return beta


@dataclass
class CarlemanConstants:
    B: ExprField
    B_min: float
    M0: float
    M0_printed: float
    s0: float
    s0_formula: float
    div_H: float
    div_HHpsi: float
    V_sup: float


def carleman_constants(grid: Grid, H: ExprField, V: Field, psi: ExprField, beta: float, mu: float | None = None) -> CarlemanConstants:
    """``B``, ``M0`` and ``s0`` for the linear weight.

    ``M0`` bounds ``|div(B H)| <= beta |div H| + |div(H (H . grad psi))|``; the
    product form of the same two norms is reported as ``M0_printed``. ``s0``
    is floored at 1 so that an s-sweep never degenerates.
    """
    mu = compute_mu(grid, H, psi) if mu is None else mu
    if not mu > beta:
        raise WeightError(f"need mu > beta, got mu={mu}, beta={beta}")
    hg = H.dot(psi.gradient())
    B = ExprField([hg.exprs[0] - beta], grid.dim, vector=False)
    pts = grid.vertices
    div_H = float(np.max(np.abs(H.divergence().at(pts))))
    HH = ExprField([e * hg.exprs[0] for e in H.exprs], grid.dim, vector=True)
    div_HH = float(np.max(np.abs(HH.divergence().at(pts))))
    V_sup = float(np.max(np.abs(V.at(pts)))) if V is not None else 0.0
    M0 = beta * div_H + div_HH
    gap = mu - beta
    s0f = max(4 * M0 / gap**2, math.sqrt(8) * V_sup / gap)
    return CarlemanConstants(
        B=B,
        B_min=float(np.min(B.at(pts))),
        M0=M0,
        M0_printed=beta * div_H * div_HH,
        s0=max(s0f, 1.0),
        s0_formula=s0f,
        div_H=div_H,
        div_HHpsi=div_HH,
        V_sup=V_sup,
    )


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z**3 * (10 - 15 * z + 6 * z**2)


def _smoothstep_d(z):
    inside = (z > 0) & (z < 1)
    return np.where(inside, 30 * z**2 * (1 - z) ** 2, 0.0)


def cutoff_chi(t, T: float, delta1: float):
    """Cut-off in time: 1 on [0, T - 2 delta1], 0 on [T - delta1, T].

    Returns ``(chi, dchi)`` at the times ``t``; the transition is the quintic
    smoothstep, so ``chi`` is C^2.
    """
    if not 0 < 2 * delta1 < T:
        raise WeightError(f"need 0 < 2*delta1 < T, got delta1={delta1}, T={T}")
    z = (np.asarray(t, float) - (T - 2 * delta1)) / delta1
    return 1.0 - _smoothstep(z), -_smoothstep_d(z) / delta1


@dataclass
class LinearWeight:
    psi: ExprField
    beta: float
    mu: float
    T: float
    R_max: float
    r_min: float
    constants: CarlemanConstants
    r0: float
    r1: float
    delta1: float

    @property
    def B(self) -> ExprField:
        return self.constants.B

    @property
    def M0(self) -> float:
        return self.constants.M0

    @property
    def s0(self) -> float:
        return self.constants.s0

    @property
    def r_star(self) -> float:
        return self.r1 - self.r0

    @property
    def t_min(self) -> float:
        return (self.R_max - self.r_min) / self.mu

    def phi(self, points, t) -> np.ndarray:
        """Weight at points; ``t`` scalar gives (m,), array gives (nt, m)."""
        p = self.psi.at(points)
        tt = np.asarray(t, float)
        if tt.ndim == 0:
            return p - self.beta * float(tt)
        return p[None, :] - self.beta * tt[:, None]

    def levels_hold(self, grid: Grid, delta1: float | None = None, n_t: int = 17) -> bool:
        return _levels_hold(grid, self.psi, self.beta, self.T, self.r0, self.r1, self.delta1 if delta1 is None else delta1, n_t)

    def to_dict(self) -> dict:
        c = self.constants
        return {
            "psi": self.psi.text,
            "beta": self.beta,
            "mu": self.mu,
            "T": self.T,
            "T_min": self.t_min,
            "R_max": self.R_max,
            "r_min": self.r_min,
            "B_min": c.B_min,
            "M0": c.M0,
            "M0_printed_product": c.M0_printed,
            "s0": c.s0,
            "s0_formula": c.s0_formula,
            "r0": self.r0,
            "r1": self.r1,
            "r_star": self.r_star,
            "delta1": self.delta1,
        }


def _levels_hold(grid, psi, beta, T, r0, r1, delta1, n_t=17) -> bool:
    if not 0 < 2 * delta1 < T:
        return False
    pv = psi.at(grid.vertices)
    early = np.linspace(0.0, delta1, n_t)
    late = np.linspace(T - 2 * delta1, T, n_t)
    ok_early = np.min(pv) - beta * np.max(early) > r1
    ok_late = np.max(pv) - beta * np.min(late) < r0
    return bool(ok_early and ok_late)


def bisect_delta1(grid: Grid, psi: ExprField, beta: float, T: float, r0: float, r1: float, iters: int = 60) -> float:
    """Largest width for which both level conditions hold, by bisection."""
    lo, hi = 0.0, 0.5 * T
    if not _levels_hold(grid, psi, beta, T, r0, r1, 1e-12 * T):
        raise WeightError("level conditions fail even for a vanishing width")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _levels_hold(grid, psi, beta, T, r0, r1, mid):
            lo = mid
        else:
            hi = mid
    return lo


def linear_weight(grid: Grid, H: ExprField, V: Field | None, psi: ExprField, T: float | None = None, beta: float | None = None) -> LinearWeight:
    """Assemble and validate the linear weight for the observation time ``T``."""
    T = grid.T if T is None else T
    mu = compute_mu(grid, H, psi)
    R_max, r_min = psi_range(grid, psi)
    if not mu > 0:
        raise WeightError(f"mu = {mu:.6g}: H . grad psi is not positive on the grid")
    if beta is None:
        beta = choose_beta(mu, R_max, r_min, T)
    elif not (R_max - r_min) / T < beta < mu:
        raise WeightError(f"beta = {beta} outside ({(R_max - r_min) / T:.6g}, {mu:.6g})")
    consts = carleman_constants(grid, H, V, psi, beta, mu)
    a, b = R_max - beta * T, r_min
    r0 = a + (b - a) / 3
    r1 = a + 2 * (b - a) / 3
    delta1 = bisect_delta1(grid, psi, beta, T, r0, r1)
    return LinearWeight(psi, beta, mu, T, R_max, r_min, consts, r0, r1, delta1)


# --------------------------------------------------------------------------
# two-parameter weight and the admissible set


@dataclass
class ExpWeight:
    d: ExprField
    beta: float
    lam: float
    delta0: float
    M: float
    T: float
    m0: float
    mu0: float
    r0: float
    r0_printed: float
    delta1: float
    n_candidates: int

    def phi(self, points, t) -> np.ndarray:
        dv = self.d.at(points)
        tt = np.asarray(t, float)
        if tt.ndim == 0:
            return np.exp(self.lam * (dv - self.beta * float(tt)))
        return np.exp(self.lam * (dv[None, :] - self.beta * tt[:, None]))

    def log_phi(self, points, t) -> np.ndarray:
        dv = self.d.at(points)
        tt = np.asarray(t, float)
        if tt.ndim == 0:
            return self.lam * (dv - self.beta * float(tt))
        return self.lam * (dv[None, :] - self.beta * tt[:, None])

    def J(self, points, t) -> np.ndarray:
        g = np.asarray(self.d.gradient().at(points)).reshape(len(points), -1)
        return self.lam * self.phi(points, t) * (np.sum(g**2, axis=1) - self.beta)

    def J_lower(self, points, t) -> np.ndarray:
        return self.lam * self.phi(points, t) * (self.delta0**2 - self.beta)

    def checks(self, grid: Grid, n_t: int = 33) -> dict:
        pts = grid.vertices
        times = grid.times
        J = self.J(pts, times)
        Jl = self.J_lower(pts, times)
        tail = np.linspace(max(self.T - 2 * self.delta1, 0.0), self.T, n_t)
        max_tail = float(np.max(self.phi(pts, tail)))
        return {
            "J_bound_margin": float(np.min(J - Jl)),
            "J_bound_holds": bool(np.all(J >= Jl * (1 - 1e-12))),
            "delta1_condition": 2 * math.exp(self.lam * self.M) * self.lam * self.beta * self.delta1,
            "delta1_condition_holds": 2 * math.exp(self.lam * self.M) * self.lam * self.beta * self.delta1 < self.r0,
            "tail_max_phi": max_tail,
            "mu0_minus_r0": self.mu0 - self.r0,
            "tail_condition_holds": max_tail < self.mu0 - self.r0,
        }

    def to_dict(self) -> dict:
        return {
            "d": self.d.text,
            "beta": self.beta,
            "lambda": self.lam,
            "delta0": self.delta0,
            "M": self.M,
            "T": self.T,
            "m0": self.m0,
            "mu0": self.mu0,
            "r0": self.r0,
            "r0_printed_exponent": self.r0_printed,
            "delta1": self.delta1,
            "mu0_candidates": self.n_candidates,
            "note": "r0 uses exp(-lam*beta*T - lam*M); the variant with exp(-lam*beta - lam*M) is reported alongside",
        }


def exp_weight_constants(grid: Grid, d: ExprField, beta: float, lam: float, delta0: float, M: float, T: float | None = None, candidates: Sequence[ExprField] = ()) -> ExpWeight:
    """Constants of the two-parameter weight.

    ``m0`` and ``mu0`` are suprema over the admissible set; they are
    approximated by the maximum over ``d`` and the supplied candidates.
    """
    T = grid.T if T is None else T
    if not 0 < beta < delta0**2:
        raise WeightError(f"need 0 < beta < delta0^2 = {delta0**2:.6g}, got beta={beta}")
    if not lam > 0:
        raise WeightError("lambda must be positive")
    pool = [d, *[c for c in candidates if c is not d]]
    vals = [c.at(grid.vertices) for c in pool]
    m0 = max(float(np.max(v) - np.min(v)) for v in vals)
    if not T > m0 / beta:
        raise ThresholdError(f"T = {T} must exceed m0/beta = {m0 / beta:.6g}", m0 / beta)
    mu0 = max(float(np.exp(lam * np.min(v))) for v in vals)
    r0 = 0.5 * lam * math.exp(-lam * beta * T - lam * M) * (beta * T - m0)
    r0_printed = 0.5 * lam * math.exp(-lam * beta - lam * M) * (beta * T - m0)
    delta1 = r0 / (4 * math.exp(lam * M) * lam * beta)
    return ExpWeight(d, beta, lam, delta0, M, T, m0, mu0, r0, r0_printed, delta1, len(pool))


@dataclass
class AdmissibleSetSpec:
    """``|grad d| >= delta0``, ``||d||_C2 <= M``, ``d = g1`` and ``d_nu d = g2`` on the boundary."""

    delta0: float
    M: float
    g1: ExprField
    g2: ExprField

    def gamma(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """Face indices where ``g2 > 0`` and ``g2 < 0``."""
        g2 = self.g2.on_faces(grid)
        return np.flatnonzero(g2 > 0), np.flatnonzero(g2 < 0)


@dataclass
class AdmissibilityReport:
    admissible: bool
    min_grad: float
    grad_margin: float
    c2: float
    c2_margin: float
    g1_residual: float
    g2_residual: float
    tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_admissible(grid: Grid, d: ExprField, spec: AdmissibleSetSpec, tol: float = 1e-8) -> AdmissibilityReport:
    pts = grid.vertices
    g = _vec(d.gradient(), pts, grid.dim)
    min_grad = float(np.min(np.linalg.norm(g, axis=1)))
    c2 = c2_norm(d, grid)
    f = grid.faces
    trace = d.at(f.centers)
    dnu = np.sum(_vec(d.gradient(), f.centers, grid.dim) * f.normals, axis=1)
    r1 = float(np.max(np.abs(trace - spec.g1.on_faces(grid))))
    r2 = float(np.max(np.abs(dnu - spec.g2.on_faces(grid))))
    ok = min_grad >= spec.delta0 - tol and c2 <= spec.M + tol and r1 <= tol and r2 <= tol
    return AdmissibilityReport(bool(ok), min_grad, min_grad - spec.delta0, c2, spec.M - c2, r1, r2, tol)


@dataclass
class LambdaSearch:
    lam: float
    s1: float
    C: float
    converged: bool
    history: list


def lambda_doubling(
    required_ratio: Callable[[float, float], float],
    s_of_lambda: Callable[[float], float],
    lam0: float = 1.0,
    lam_max: float = 64.0,
    n_doublings: int = 2,
    growth_tol: float = 0.05,
) -> LambdaSearch:
    """Double ``lam`` until the constant needed by an estimate stops growing in ``s``.

    ``required_ratio(lam, s)`` is the worst LHS/RHS over a probe set. For
    each ``lam`` the ratio is evaluated at ``s1, 2 s1, ...`` with
    ``s1 = s_of_lambda(lam)``; ``lam`` is accepted once no doubling of ``s``
    raises the ratio by more than ``growth_tol``.
    """
    lam = lam0
    history = []
    while lam <= lam_max * (1 + 1e-12):
        s1 = s_of_lambda(lam)
        ratios = [required_ratio(lam, s1 * 2**k) for k in range(n_doublings + 1)]
        history.append({"lambda": lam, "s1": s1, "ratios": ratios})
        if all(np.isfinite(ratios)) and all(ratios[k + 1] <= ratios[k] * (1 + growth_tol) for k in range(n_doublings)):
            return LambdaSearch(lam, s1, max(ratios), True, history)
        lam *= 2
    last = history[-1]
    return LambdaSearch(last["lambda"], last["s1"], max(last["ratios"]), False, history)
