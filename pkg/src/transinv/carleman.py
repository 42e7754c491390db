"""Numerical checks of the weighted (Carleman-type) inequalities.

Every term is a quadrature of ``density * |values|^2 * exp(2 s phi)``. The
exponentials are handled in log scale: each term is stored as
``(sign, log|value|)`` after factoring out ``max(2 s phi)``, so large ``s``
never overflows.

Three families are covered:

* the linear-weight estimate for ``P u = d_t u + H . grad u + V u``
  (variants "i", "ii" and "ii-B", the last one keeping the factor
  ``mu - beta`` on the initial-value term);
* the two-parameter-weight estimate for ``P_d u = d_t u + div(u grad d)``
  with a calibrated constant;
* the elliptic estimate for the Laplacian with weight ``phi_d(x, 0)``.

Discrete derivatives use the solver's upwind stencils (``P u``) and the
finite-difference stencils of ``fields`` (``grad f``, ``lap f``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import ExprField, Field, _grad, _second_diff_sum
from .geometry import Grid, classify_boundary
from .transport import UpwindScheme
from .weights import ExpWeight, LinearWeight, lambda_doubling


class InequalityError(ValueError):
    pass


# --------------------------------------------------------------------------
# log-scale quadrature


@dataclass(frozen=True)
class LogValue:
    """A real number ``sign * exp(log)``; ``sign == 0`` means exactly zero."""

    sign: int
    log: float

    @classmethod
    def of(cls, x: float) -> "LogValue":
        if x == 0:
            return cls(0, -math.inf)
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.log > 709:
            return self.sign * math.inf
        return self.sign * math.exp(self.log)

    def scale(self, c: float) -> "LogValue":
        if c == 0 or self.sign == 0:
            return LogValue(0, -math.inf)
        return LogValue(self.sign * (1 if c > 0 else -1), self.log + math.log(abs(c)))

    def __add__(self, other: "LogValue") -> "LogValue":
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        m = max(self.log, other.log)
        v = self.sign * math.exp(self.log - m) + other.sign * math.exp(other.log - m)
        if v == 0:
            return LogValue(0, -math.inf)
        return LogValue(1 if v > 0 else -1, m + math.log(abs(v)))


def log_ratio(a: LogValue, b: LogValue) -> float:
    """``a / b`` for positive ``b``; 0 when ``a`` is zero."""
    if a.sign == 0:
        return 0.0
    if b.sign <= 0:
        return math.inf if a.sign > 0 else -math.inf
    d = a.log - b.log
    return a.sign * (math.exp(d) if d < 709 else math.inf)


def _quad_weights(grid: Grid, region: str, faces=None):
    if region == "interior":
        return np.full(grid.size, grid.cell_volume)
    if region == "spacetime":
        return grid.time_weights[:, None] * grid.cell_volume
    fidx = np.arange(len(grid.faces)) if faces is None else np.asarray(faces, int)
    areas = grid.faces.areas[fidx]
    if region == "boundary":
        return areas
    if region == "boundary-time":
        return grid.time_weights[:, None] * areas[None, :]
    raise ValueError(f"unknown region {region!r}")


def weighted_log(grid: Grid, values, phi, s: float, region: str = "spacetime", faces=None, density=None) -> LogValue:
    """``int density |values|^2 exp(2 s phi)`` as a ``LogValue``."""
    v = np.asarray(values, float)
    p = np.broadcast_to(np.asarray(phi, float), v.shape)
    w = np.broadcast_to(_quad_weights(grid, region, faces), v.shape)
    dens = np.ones_like(v) if density is None else np.broadcast_to(np.asarray(density, float), v.shape)
    expo = 2.0 * s * p
    mask = (v != 0) & (dens != 0)
    if not mask.any():
        return LogValue(0, -math.inf)
    m = float(np.max(expo[mask]))
    if not np.isfinite(m):
        raise OverflowError(f"weight exponent is not finite ({m})")
    total = float(np.sum(w * dens * v**2 * np.exp(expo - m)))
    if not np.isfinite(total):
        raise OverflowError(f"weighted sum overflowed after factoring exp({m:.6g})")
    if total == 0:
        return LogValue(0, -math.inf)
    return LogValue(1 if total > 0 else -1, m + math.log(abs(total)))


def weighted_norm(grid: Grid, values, phi, s: float, region: str = "spacetime", faces=None, density=None, log: bool = False):
    """Quadrature of ``|values|^2 exp(2 s phi)`` over a region of the grid.

    Parameters
    ----------
    region : {"interior", "spacetime", "boundary", "boundary-time"}
        Sample layout as in ``geometry.integrate``.
    density : array, optional
        Extra pointwise factor (may be signed).
    log : bool
        Return the natural log of the (positive) result instead of the value.
        The factoring by ``max(2 s phi)`` makes this safe for any ``s``.
    """
    lv = weighted_log(grid, values, phi, s, region, faces, density)
    if log:
        if lv.sign < 0:
            raise ValueError("log of a negative weighted integral")
        return lv.log
    out = lv.value()
    if math.isinf(out):
        raise OverflowError(f"weighted integral exp({lv.log:.6g}) overflows a double")
    return out


# --------------------------------------------------------------------------
# reports


@dataclass
class InequalityReport:
    lemma: str
    s_values: list
    log_lhs: list
    log_rhs: list
    ratios: list
    informational: list
    eps: float
    constants: dict = field(default_factory=dict)
    terms: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        checked = [r for r, info in zip(self.ratios, self.informational) if not info]
        return all(r <= 1 + self.eps for r in checked)

    @property
    def nonincreasing(self) -> bool:
        """Ratio does not grow across the checked part of the sweep (reported, not asserted)."""
        checked = [r for r, info in zip(self.ratios, self.informational) if not info]
        return all(b <= a * (1 + 1e-12) for a, b in zip(checked, checked[1:]))

    @property
    def max_ratio(self) -> float:
        checked = [r for r, info in zip(self.ratios, self.informational) if not info]
        return max(checked) if checked else 0.0

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "passed": self.passed,
            "eps": self.eps,
            "max_ratio": self.max_ratio,
            "nonincreasing_in_s": self.nonincreasing,
            "rows": [
                {"s": s, "log_lhs": a, "log_rhs": b, "ratio": r, "informational": i}
                for s, a, b, r, i in zip(self.s_values, self.log_lhs, self.log_rhs, self.ratios, self.informational)
            ],
            "constants": self.constants,
        }

    def table(self) -> str:
        lines = [f"{'s':>10} {'log LHS':>14} {'log RHS':>14} {'ratio':>10}  pass"]
        for s, a, b, r, i in zip(self.s_values, self.log_lhs, self.log_rhs, self.ratios, self.informational):
            flag = "info" if i else ("yes" if r <= 1 + self.eps else "NO")
            lines.append(f"{s:10.4g} {a:14.6g} {b:14.6g} {r:10.4g}  {flag}")
        return "\n".join(lines)


def _log_or_inf(lv: LogValue) -> float:
    return lv.log if lv.sign > 0 else (-math.inf if lv.sign == 0 else float("nan"))


def _report(lemma, s_values, lhs_list, rhs_list, s_min, eps, constants, terms):
    ratios = []
    for L, R in zip(lhs_list, rhs_list):
        if L.sign == 0 and R.sign == 0:
            ratios.append(0.0)
        else:
            ratios.append(log_ratio(L, R))
    info = [s < s_min * (1 - 1e-12) for s in s_values]
    return InequalityReport(lemma, list(map(float, s_values)), [_log_or_inf(L) for L in lhs_list], [_log_or_inf(R) for R in rhs_list], ratios, info, eps, constants, terms)


# --------------------------------------------------------------------------
# sampled space-time functions


@dataclass
class SpaceTimeSamples:
    """A space-time function on cells and boundary faces at every time node."""

    cells: np.ndarray  # (nt, size)
    faces: np.ndarray  # (nt, nf)

    def scaled(self, c: float) -> "SpaceTimeSamples":
        return SpaceTimeSamples(c * self.cells, c * self.faces)


def sample_spacetime(func: Callable, grid: Grid) -> SpaceTimeSamples:
    """Sample ``func(points, t)`` (or a time-dependent Field) on cells and faces."""
    call = func.at if isinstance(func, Field) else func
    cells = np.stack([np.asarray(call(grid.cell_centers, t), float) for t in grid.times])
    faces = np.stack([np.asarray(call(grid.faces.centers, t), float) for t in grid.times])
    return SpaceTimeSamples(cells, faces)


class TrigPolynomial:
    """``u(x, t) = sum_{k, j} c_kj T_k(x) t^j (T - t)^2`` with products of
    ``cos(m pi x_i)`` / ``sin(m pi x_i)`` as the spatial modes ``T_k``."""

    def __init__(self, coeffs: np.ndarray, modes: list, T: float):
        self.coeffs = np.asarray(coeffs, float)  # (n_modes, n_time)
        self.modes = modes
        self.T = T

    @classmethod
    def random(cls, rng, dim: int, T: float, degree: int = 4, time_degree: int = 2, n_terms: int = 6) -> "TrigPolynomial":
        modes = []
        for _ in range(n_terms):
            modes.append(tuple((int(rng.integers(0, degree + 1)), bool(rng.integers(0, 2))) for _ in range(dim)))
        coeffs = rng.standard_normal((n_terms, time_degree + 1))
        return cls(coeffs, modes, T)

    def _space(self, pts):
        pts = np.atleast_2d(pts)
        out = np.empty((len(self.modes), len(pts)))
        for i, mode in enumerate(self.modes):
            v = np.ones(len(pts))
            for k, (m, use_sin) in enumerate(mode):
                arg = m * np.pi * pts[:, k]
                v = v * (np.sin(arg) if use_sin else np.cos(arg))
            out[i] = v
        return out

    def __call__(self, pts, t):
        tpow = np.array([t**j for j in range(self.coeffs.shape[1])])
        return (self.coeffs @ tpow) @ self._space(pts) * (self.T - t) ** 2


def _time_derivative(cells: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(cells, dt, axis=0, edge_order=2)


def _apply_P(u: SpaceTimeSamples, scheme: UpwindScheme, Vc: np.ndarray | None, dt: float) -> np.ndarray:
    ut = _time_derivative(u.cells, dt)
    adv = np.stack([scheme.advection(u.cells[n], u.faces[n]) for n in range(len(u.cells))])
    out = ut + adv
    if Vc is not None:
        out = out + Vc[None, :] * u.cells
    return out


def _check_terminal(u: SpaceTimeSamples, tol=1e-12):
    scale = max(float(np.max(np.abs(u.cells))), 1.0)
    if float(np.max(np.abs(u.cells[-1]))) > tol * scale:
        raise InequalityError("u(., T) must vanish")


# --------------------------------------------------------------------------
# linear weight


def verify_lemma1(
    u: SpaceTimeSamples,
    H: Field,
    V: Field | None,
    weight: LinearWeight,
    grid: Grid,
    s_values: Sequence[float],
    part: str = "ii",
    eps: float = 0.05,
    partition=None,
) -> InequalityReport:
    """Evaluate both sides of the linear-weight estimate for each ``s``.

    ``part="i"`` checks the general form (boundary term over all faces with
    ``B (H . nu)``, lower-order term ``s M0 + 2 |V|^2``); ``part="ii"`` checks
    the absorbed form with the outflow boundary only; ``part="ii-B"`` is the
    absorbed form with the factor ``mu - beta`` kept on the initial-value
    term. Rows with ``s < s0`` are informational for "ii" and "ii-B".
    """
    if part not in ("i", "ii", "ii-B"):
        raise ValueError(f"unknown part {part!r}")
    _check_terminal(u)
    if part != "i" and not weight.mu > weight.beta:
        raise InequalityError("need mu > beta")

    part_b = classify_boundary(grid, H) if partition is None else partition
    scheme = UpwindScheme(grid, H, None)
    Vc = None if V is None else np.asarray(V.on_cells(grid), float)
    Pu = _apply_P(u, scheme, Vc, grid.dt)
    phi_c = weight.phi(grid.cell_centers, grid.times)  # (nt, size)
    phi_f = weight.phi(grid.faces.centers, grid.times)  # (nt, nf)
    Bc = weight.B.at(grid.cell_centers)
    Bf = weight.B.at(grid.faces.centers)
    flux = part_b.flux
    mu, beta = weight.mu, weight.beta
    V_sup = weight.constants.V_sup
    lhs_list, rhs_list, terms = [], [], []
    for s in s_values:
        init = weighted_log(grid, u.cells[0], phi_c[0], s, "interior", density=Bc if part == "i" else None)
        bulk_B2 = weighted_log(grid, u.cells, phi_c, s, "spacetime", density=Bc[None, :] ** 2 if part == "i" else None)
        pu = weighted_log(grid, Pu, phi_c, s, "spacetime")
        if part == "i":
            lhs = init.scale(s) + bulk_B2.scale(s * s)
            lower = weighted_log(grid, u.cells, phi_c, s, "spacetime").scale(s * weight.M0 + 2 * V_sup**2)
            bd = weighted_log(grid, u.faces, phi_f, s, "boundary-time", density=(Bf * flux)[None, :]).scale(s)
            rhs = pu.scale(2) + lower + bd
        else:
            c0 = (mu - beta) if part == "ii-B" else 1.0
            lhs = init.scale(s * c0) + bulk_B2.scale(s * s * (mu - beta) ** 2 / 2)
            plus = part_b.plus
            dens = np.zeros(len(flux))
            dens[plus] = Bf[plus] * flux[plus]
            bd = weighted_log(grid, u.faces, phi_f, s, "boundary-time", density=dens[None, :]).scale(s)
            rhs = pu.scale(2) + bd
        lhs_list.append(lhs)
        rhs_list.append(rhs)
        terms.append({"s": float(s), "log_Pu": _log_or_inf(pu), "log_boundary": _log_or_inf(bd), "log_initial": _log_or_inf(init)})
    s_min = 0.0 if part == "i" else weight.s0
    consts = {**weight.to_dict(), "part": part}
    return _report(f"linear-{part}", s_values, lhs_list, rhs_list, s_min, eps, consts, terms)


# --------------------------------------------------------------------------
# two-parameter weight


def _lemma3_terms(u: SpaceTimeSamples, grid: Grid, ew: ExpWeight, s: float, scheme: UpwindScheme, Vc: np.ndarray):
    phi_c = ew.phi(grid.cell_centers, grid.times)
    phi_f = ew.phi(grid.faces.centers, grid.times)
    lam = ew.lam
    Pu = _apply_P(u, scheme, None, grid.dt)
    init = weighted_log(grid, u.cells[0], phi_c[0], s, "interior", density=s * lam * phi_c[0])
    bulk = weighted_log(grid, u.cells, phi_c, s, "spacetime", density=(s * lam * phi_c) ** 2)
    pu = weighted_log(grid, Pu, phi_c, s, "spacetime")
    dnu = np.sum(np.asarray(ew.d.gradient().at(grid.faces.centers)).reshape(len(grid.faces), grid.dim) * grid.faces.normals, axis=1)
    J = ew.J(grid.faces.centers, grid.times)
    bd = weighted_log(grid, u.faces, phi_f, s, "boundary-time", density=s * J * dnu[None, :])
    return init + bulk, pu, bd


def lemma3_required_constant(u: SpaceTimeSamples, grid: Grid, ew: ExpWeight, s: float, boundary: str = "unit") -> float:
    """Smallest ``C`` making the two-parameter estimate hold for this ``u`` and ``s``.

    ``boundary="unit"`` keeps the boundary integral with coefficient one, so
    ``C`` only multiplies the ``P_d u`` term. ``boundary="scaled"`` lets ``C``
    multiply the boundary integral as well.
    """
    _check_terminal(u)
    scheme = UpwindScheme(grid, ew.d.gradient(), None, conservative=True)
    lhs, pu, bd = _lemma3_terms(u, grid, ew, s, scheme, None)
    if boundary == "scaled":
        return log_ratio(lhs, pu + bd)
    need = lhs + bd.scale(-1)
    if need.sign <= 0:
        return 0.0
    return log_ratio(need, pu)


def verify_lemma3(u: SpaceTimeSamples, grid: Grid, ew: ExpWeight, s_values: Sequence[float], C: float, eps: float = 0.05, s_min: float = 0.0, boundary: str = "unit") -> InequalityReport:
    """Two-parameter estimate for ``P_d u = d_t u + div(u grad d)`` with a fixed ``C``.

    See ``lemma3_required_constant`` for ``boundary``.
    """
    if boundary not in ("unit", "scaled"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    cb = C if boundary == "scaled" else 1.0
    _check_terminal(u)
    scheme = UpwindScheme(grid, ew.d.gradient(), None, conservative=True)
    lhs_list, rhs_list, terms = [], [], []
    for s in s_values:
        lhs, pu, bd = _lemma3_terms(u, grid, ew, s, scheme, None)
        lhs_list.append(lhs)
        rhs_list.append(pu.scale(C) + bd.scale(cb))
        terms.append({"s": float(s), "log_Pu": _log_or_inf(pu), "boundary": bd.value() if bd.log < 700 else None})
    return _report("two-parameter", s_values, lhs_list, rhs_list, s_min, eps, {**ew.to_dict(), "C": C, "boundary": boundary, "s_resolved": resolution_limit(grid, ew.lam, ew.d)}, terms)


def calibrate_constant(required: Sequence[float], safety: float = 2.0) -> float:
    """Freeze a generic constant: ``safety * max(required)``."""
    req = [r for r in required if np.isfinite(r)]
    if not req:
        raise InequalityError("no finite required ratios to calibrate from")
    return safety * max(max(req), 0.0)


# --------------------------------------------------------------------------
# Laplacian estimate


def _h02_check(f: Field, grid: Grid, tol: float) -> dict:
    fl = grid.faces
    fv = np.asarray(f.at(fl.centers), float)
    if isinstance(f, ExprField):
        g = np.asarray(f.gradient().at(fl.centers)).reshape(len(fl), grid.dim)
        dn = np.sum(g * fl.normals, axis=1)
    else:
        dn = np.zeros_like(fv)
    scale = max(float(np.max(np.abs(f.on_cells(grid)))), 1e-300)
    out = {"trace": float(np.max(np.abs(fv))) / scale, "normal_derivative": float(np.max(np.abs(dn))) / scale}
    if out["trace"] > tol or out["normal_derivative"] > tol:
        raise InequalityError(f"f is not of H0^2 type: |f| = {out['trace']:.3g}, |d_nu f| = {out['normal_derivative']:.3g} on the boundary")
    return out


def _lemma4_terms(fc: np.ndarray, grid: Grid, logphi0: np.ndarray, lam: float, s: float):
    phi0 = np.exp(logphi0)
    gr = _grad(fc, grid)
    grad2 = np.sum([g**2 for g in gr], axis=0)
    lap = _second_diff_sum(fc, grid)
    # |grad f|^2 is folded in as a density on the unit sample
    one = np.ones_like(fc)
    t1 = weighted_log(grid, one, phi0, s, "interior", density=s * lam**2 * phi0 * grad2)
    t2 = weighted_log(grid, fc, phi0, s, "interior", density=s**3 * lam**4 * phi0**3)
    rhs = weighted_log(grid, lap, phi0, s, "interior")
    return t1 + t2, rhs


def lemma4_required_constant(f: Field, d: ExprField, lam: float, s: float, grid: Grid) -> float:
    fc = np.asarray(f.on_cells(grid), float)
    lhs, rhs = _lemma4_terms(fc, grid, lam * d.on_cells(grid), lam, s)
    return log_ratio(lhs, rhs)


def verify_lemma4(f: Field, d: ExprField, lam: float, s_values: Sequence[float], C: float, grid: Grid, eps: float = 0.0, tol: float = 1e-8, s_min: float = 0.0) -> InequalityReport:
    """Laplacian estimate with weight ``exp(2 s exp(lam d))`` and frozen ``C``."""
    bc = _h02_check(f, grid, tol)
    fc = np.asarray(f.on_cells(grid), float)
    logphi0 = lam * d.on_cells(grid)
    lhs_list, rhs_list = [], []
    for s in s_values:
        lhs, rhs = _lemma4_terms(fc, grid, logphi0, lam, s)
        lhs_list.append(lhs)
        rhs_list.append(rhs.scale(C))
    return _report("laplacian", s_values, lhs_list, rhs_list, s_min, eps, {"lambda": lam, "C": C, "d": d.text, "boundary": bc}, [])


def random_h02_ensemble(rng, n: int, dim: int = 2, degree: int = 3) -> list[ExprField]:
    """``sin^2(pi x1) sin^2(pi x2) * q(x)`` with random trigonometric ``q``."""
    import sympy as sp

    from .fields import SPACE

    out = []
    bump = sp.Integer(1)
    for k in range(dim):
        bump = bump * sp.sin(sp.pi * SPACE[k]) ** 2
    for _ in range(n):
        q = sp.Float(float(rng.uniform(0.5, 1.5)))
        for _ in range(3):
            c = float(rng.standard_normal()) * 0.5
            mode = sp.Integer(1)
            for k in range(dim):
                m = int(rng.integers(0, degree + 1))
                fn = sp.sin if rng.integers(0, 2) else sp.cos
                mode = mode * fn(m * sp.pi * SPACE[k])
            q = q + sp.Float(c) * mode
        out.append(ExprField([bump * q], dim, vector=False))
    return out


def resolution_limit(grid: Grid, lam: float, d: ExprField, beta: float = 0.0, t_max: float = 0.0) -> float:
    """Largest ``s`` with ``2 s lam max(phi) h <= 1`` for ``phi = exp(lam (d - beta t))``.

    Beyond this the weight changes by more than a factor ``e`` per cell and
    the quadrature stops resolving it.
    """
    phi_max = math.exp(lam * float(np.max(d.at(grid.vertices))))
    return 1.0 / (2.0 * lam * phi_max * max(grid.h))


def calibrate_lemma4(probes: Sequence[Field], d: ExprField, grid: Grid, lam0: float = 1.0, lam_max: float = 16.0, n_doublings: int = 1, safety: float = 2.0, growth_tol: float = 0.05):
    """lambda-doubling search, then a frozen constant for the Laplacian estimate.

    For each ``lam`` the sweep is ``s1, 2 s1, ...`` with ``s1`` the largest
    value whose top sweep point is still resolved by the grid. Returns
    ``(lam, s1, C, search)`` with ``C = safety * max required ratio``.
    """

    def s_of(lam):
        return resolution_limit(grid, lam, d) / 2**n_doublings

    def worst(lam, s):
        return max(lemma4_required_constant(f, d, lam, s, grid) for f in probes)

    search = lambda_doubling(worst, s_of, lam0=lam0, lam_max=lam_max, n_doublings=n_doublings, growth_tol=growth_tol)
    C = calibrate_constant([search.C], safety)
    return search.lam, search.s1, C, search
