"""Single-measurement inverse problems.

The measurement operator maps a spatial source amplitude ``f`` to the time
derivative of the outflow trace of the solution of

    d_t y + H . grad y + V y = f(x) R(x, t),   y(., 0) = 0,   y = 0 on the inflow part.

It is assembled from the upwind one-step map, so its adjoint is the exact
transpose (a backward sweep with the transposed step matrices). Data live in
``L2`` of (boundary faces x time) with face weights ``area * |H . nu|`` (the
flux-weighted norm) or ``area`` (plain trace norm); unknowns live in
``L2(Omega)`` with the cell volume as weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .fields import ExprField, Field, SampledField, parse_field
from .geometry import Grid
from .transport import TransportProblem, UpwindScheme, scheme_for, solve_upwind, time_derivative_trace
from .weights import AdmissibleSetSpec, check_admissible


class OperatorError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class MeasurementOperator:
    """Linear map ``f -> d_t y`` on the measured faces.

    Parameters
    ----------
    problem : TransportProblem
        Supplies grid, H, V and R; its ``f``, ``a`` and ``h`` are ignored.
    weighting : {"flux", "plain"}
        Face weight ``|H.nu|`` (flux) or 1 (plain) in the data norm.
    faces : {"outflow", "all"}
        Measure on the outflow part only, or on every boundary face (inflow
        faces then carry the zero boundary data).
    source_weights : array, optional
        Per-step cell values replacing ``R(x, t_n)``, shape (n_steps, size).
    """

    def __init__(self, problem: TransportProblem, weighting: str = "flux", faces: str = "outflow", source_weights=None, scheme: UpwindScheme | None = None, r_tol: float = 1e-12):
        if weighting not in ("flux", "plain"):
            raise OperatorError(f"unknown weighting {weighting!r}")
        if faces not in ("outflow", "all"):
            raise OperatorError(f"unknown face set {faces!r}")
        g = problem.grid
        self.grid = g
        self.problem = problem
        self.weighting = weighting
        self.face_mode = faces
        self.scheme = scheme_for(problem) if scheme is None else scheme
        part = problem.partition
        if faces == "outflow":
            meas = part.plus
        else:
            meas = np.arange(len(g.faces))
        self.faces = np.asarray(meas, int)
        fl = g.faces
        w = fl.areas[self.faces] * (np.abs(part.flux[self.faces]) if weighting == "flux" else 1.0)
        # inflow faces carry the (zero) boundary data, not a cell value
        observed = ~np.isin(self.faces, part.minus)
        self.face_weights = w
        nm = len(self.faces)
        rows = np.flatnonzero(observed)
        self.P = sps.csr_matrix((np.ones(len(rows)), (rows, fl.cells[self.faces[rows]])), shape=(nm, g.size))
        self.PT = self.P.T.tocsr()
        if source_weights is None:
            R = problem.R
            if R is None:
                sw = np.ones((g.n_steps, g.size))
            else:
                sw = np.stack([np.asarray(R.on_cells(g, t), float) * np.ones(g.size) for t in g.times[:-1]])
        else:
            sw = np.asarray(source_weights, float).reshape(g.n_steps, g.size)
        self.source_weights = sw
        r0 = np.abs(sw[0])
        if problem.R is not None and source_weights is None and isinstance(problem.R, ExprField):
            r0 = np.minimum(r0.min(), np.abs(problem.R.at(g.vertices, 0.0)).min())
        self.r0_margin = float(np.min(r0))
        if not self.r0_margin > r_tol:
            raise OperatorError(f"R(x, 0) vanishes on the grid (min |R(x,0)| = {self.r0_margin:.3g})")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid.n_steps * len(self.faces), self.grid.size)

    # inner products --------------------------------------------------------

    def f_inner(self, u, v) -> float:
        return float(np.dot(u, v)) * self.grid.cell_volume

    def f_norm(self, u) -> float:
        return math.sqrt(max(self.f_inner(u, u), 0.0))

    def data_inner(self, a, b) -> float:
        return float(np.sum(a * b * self.face_weights[None, :])) * self.grid.dt

    def data_norm(self, a) -> float:
        return math.sqrt(max(self.data_inner(a, a), 0.0))

    # maps -----------------------------------------------------------------

    def apply(self, f) -> np.ndarray:
        """Staggered time differences of the measured trace, shape (n_steps, n_faces)."""
        g = self.grid
        f = np.asarray(f, float).reshape(g.size)
        y = np.zeros(g.size)
        out = np.empty((g.n_steps, len(self.faces)))
        prev = self.P @ y
        G = self.scheme.G
        for n in range(g.n_steps):
            y = G @ y + g.dt * self.source_weights[n] * f
            cur = self.P @ y
            out[n] = (cur - prev) / g.dt
            prev = cur
        return out

    def adjoint(self, data) -> np.ndarray:
        """Adjoint with respect to the weighted data and L2(Omega) inner products."""
        g = self.grid
        d = np.asarray(data, float).reshape(g.n_steps, len(self.faces))
        q = (self.PT @ (d * self.face_weights[None, :]).T).T  # (n_steps, size)
        GT = self.scheme.GT
        lam = np.zeros(g.size)
        acc = np.zeros(g.size)
        N = g.n_steps
        for j in range(N - 1, -1, -1):
            z = q[j] - (q[j + 1] if j + 1 < N else 0.0)
            lam = GT @ lam + z
            acc += self.source_weights[j] * lam
        return acc * g.dt / g.cell_volume

    def normal(self, f) -> np.ndarray:
        return self.adjoint(self.apply(f))

    def linearity_defect(self, rng, trials: int = 3) -> float:
        worst = 0.0
        for _ in range(trials):
            u, v = rng.standard_normal((2, self.grid.size))
            c = rng.standard_normal()
            lhs = self.apply(c * u + v)
            rhs = c * self.apply(u) + self.apply(v)
            worst = max(worst, float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-300)))
        return worst

    def adjoint_defect(self, rng, pairs: int = 50) -> float:
        worst = 0.0
        for _ in range(pairs):
            f = rng.standard_normal(self.grid.size)
            g = rng.standard_normal((self.grid.n_steps, len(self.faces)))
            a = self.data_inner(self.apply(f), g)
            b = self.f_inner(f, self.adjoint(g))
            worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
        return worst


def build_operator(problem: TransportProblem, weighting: str = "flux", faces: str = "outflow", **kw) -> MeasurementOperator:
    return MeasurementOperator(problem, weighting, faces, **kw)


# --------------------------------------------------------------------------
# Krylov pieces


def cg(apply, b, inner, tol=1e-10, maxiter=500, x0=None, shift=0.0):
    """Conjugate gradients for a self-adjoint positive operator.

    Returns ``(x, iterations, converged, relative residual)``.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - (apply(x) + shift * x) if x0 is not None else b.copy()
    p = r.copy()
    rr = inner(r, r)
    bnorm = math.sqrt(max(inner(b, b), 1e-300))
    if math.sqrt(rr) <= tol * bnorm:
        return x, 0, True, math.sqrt(rr) / bnorm
    for k in range(1, maxiter + 1):
        Ap = apply(p) + shift * p
        pAp = inner(p, Ap)
        if pAp <= 0:
            return x, k, False, math.sqrt(rr) / bnorm
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = inner(r, r)
        if math.sqrt(rr_new) <= tol * bnorm:
            return x, k, True, math.sqrt(rr_new) / bnorm
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, maxiter, False, math.sqrt(rr) / bnorm


@dataclass
class SingularReport:
    sigma_max: float
    sigma_min: float
    max_converged: bool
    min_converged: bool
    max_iters: int
    min_iters: int
    cg_failures: int
    note: str = ""

    @property
    def ratio(self) -> float:
        return self.sigma_max / self.sigma_min if self.sigma_min > 0 else math.inf

    def to_dict(self) -> dict:
        return {**self.__dict__, "ratio": self.ratio}


def singular_extremes(op: MeasurementOperator, rng=None, iters: int = 200, tol: float = 1e-8, inner_iters: int = 200, shift: float | None = None, strict: bool = False) -> SingularReport:
    """Extreme singular values of ``op`` between the weighted spaces.

    ``sigma_max`` comes from power iteration on ``A*A``. ``sigma_min`` comes
    from inverse iteration, each step a CG solve with ``A*A + shift``; the
    reported value is the square root of the Rayleigh quotient of the last
    iterate, so it is an upper bound on the true ``sigma_min`` even when a
    solve does not converge. Non-converged solves are counted, and raise
    ``ConvergenceError`` only with ``strict=True``. The default shift is
    ``1e-12 * sigma_max^2``, which keeps the inner systems definite when the
    operator has a null space.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = op.grid.size
    inner = op.f_inner
    N = op.normal

    v = rng.standard_normal(n)
    v /= op.f_norm(v)
    lam_old = 0.0
    max_conv = False
    for k in range(1, iters + 1):
        w = N(v)
        lam = inner(v, w)
        nw = op.f_norm(w)
        if nw == 0:
            lam, max_conv = 0.0, True
            break
        v = w / nw
        if abs(lam - lam_old) <= tol * abs(lam):
            max_conv = True
            break
        lam_old = lam
    max_iters = k
    sigma_max = math.sqrt(max(lam, 0.0))
    if shift is None:
        shift = 1e-12 * max(lam, 0.0)

    v = rng.standard_normal(n)
    v /= op.f_norm(v)
    rq_old = math.inf
    failures = 0
    min_conv = False
    rq = inner(v, N(v))
    for k in range(1, iters + 1):
        x, _, ok, _ = cg(N, v, inner, tol=1e-10, maxiter=inner_iters, shift=shift)
        if not ok:
            failures += 1
        nx = op.f_norm(x)
        if not np.isfinite(nx) or nx == 0:
            break
        v = x / nx
        rq = inner(v, N(v))
        if abs(rq - rq_old) <= tol * max(abs(rq), 1e-300) or rq <= 1e-28 * max(lam, 1e-300):
            min_conv = True
            break
        rq_old = rq
    min_iters = k
    if failures and strict:
        raise ConvergenceError(f"{failures} inner CG solves did not converge; sigma_min <= {math.sqrt(max(rq, 0.0)):.3g}")
    note = "" if not failures else f"{failures} inner CG solves hit the iteration cap (sigma_min is a Rayleigh-quotient upper bound)"
    return SingularReport(sigma_max, math.sqrt(max(rq, 0.0)), max_conv, min_conv, max_iters, min_iters, failures, note)


# --------------------------------------------------------------------------
# reconstruction


@dataclass
class ReconstructionResult:
    f_hat: np.ndarray
    alpha: float
    iterations: int
    residual: float
    residual_history: list
    converged: bool
    rel_error: float | None = None
    noise_level: float | None = None
    policy: str = "fixed"

    @property
    def monotone(self) -> bool:
        h = self.residual_history
        return all(h[k + 1] <= h[k] * (1 + 1e-10) + 1e-300 for k in range(len(h) - 1))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "rel_error": self.rel_error,
            "noise_level": self.noise_level,
            "policy": self.policy,
            "residual_monotone": self.monotone,
        }


def cgls(op: MeasurementOperator, data, alpha: float = 0.0, tol: float = 1e-10, maxiter: int = 500):
    """Minimise ``|A f - data|^2 + alpha |f|^2`` by CG on the normal equations (CGLS form)."""
    x = np.zeros(op.grid.size)
    r = np.array(data, float, copy=True)
    s = op.adjoint(r)
    p = s.copy()
    gamma = op.f_inner(s, s)
    s0 = math.sqrt(gamma)
    hist = [op.data_norm(r)]
    if s0 == 0:
        return x, 0, hist, True
    for k in range(1, maxiter + 1):
        q = op.apply(p)
        delta = op.data_inner(q, q) + alpha * op.f_inner(p, p)
        if delta <= 0:
            return x, k, hist, False
        a = gamma / delta
        x += a * p
        r -= a * q
        s = op.adjoint(r) - alpha * x
        g_new = op.f_inner(s, s)
        hist.append(op.data_norm(r))
        if not np.isfinite(g_new):
            raise ConvergenceError("CG diverged (non-finite residual)")
        if math.sqrt(g_new) <= tol * s0:
            return x, k, hist, True
        p = s + (g_new / gamma) * p
        gamma = g_new
    return x, maxiter, hist, False


def morozov_alpha(op: MeasurementOperator, data, noise_level: float, tau: float = 1.1, lo: float = 1e-12, hi: float = 1e2, steps: int = 30, maxiter: int = 200) -> float:
    """Largest ``alpha`` (bisection in log scale) whose residual stays below ``tau * noise_level``."""
    target = tau * noise_level
    scale = max(op.data_norm(op.apply(op.adjoint(data))), 1e-300) / max(op.data_norm(data), 1e-300)
    llo, lhi = math.log(lo * scale), math.log(hi * scale)
    for _ in range(steps):
        mid = 0.5 * (llo + lhi)
        x, _, hist, _ = cgls(op, data, math.exp(mid), maxiter=maxiter)
        if hist[-1] > target:
            lhi = mid
        else:
            llo = mid
    return math.exp(llo)


def reconstruct_source(op: MeasurementOperator, data, alpha="auto", noise_level: float | None = None, max_iters: int = 500, tol: float = 1e-10, f_true=None, sigma: SingularReport | None = None) -> ReconstructionResult:
    """Regularised least-squares source reconstruction.

    ``alpha="auto"`` uses 0 when ``sigma_min / sigma_max > 1e-3`` (or when no
    singular report is supplied) and otherwise picks ``alpha`` by the
    discrepancy principle for the given ``noise_level``.
    """
    data = np.asarray(data, float).reshape(op.grid.n_steps, len(op.faces))
    policy = "fixed"
    if alpha == "auto":
        healthy = sigma is None or sigma.sigma_min > 1e-3 * sigma.sigma_max
        if healthy or not noise_level:
            alpha, policy = 0.0, "zero"
        else:
            alpha, policy = morozov_alpha(op, data, noise_level), "morozov"
    alpha = float(alpha)
    x, k, hist, ok = cgls(op, data, alpha, tol=tol, maxiter=max_iters)
    if not np.all(np.isfinite(x)):
        raise ConvergenceError("reconstruction produced non-finite values")
    rel = None
    if f_true is not None:
        ft = np.asarray(f_true, float).reshape(op.grid.size)
        rel = op.f_norm(x - ft) / max(op.f_norm(ft), 1e-300)
    return ReconstructionResult(x, alpha, k, hist[-1], hist, ok, rel, noise_level, policy)


def add_noise(op: MeasurementOperator, data, level: float, rng) -> tuple[np.ndarray, float]:
    """Add Gaussian noise with data-norm ``level * |data|``; returns (noisy, absolute noise norm)."""
    e = rng.standard_normal(np.shape(data))
    ne = op.data_norm(e)
    amp = level * op.data_norm(data)
    noise = e * (amp / ne) if ne > 0 else e * 0
    return data + noise, op.data_norm(noise)


# --------------------------------------------------------------------------
# stability ratios


@dataclass
class StabilityRatioReport:
    theorem: str
    unknown_norm: float
    data_norm: float
    sigma_min: float | None = None
    sigma_max: float | None = None
    resolutions: list = field(default_factory=list)
    refinement_factor: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.unknown_norm == 0 or self.data_norm == 0

    @property
    def ratio(self) -> float | None:
        """``unknown / data``; None when both vanish."""
        if self.degenerate:
            return None
        return self.unknown_norm / self.data_norm

    @property
    def inverse_ratio(self) -> float | None:
        if self.degenerate:
            return None
        return self.data_norm / self.unknown_norm

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "unknown_norm": self.unknown_norm,
            "data_norm": self.data_norm,
            "ratio": self.ratio,
            "inverse_ratio": self.inverse_ratio,
            "degenerate": self.degenerate,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "resolutions": self.resolutions,
            "refinement_factor": self.refinement_factor,
            **self.extra,
        }


def refinement_factor(values) -> float:
    v = [abs(x) for x in values if x is not None]
    if not v or min(v) == 0:
        return math.inf
    return max(v) / min(v)


@dataclass
class VRecovery:
    V_hat: np.ndarray
    f_hat: np.ndarray
    history: list
    report: StabilityRatioReport
    reconstruction: ReconstructionResult


def _trace_norm(grid: Grid, faces, dtrace) -> float:
    return math.sqrt(float(np.sum(dtrace**2 * grid.faces.areas[faces][None, :])) * grid.dt)


def recover_coefficient_V(
    problem: TransportProblem,
    u1_trace,
    V2: Field,
    operator_V: Field | None = None,
    iterations: int = 0,
    alpha: float = 0.0,
    max_iters: int = 300,
    V1_true: Field | None = None,
    tol: float = 1e-8,
) -> VRecovery:
    """Recover ``V1`` from the outflow trace of the ``V1`` solution.

    ``problem`` carries grid, H, a and h (its V is ignored). The difference
    ``y = u1 - u2`` solves the source problem with ``f = V1 - V2`` and
    ``R = -u2`` and with ``V1`` in the zero-order term. With
    ``operator_V=V1`` the linear reduction is used exactly; by default the
    operator uses the current ``V2`` and ``iterations`` Gauss-Newton updates
    ``V2 <- V2 + f_hat`` are applied after the first linear solve.
    """
    g = problem.grid
    if problem.a is None or not np.min(np.abs(problem.a.at(g.vertices))) > 0:
        raise OperatorError("the initial value must not vanish on the closed domain")
    u1_trace = np.asarray(u1_trace, float)
    plus = problem.partition.plus
    if u1_trace.shape != (g.n_steps + 1, len(plus)):
        raise OperatorError(f"u1 trace must have shape {(g.n_steps + 1, len(plus))}")
    Vcur = np.asarray(V2.on_cells(g), float)
    history = []
    total = None
    rec = None
    first_data = None
    for it in range(iterations + 1):
        Vfield = SampledField(Vcur, g)
        u2 = solve_upwind(problem.with_data(V=Vfield, f=None, R=None, variant="homogeneous"))
        data = np.diff(u1_trace - u2.traces[:, plus], axis=0) / g.dt
        if first_data is None:
            first_data = data
        opV = Vfield if operator_V is None else operator_V
        sw = -u2.values[1:]
        op = MeasurementOperator(problem.with_data(V=opV, f=None, R=None, variant="generic"), weighting="plain", source_weights=sw)
        rec = reconstruct_source(op, data, alpha=alpha, max_iters=max_iters)
        step = rec.f_hat
        Vcur = Vcur + step
        total = step if total is None else total + step
        history.append({"iteration": it, "update_norm": op.f_norm(step), "residual": rec.residual, "cg_iterations": rec.iterations})
        if operator_V is not None or op.f_norm(step) <= tol * max(op.f_norm(Vcur), 1e-300):
            break
    V2c = np.asarray(V2.on_cells(g), float)
    vol = g.cell_volume
    if V1_true is not None:
        diff = np.asarray(V1_true.on_cells(g), float) - V2c
    else:
        diff = Vcur - V2c
    unknown = math.sqrt(float(np.sum(diff**2)) * vol)
    data_norm = _trace_norm(g, plus, first_data)
    extra = {"iterations": len(history), "history": history, "operator": "exact" if operator_V is not None else "linearised"}
    if V1_true is not None:
        V1c = np.asarray(V1_true.on_cells(g), float)
        extra["rel_error"] = math.sqrt(float(np.sum((Vcur - V1c) ** 2)) / max(float(np.sum((V1c - V2c) ** 2)), 1e-300))
    rep = StabilityRatioReport("1.15", unknown, data_norm, resolutions=[list(g.n_cells)], extra=extra)
    return VRecovery(Vcur, Vcur - V2c, history, rep, rec)


def h2_norm(grid: Grid, f: ExprField) -> float:
    """``(sum_{|alpha| <= 2} |d^alpha f|^2_{L2})^(1/2)`` by the midpoint rule."""
    pts = grid.cell_centers
    parts = [f.at(pts) ** 2]
    gr = np.asarray(f.gradient().at(pts)).reshape(len(pts), grid.dim)
    parts.append(np.sum(gr**2, axis=1))
    for hf in f.hessian():
        parts.append(hf.at(pts) ** 2)
    return math.sqrt(float(np.sum(parts)) * grid.cell_volume)


def stability_ratio_theorem3(
    grid: Grid,
    d1: ExprField,
    d2: ExprField,
    a: Field,
    h: Field,
    spec: AdmissibleSetSpec,
    strict: bool = True,
    tol: float = 1e-8,
) -> StabilityRatioReport:
    """Both ratios of the two-sided estimate for a pair of potentials.

    Solves the conservative problem for ``d1`` and ``d2`` and compares
    ``|d_t(rho1 - rho2)|`` on the part of the boundary where ``g2 > 0``
    with ``|d1 - d2|_{H^2}``. Also compares the first discrete time
    difference of ``rho1 - rho2`` with ``-grad f . grad a - a lap f``,
    ``f = d1 - d2``.
    """
    adm = [check_admissible(grid, d, spec, tol) for d in (d1, d2)]
    ranges = [float(np.ptp(d.at(grid.vertices))) for d in (d1, d2)]
    t_min = max(ranges) / spec.delta0**2
    gates = {
        "admissible": [r.admissible for r in adm],
        "admissibility": [r.to_dict() for r in adm],
        "T_min": t_min,
        "time_ok": grid.T > t_min,
        "a_min": float(np.min(np.abs(a.at(grid.vertices)))),
    }
    if strict:
        if not all(gates["admissible"]):
            bad = [i + 1 for i, r in enumerate(adm) if not r.admissible]
            raise OperatorError(f"potential(s) {bad} not admissible: " + "; ".join(f"min|grad d|={adm[i - 1].min_grad:.4g}, C2={adm[i - 1].c2:.4g}" for i in bad))
        if not gates["time_ok"]:
            raise OperatorError(f"T = {grid.T} must exceed {t_min:.6g}")
        if not gates["a_min"] > 0:
            raise OperatorError("a vanishes on the closed domain")
    gp, gm = spec.gamma(grid)
    sols = [solve_upwind(TransportProblem.conservative(grid, d, a=a, h=h)) for d in (d1, d2)]
    y = sols[0].values - sols[1].values
    dtr = np.diff(sols[0].traces[:, gp] - sols[1].traces[:, gp], axis=0) / grid.dt
    data_norm = _trace_norm(grid, gp, dtr)
    f = d1 - d2
    unknown = h2_norm(grid, f)
    # first-step identity
    lhs = (y[1] - y[0]) / grid.dt
    pts = grid.cell_centers
    ga = np.asarray(a.gradient().at(pts)).reshape(len(pts), grid.dim) if isinstance(a, ExprField) else np.zeros((len(pts), grid.dim))
    gf = np.asarray(f.gradient().at(pts)).reshape(len(pts), grid.dim)
    rhs = -np.sum(gf * ga, axis=1) - a.at(pts) * f.laplacian().at(pts)
    nr = np.linalg.norm(rhs)
    resid = float(np.linalg.norm(lhs - rhs) / nr) if nr > 0 else float(np.linalg.norm(lhs))
    extra = {
        "identity_residual": resid,
        "gamma_plus_faces": int(len(gp)),
        "gamma_minus_faces": int(len(gm)),
        "mass_defect": [float(np.max(s.mass_log["relative_defect"])) for s in sols],
        **gates,
    }
    return StabilityRatioReport("1.23", unknown, data_norm, resolutions=[list(grid.n_cells)], extra=extra)


def holder_fit(D, errors) -> dict:
    """Least-squares slope of ``log error`` against ``log D``."""
    D = np.asarray(D, float)
    e = np.asarray(errors, float)
    ok = (D > 0) & (e > 0)
    if ok.sum() < 2:
        return {"theta": None, "points": int(ok.sum())}
    slope, icpt = np.polyfit(np.log(D[ok]), np.log(e[ok]), 1)
    return {"theta": float(slope), "log_constant": float(icpt), "points": int(ok.sum()), "in_unit_interval": bool(0 < slope <= 1 + 1e-9)}
