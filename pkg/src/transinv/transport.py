"""Forward solvers for the linear transport equation

    d_t y + H . grad y + V y = f(x) R(x, t)   in Omega x (0, T),
    y(., 0) = a,   y = h on the inflow boundary,

and for the conservative form ``d_t rho + div(rho grad d) = 0``.

Two solvers are provided. ``solve_upwind`` is a first-order donor-cell
finite-volume scheme, dimensionally split, with per-axis substepping. It is
linear in all data, and its one-step map is stored as sparse matrices so the
inverse module can transpose it. ``solve_characteristics`` is a
semi-Lagrangian scheme (RK4 feet, linear interpolation, path quadrature of
``V`` and the source) used as a reference.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sps
from scipy.interpolate import RegularGridInterpolator

from .fields import ExprField, Field, SampledField, constant, parse_field
from .geometry import BoundaryPartition, Grid, classify_boundary, integrate


class SolverError(RuntimeError):
    pass


VARIANTS = ("generic", "homogeneous", "conservative")


@dataclass
class TransportProblem:
    grid: Grid
    H: Field
    V: Field | None = None
    f: Field | None = None
    R: Field | None = None
    a: Field | None = None
    h: Field | None = None
    variant: str = "generic"
    d: Field | None = None
    eps_nu: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "homogeneous" and self.f is not None:
            raise ValueError("the homogeneous variant has no source")
        if self.H.dim != self.grid.dim or not self.H.vector:
            raise ValueError(f"H must be a {self.grid.dim}-component vector field")

    @classmethod
    def conservative(cls, grid: Grid, d: ExprField, a=None, h=None, eps_nu=None) -> "TransportProblem":
        """``d_t rho + div(rho grad d) = 0``: H = grad d and V = lap d come from one d."""
        d = parse_field(d, grid.dim)
        return cls(grid, d.gradient(), d.laplacian(), None, None, a, h, "conservative", d, eps_nu)

    def with_data(self, **kw) -> "TransportProblem":
        args = {f.name: getattr(self, f.name) for f in fields(self)}
        args.update(kw)
        return TransportProblem(**args)

    @cached_property
    def partition(self) -> BoundaryPartition:
        return classify_boundary(self.grid, self.H, self.eps_nu)

    def V_cells(self) -> np.ndarray:
        return np.zeros(self.grid.size) if self.V is None else np.asarray(self.V.on_cells(self.grid), float)

    def a_cells(self) -> np.ndarray:
        return np.zeros(self.grid.size) if self.a is None else np.asarray(self.a.on_cells(self.grid), float)

    def inflow_values(self, t: float) -> np.ndarray:
        """Boundary data on every face (zero off the inflow part)."""
        nf = len(self.grid.faces)
        out = np.zeros(nf)
        minus = self.partition.minus
        if self.h is not None and len(minus):
            out[minus] = self.h.on_faces(self.grid, minus, t)
        return out

    def source_cells(self, t: float) -> np.ndarray:
        if self.f is None:
            return np.zeros(self.grid.size)
        R = 1.0 if self.R is None else self.R.on_cells(self.grid, t)
        return self.f.on_cells(self.grid) * R

    def compatibility(self) -> dict:
        """Mismatch between ``h(., 0)`` and ``a`` on the inflow faces."""
        minus = self.partition.minus
        if len(minus) == 0 or self.h is None:
            return {"max_mismatch": 0.0, "faces": 0}
        f = self.grid.faces
        av = np.zeros(len(minus)) if self.a is None else self.a.at(f.centers[minus])
        hv = self.h.on_faces(self.grid, minus, 0.0)
        return {"max_mismatch": float(np.max(np.abs(hv - av))), "faces": int(len(minus))}


@dataclass
class ForwardSolution:
    grid: Grid
    values: np.ndarray  # (n_steps + 1, size)
    traces: np.ndarray  # (n_steps + 1, n_faces)
    partition: BoundaryPartition
    method: str
    meta: dict = field(default_factory=dict)
    mass_log: dict | None = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def outflow_trace(self) -> np.ndarray:
        return self.traces[:, self.partition.plus]

    @property
    def inflow_trace(self) -> np.ndarray:
        return self.traces[:, self.partition.minus]

    def final(self) -> np.ndarray:
        return self.values[-1]


# --------------------------------------------------------------------------
# upwind scheme


def _boundary_face_maps(grid: Grid):
    """Per axis, arrays mapping cell -> low/high boundary face (or -1)."""
    f = grid.faces
    low = [np.full(grid.size, -1) for _ in range(grid.dim)]
    high = [np.full(grid.size, -1) for _ in range(grid.dim)]
    for j in range(len(f)):
        (low if f.side[j] == 0 else high)[f.axis[j]][f.cells[j]] = j
    return low, high


def _face_velocities(grid: Grid, H: Field, k: int) -> np.ndarray:
    """``H_k`` at all faces normal to axis ``k``; axis ``k`` has length n_k + 1."""
    axes = [grid.axis_nodes(j) if j == k else grid.axis_centers(j) for j in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = np.asarray(H.at(pts)).reshape(len(pts), grid.dim)[:, k]
    shape = list(grid.shape)
    shape[k] += 1
    return vals.reshape(shape)


class UpwindScheme:
    """One macro step ``y -> E (S y + B g) + dt * s`` as sparse matrices.

    ``S`` is the product of all directional sweeps (with substeps), ``B`` maps
    boundary face data ``g`` into cells, ``E = exp(-V dt)`` is the exact
    reaction factor (identity for the conservative form, where the flux
    form already carries ``div H``). ``flux_cells`` and ``flux_faces`` give the
    outward boundary flux integrated over the step.
    """

    def __init__(self, grid: Grid, H: Field, V=None, conservative: bool = False, max_substeps: int = 64):
        self.grid = grid
        self.conservative = conservative
        size, nf = grid.size, len(grid.faces)
        low, high = _boundary_face_maps(grid)
        idx = np.arange(size).reshape(grid.shape)
        S = sps.identity(size, format="csr")
        Bacc = sps.csr_matrix((size, nf))
        Fc = sps.csr_matrix((nf, size))
        Fh = sps.csr_matrix((nf, nf))
        self.substeps = []
        self.cfl = []
        self.sweeps = []
        areas = grid.faces.areas
        for k in range(grid.dim):
            A = _face_velocities(grid, H, k)
            sl_lo = [slice(None)] * grid.dim
            sl_hi = [slice(None)] * grid.dim
            sl_lo[k] = slice(0, -1)
            sl_hi[k] = slice(1, None)
            a_lo = A[tuple(sl_lo)].ravel()
            a_hi = A[tuple(sl_hi)].ravel()
            ap_lo, am_lo = np.maximum(a_lo, 0), np.minimum(a_lo, 0)
            ap_hi, am_hi = np.maximum(a_hi, 0), np.minimum(a_hi, 0)
            if conservative:
                out_rate = ap_hi - am_lo
            else:
                out_rate = ap_lo - am_hi
            cfl = grid.dt / grid.h[k] * float(np.max(out_rate))
            nsub = max(1, int(math.ceil(cfl - 1e-9)))
            if nsub > max_substeps:
                raise SolverError(f"axis {k}: Courant number {cfl:.3g} needs {nsub} substeps (> {max_substeps})")
            self.cfl.append(float(cfl))
            self.substeps.append(nsub)
            dts = grid.dt / nsub
            c = dts / grid.h[k]
            pos = np.moveaxis(np.indices(grid.shape), 0, -1).reshape(size, grid.dim)[:, k]
            rows, cols, vals = [np.arange(size)], [np.arange(size)], [1.0 - c * out_rate]
            brow, bcol, bval = [], [], []
            interior_lo = pos > 0
            interior_hi = pos < grid.shape[k] - 1
            stride = idx.strides[k] // idx.itemsize
            cells = np.arange(size)
            # lower neighbour enters through a_lo^+, upper through a_hi^-
            rows.append(cells[interior_lo]); cols.append(cells[interior_lo] - stride); vals.append(c * ap_lo[interior_lo])
            rows.append(cells[interior_hi]); cols.append(cells[interior_hi] + stride); vals.append(-c * am_hi[interior_hi])
            bl = ~interior_lo
            bh = ~interior_hi
            brow += [cells[bl], cells[bh]]
            bcol += [low[k][cells[bl]], high[k][cells[bh]]]
            bval += [c * ap_lo[bl], -c * am_hi[bh]]
            M = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
            Bk = sps.csr_matrix((np.concatenate(bval), (np.concatenate(brow), np.concatenate(bcol))), shape=(size, nf))
            # outward boundary flux over one substep (per face, times area and dt)
            fl = low[k][cells[bl]]
            fh = high[k][cells[bh]]
            fc_k = sps.csr_matrix(
                (np.concatenate([-am_lo[bl] * areas[fl] * dts, ap_hi[bh] * areas[fh] * dts]),
                 (np.concatenate([fl, fh]), np.concatenate([cells[bl], cells[bh]]))),
                shape=(nf, size),
            )
            fh_k = sps.csr_matrix(
                (np.concatenate([-ap_lo[bl] * areas[fl] * dts, am_hi[bh] * areas[fh] * dts]),
                 (np.concatenate([fl, fh]), np.concatenate([fl, fh]))),
                shape=(nf, nf),
            )
            self.sweeps.append((M, Bk, dts))
            for _ in range(nsub):
                Fc = Fc + fc_k @ S
                Fh = Fh + fc_k @ Bacc + fh_k
                S = M @ S
                Bacc = M @ Bacc + Bk
        if conservative or V is None:
            self.E = np.ones(size)
        else:
            Vc = V if isinstance(V, np.ndarray) else V.on_cells(grid)
            self.E = np.exp(-np.asarray(Vc, float) * grid.dt)
        self.S = S.tocsr()
        self.B = Bacc.tocsr()
        self.G = (sps.diags(self.E) @ self.S).tocsr()
        self.GT = self.G.T.tocsr()
        self.EB = (sps.diags(self.E) @ self.B).tocsr()
        self.flux_cells = Fc.tocsr()
        self.flux_faces = Fh.tocsr()

    def step(self, y: np.ndarray, g: np.ndarray | None = None, source: np.ndarray | None = None) -> np.ndarray:
        out = self.G @ y
        if g is not None:
            out += self.EB @ g
        if source is not None:
            out += self.grid.dt * source
        return out

    def advection(self, y: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
        """Spatial upwind operator: ``H . grad y`` (or ``div(H y)`` in flux form).

        ``g`` holds boundary face values; only inflow faces are read.
        """
        out = np.zeros_like(y, dtype=float)
        for M, Bk, dts in self.sweeps:
            r = y - M @ y
            if g is not None:
                r = r - Bk @ g
            out += r / dts
        return out

    def outflux(self, y: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Outward boundary flux per face integrated over one step."""
        return self.flux_cells @ y + self.flux_faces @ g

    def meta(self) -> dict:
        return {"cfl": self.cfl, "substeps": self.substeps, "conservative": self.conservative}


def scheme_for(problem: TransportProblem, V=None) -> UpwindScheme:
    cons = problem.variant == "conservative"
    return UpwindScheme(problem.grid, problem.H, None if cons else (problem.V if V is None else V), conservative=cons)


def _traces(problem: TransportProblem, values: np.ndarray) -> np.ndarray:
    """Boundary traces: adjacent cell value, except inflow faces which carry h."""
    g = problem.grid
    tr = values[:, g.faces.cells].copy()
    minus = problem.partition.minus
    if len(minus):
        tr[:, minus] = np.stack([problem.inflow_values(t)[minus] for t in g.times])
    return tr


def solve_upwind(problem: TransportProblem, scheme: UpwindScheme | None = None) -> ForwardSolution:
    g = problem.grid
    sch = scheme_for(problem) if scheme is None else scheme
    y = problem.a_cells().astype(float)
    values = np.empty((g.n_steps + 1, g.size))
    values[0] = y
    mass = out = None
    if problem.variant == "conservative":
        mass = np.empty(g.n_steps + 1)
        out = np.empty(g.n_steps)
        mass[0] = y.sum() * g.cell_volume
    for n in range(g.n_steps):
        t = g.times[n]
        gb = problem.inflow_values(t)
        src = problem.source_cells(t) if problem.f is not None else None
        if out is not None:
            out[n] = float(np.sum(sch.outflux(y, gb)))
        y = sch.step(y, gb, src)
        if not np.all(np.isfinite(y)):
            raise SolverError(f"non-finite values after step {n + 1} (t={g.times[n + 1]:.6g})")
        values[n + 1] = y
        if mass is not None:
            mass[n + 1] = y.sum() * g.cell_volume
    mass_log = None
    if mass is not None:
        defect = np.abs(np.diff(mass) + out)
        scale = max(float(np.max(np.abs(mass))), float(np.max(np.abs(out))) if len(out) else 0.0, 1e-300)
        mass_log = {"mass": mass, "outflux": out, "defect": defect, "relative_defect": defect / scale}
    meta = {"method": "upwind", "h": g.h.tolist(), "dt": g.dt, **sch.meta()}
    return ForwardSolution(g, values, _traces(problem, values), problem.partition, "upwind", meta, mass_log)


# --------------------------------------------------------------------------
# characteristics


def _rk4_path(H: Field, x0: np.ndarray, dt: float, m: int) -> np.ndarray:
    """Backward path positions at ``m + 1`` equally spaced times, shape (m+1, n, dim)."""
    tau = dt / m
    out = np.empty((m + 1, *x0.shape))
    x = x0.copy()
    out[0] = x
    dim = x0.shape[1]

    def v(p):
        return -np.asarray(H.at(p)).reshape(len(p), dim)

    for j in range(m):
        k1 = v(x)
        k2 = v(x + 0.5 * tau * k1)
        k3 = v(x + 0.5 * tau * k2)
        k4 = v(x + tau * k3)
        x = x + tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[j + 1] = x
    return out


def _padded_interpolator(problem: TransportProblem, y: np.ndarray, t: float):
    g = problem.grid
    arr = y.reshape(g.shape)
    pad = np.pad(arr, 1, mode="edge")
    gb = problem.inflow_values(t)
    f = g.faces
    minus = problem.partition.minus
    for j in minus:
        k, s = f.axis[j], f.side[j]
        cell = np.unravel_index(f.cells[j], g.shape)
        loc = [c + 1 for c in cell]
        loc[k] = 0 if s == 0 else g.shape[k] + 1
        pad[tuple(loc)] = gb[j]
    axes = [np.concatenate([[g.lo[k]], g.axis_centers(k), [g.hi[k]]]) for k in range(g.dim)]
    return RegularGridInterpolator(axes, pad, method="linear", bounds_error=False, fill_value=None)


def solve_characteristics(problem: TransportProblem, path_steps: int = 8) -> ForwardSolution:
    """Semi-Lagrangian reference solver.

    Each cell center and boundary face center is traced backwards over one
    step with RK4 (``path_steps`` substeps). Feet inside the domain are
    interpolated linearly from the previous level; paths that cross the
    boundary pick up ``h`` at the crossing point and time. ``V`` and the
    source are integrated along the path with the trapezoid rule, so the
    reaction enters as an integrating factor.
    """
    g = problem.grid
    if not isinstance(problem.H, ExprField):
        raise SolverError("the characteristics solver needs an expression-backed H")
    Vf = problem.V
    f = g.faces
    pts = np.vstack([g.cell_centers, f.centers])
    npts = len(pts)
    m = path_steps
    dt = g.dt
    path = _rk4_path(problem.H, pts, dt, m)  # H is stationary, so one path serves every step
    tau = dt / m
    # first path index outside the closed domain
    span = np.asarray(g.hi) - np.asarray(g.lo)
    tol = 1e-12 * span
    outside = np.stack([~np.all((path[j] >= np.asarray(g.lo) - tol) & (path[j] <= np.asarray(g.hi) + tol), axis=1) for j in range(m + 1)])
    exits = outside.any(axis=0)
    first = np.where(exits, np.argmax(outside, axis=0), m + 1)
    # crossing fraction on the segment [first-1, first]
    frac = np.ones(npts)
    entry = path[-1].copy()
    entry_normal = np.zeros((npts, g.dim))
    for i in np.flatnonzero(exits):
        j = first[i]
        p0, p1 = path[j - 1, i], path[j, i]
        theta = 1.0
        for k in range(g.dim):
            for sgn, bound in ((-1.0, g.lo[k]), (1.0, g.hi[k])):
                dp = p1[k] - p0[k]
                if dp != 0 and (p0[k] - bound) * (p1[k] - bound) <= 0:
                    th = (bound - p0[k]) / dp
                    if 0 <= th <= theta:
                        theta = th
                        entry_normal[i] = 0.0
                        entry_normal[i, k] = sgn
        frac[i] = theta
        entry[i] = p0 + theta * (p1 - p0)
    if exits.any():
        ex = np.flatnonzero(exits)
        Hn = np.sum(np.asarray(problem.H.at(entry[ex])).reshape(len(ex), g.dim) * entry_normal[ex], axis=1)
        band = problem.partition.eps_nu
        bad = ex[Hn > max(band, 1e-9 * float(np.max(np.abs(Hn))))]
        if len(bad):
            raise SolverError(f"backward characteristic leaves through an outflow face at x={entry[bad[0]].tolist()}")
    # the path length (in time) actually inside the domain
    s_in = np.where(exits, (first - 1 + frac) * tau, dt)
    # trapezoid weights along the path for each point, truncated at the crossing
    W = np.zeros((m + 1, npts))
    for j in range(m):
        seg = np.clip(s_in - j * tau, 0.0, tau)  # covered part of segment j
        full = seg >= tau * (1 - 1e-14)
        W[j] += np.where(full, 0.5 * tau, seg * (1 - 0.5 * seg / tau))
        W[j + 1] += np.where(full, 0.5 * tau, 0.5 * seg**2 / tau)
    Vp = np.zeros((m + 1, npts)) if Vf is None else np.stack([Vf.at(path[j]) for j in range(m + 1)])
    # cumulative integral of V from the end point back to path index j
    cumV = np.zeros((m + 1, npts))
    for j in range(1, m + 1):
        cumV[j] = cumV[j - 1] + 0.5 * tau * (Vp[j - 1] + Vp[j])
    Vin = np.sum(W * Vp, axis=0)
    decay = np.exp(-Vin)
    fp = None if problem.f is None else np.stack([problem.f.at(path[j]) for j in range(m + 1)])

    minus = problem.partition.minus
    y = problem.a_cells().astype(float)
    vals = np.empty((g.n_steps + 1, g.size))
    traces = np.empty((g.n_steps + 1, len(f)))
    vals[0] = y
    traces[0] = y[f.cells]
    if len(minus):
        traces[0, minus] = problem.inflow_values(0.0)[minus]
    for n in range(g.n_steps):
        t0, t1 = g.times[n], g.times[n + 1]
        interp = _padded_interpolator(problem, y, t0)
        base = interp(path[-1])
        if exits.any():
            if problem.h is None:
                hv = np.zeros(int(exits.sum()))
            else:
                te = t1 - s_in[exits]
                hv = np.array([problem.h.at(entry[i : i + 1], te_i)[0] for i, te_i in zip(np.flatnonzero(exits), te)])
            base[exits] = hv
        new = base * decay
        if fp is not None:
            # source at times t1 - j*tau along the path, damped by V picked up afterwards
            times = t1 - tau * np.arange(m + 1)
            Rv = np.ones((m + 1, npts)) if problem.R is None else np.stack([problem.R.at(path[j], times[j]) for j in range(m + 1)])
            new = new + np.sum(W * fp * Rv * np.exp(-cumV), axis=0)
        if not np.all(np.isfinite(new)):
            raise SolverError(f"non-finite values after step {n + 1}")
        y = new[: g.size]
        vals[n + 1] = y
        traces[n + 1] = new[g.size :]
        if len(minus):
            traces[n + 1, minus] = problem.inflow_values(t1)[minus]
    meta = {"method": "characteristics", "h": g.h.tolist(), "dt": dt, "path_steps": m}
    return ForwardSolution(g, vals, traces, problem.partition, "characteristics", meta)


# --------------------------------------------------------------------------
# traces and energy


def time_derivative_trace(sol: ForwardSolution, faces=None, scheme: str = "centered") -> np.ndarray:
    """Time derivative of boundary traces.

    ``centered`` gives values at every time node (one-sided second order at
    the ends); ``staggered`` gives forward differences ``(y[n+1]-y[n])/dt``
    located at the half steps, shape (n_steps, n_faces).
    """
    g = sol.grid
    if g.n_steps < 3:
        raise ValueError("need at least 3 time steps")
    tr = sol.traces if faces is None else sol.traces[:, np.asarray(faces, int)]
    if scheme == "staggered":
        return np.diff(tr, axis=0) / g.dt
    if scheme != "centered":
        raise ValueError(f"unknown scheme {scheme!r}")
    return np.gradient(tr, g.dt, axis=0, edge_order=2)


@dataclass
class EnergyReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    K: float
    terms: dict

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.rhs > 0, self.lhs / self.rhs, np.where(self.lhs > 0, np.inf, 0.0))
        return r

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio))

    def passed(self, tol: float = 1.05) -> bool:
        return self.max_ratio <= tol

    def to_dict(self) -> dict:
        return {"K": self.K, "max_ratio": self.max_ratio, **self.terms}


def energy_report(sol: ForwardSolution, problem: TransportProblem, K: float | None = None) -> EnergyReport:
    """Energy inequality with the Gronwall constant ``K = 2|V| + |div H| + 1``.

    Checks ``E(t) + int_0^t int_{outflow} (H.nu) w^2 <= exp(K t) (|a|^2 +
    |F|^2_{L2(Q)} + int_0^T int_{inflow} |H.nu| w^2)`` at every time node.
    """
    g = problem.grid
    pts = g.vertices
    if K is None:
        V_sup = 0.0 if problem.V is None else float(np.max(np.abs(problem.V.at(pts))))
        divH = float(np.max(np.abs(problem.H.divergence().at(pts)))) if hasattr(problem.H, "divergence") else 0.0
        K = 2 * V_sup + divH + 1
    part = problem.partition
    E = np.array([integrate(g, v**2) for v in sol.values])
    flux = part.flux
    plus, minus = part.plus, part.minus
    areas = g.faces.areas
    q_out = (sol.traces[:, plus] ** 2) @ (flux[plus] * areas[plus]) if len(plus) else np.zeros(g.n_steps + 1)
    cum_out = np.concatenate([[0.0], np.cumsum(0.5 * g.dt * (q_out[1:] + q_out[:-1]))])
    q_in = (sol.traces[:, minus] ** 2) @ (np.abs(flux[minus]) * areas[minus]) if len(minus) else np.zeros(g.n_steps + 1)
    inflow = float(g.time_weights @ q_in)
    if problem.f is not None:
        F2 = float(g.time_weights @ np.array([integrate(g, problem.source_cells(t) ** 2) for t in g.times]))
    else:
        F2 = 0.0
    a2 = integrate(g, problem.a_cells() ** 2)
    lhs = E + cum_out
    rhs = np.exp(K * g.times) * (a2 + F2 + inflow)
    return EnergyReport(g.times.copy(), lhs, rhs, float(K), {"a_norm2": a2, "F_norm2": F2, "inflow_term": inflow})


# --------------------------------------------------------------------------
# export


def write_trace_csv(sol: ForwardSolution, path, faces=None, derivative: bool = False) -> Path:
    """CSV with columns face, t, value (boundary traces or their time derivative)."""
    path = Path(path)
    idx = np.arange(len(sol.grid.faces)) if faces is None else np.asarray(faces, int)
    data = time_derivative_trace(sol, idx) if derivative else sol.traces[:, idx]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face", "t", "value"])
        for n, t in enumerate(sol.grid.times):
            for j, fid in enumerate(idx):
                w.writerow([int(fid), repr(float(t)), repr(float(data[n, j]))])
    return path


def write_values_csv(sol: ForwardSolution, path) -> Path:
    """CSV with columns x1[, x2], t, value for the space-time solution."""
    path = Path(path)
    g = sol.grid
    names = [f"x{k + 1}" for k in range(g.dim)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "t", "value"])
        for n, t in enumerate(g.times):
            for i in range(g.size):
                w.writerow([*(repr(float(c)) for c in g.cell_centers[i]), repr(float(t)), repr(float(sol.values[n, i]))])
    return path


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a trace CSV back as (face ids, times, values[time, face])."""
    rows = list(csv.DictReader(Path(path).open()))
    faces = np.array(sorted({int(r["face"]) for r in rows}))
    times = np.array(sorted({float(r["t"]) for r in rows}))
    fpos = {f: j for j, f in enumerate(faces)}
    tpos = {t: n for n, t in enumerate(times)}
    vals = np.zeros((len(times), len(faces)))
    for r in rows:
        vals[tpos[float(r["t"])], fpos[int(r["face"])]] = float(r["value"])
    return faces, times, vals


MAGIC = b"TRNV"


def write_binary(array, path) -> Path:
    """Binary dump: b'TRNV', uint32 version=1, uint32 ndim, uint64 dims[ndim], float64 data.

    Everything is little-endian, data in C order.
    """
    a = np.ascontiguousarray(array, dtype="<f8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", 1, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes())
    return path


def read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a transport dump")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise ValueError(f"unsupported dump version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 12)
    off = 12 + 8 * ndim
    return np.frombuffer(raw, dtype="<f8", offset=off).reshape(shape).copy()


__all__ = [
    "TransportProblem",
    "ForwardSolution",
    "UpwindScheme",
    "SolverError",
    "solve_upwind",
    "solve_characteristics",
    "time_derivative_trace",
    "energy_report",
    "EnergyReport",
    "write_trace_csv",
    "write_values_csv",
    "read_trace_csv",
    "write_binary",
    "read_binary",
    "constant",
    "SampledField",
]
