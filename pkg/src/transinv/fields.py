"""Scalar and vector fields over the space-time grid.

Fields are either expression-backed (closed-form, differentiated
symbolically) or grid-sampled (cell values, differentiated by finite
differences). Expressions use a small closed grammar so configuration files
never execute arbitrary code::

    vector  = "(" expr { "," expr } ")" | expr ;
    expr    = term { ("+" | "-") term } ;
    term    = factor { ("*" | "/") factor } ;
    factor  = [ "+" | "-" ] power ;
    power   = atom [ ("^" | "**") factor ] ;
    atom    = number | name | func "(" expr ")" | "(" expr ")" ;
    func    = "sin" | "cos" | "exp" ;
    name    = "x1" | "x2" | "x" | "t" | "pi" | "nu1" | "nu2" ;

``x`` is an alias of ``x1``. ``nu1``/``nu2`` are the components of the
outward normal and are only meaningful for boundary data such as the Neumann
trace of a potential.
"""

from __future__ import annotations

import ast
from functools import cached_property

import numpy as np
import sympy as sp

from .geometry import Grid

X1, X2, T_SYM, NU1, NU2 = sp.symbols("x1 x2 t nu1 nu2", real=True)
SPACE = (X1, X2)
_NAMES = {"x1": X1, "x2": X2, "x": X1, "t": T_SYM, "pi": sp.pi, "nu1": NU1, "nu2": NU2}
_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


class ExpressionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _convert(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sp.nsimplify(node.value) if float(node.value).is_integer() else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in _NAMES:
            raise ExpressionError(f"unknown name {node.id!r}")
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_convert(node.left), _convert(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _convert(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        return _FUNCS[node.func.id](_convert(node.args[0]))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def parse_expression(text: str) -> tuple[sp.Expr, ...]:
    """Parse ``text`` into a tuple of sympy expressions (one per component)."""
    src = str(text).strip().replace("^", "**")
    if not src:
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(src, mode="eval").body
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    if isinstance(tree, ast.Tuple):
        return tuple(_convert(e) for e in tree.elts)
    return (_convert(tree),)


class Field:
    """Common interface. ``at`` returns (m,) for scalars and (m, dim) for vectors."""

    dim: int
    vector: bool

    def at(self, points, t=0.0, normals=None) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def on_cells(self, grid: Grid, t=0.0) -> np.ndarray:
        return self.at(grid.cell_centers, t)

    def on_faces(self, grid: Grid, faces=None, t=0.0) -> np.ndarray:
        f = grid.faces
        idx = np.arange(len(f)) if faces is None else np.asarray(faces, int)
        return self.at(f.centers[idx], t, normals=f.normals[idx])

    def spacetime(self, grid: Grid) -> np.ndarray:
        """Cell values at every time node, shape (n_steps + 1, size)."""
        return np.stack([self.on_cells(grid, t) for t in grid.times])

    def sup(self, grid: Grid) -> float:
        v = self.at(grid.vertices)
        if self.vector:
            return float(np.max(np.linalg.norm(v.reshape(len(grid.vertices), -1), axis=1)))
        return float(np.max(np.abs(v)))


class ExprField(Field):
    def __init__(self, exprs, dim: int, vector: bool | None = None, smooth: bool = True, text: str | None = None):
        exprs = tuple(sp.sympify(e) for e in exprs)
        if vector is None:
            vector = len(exprs) > 1
        if vector and len(exprs) != dim:
            raise ExpressionError(f"vector field needs {dim} components, got {len(exprs)}")
        if not vector and len(exprs) != 1:
            raise ExpressionError("scalar field must have exactly one component")
        allowed = set(SPACE[:dim]) | {T_SYM, NU1, NU2}
        for e in exprs:
            extra = e.free_symbols - allowed
            if extra:
                raise ExpressionError(f"variables {sorted(map(str, extra))} not defined in {dim}D")
        self.exprs = exprs
        self.dim = dim
        self.vector = vector
        self.smooth = smooth
        self.text = text if text is not None else self._format()

    def _format(self) -> str:
        parts = [str(e).replace("**", "^") for e in self.exprs]
        return f"({', '.join(parts)})" if self.vector else parts[0]

    def __repr__(self):
        return f"ExprField({self.text!r}, dim={self.dim})"

    @cached_property
    def _funcs(self):
        args = (*SPACE[: self.dim], T_SYM, NU1, NU2)
        return [sp.lambdify(args, e, modules="numpy") for e in self.exprs]

    @property
    def time_dependent(self) -> bool:
        return any(T_SYM in e.free_symbols for e in self.exprs)

    def at(self, points, t=0.0, normals=None) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, self.dim)
        m = len(p)
        nu = np.zeros((m, 2)) if normals is None else np.asarray(normals, float).reshape(m, self.dim)
        if nu.shape[1] < 2:
            nu = np.hstack([nu, np.zeros((m, 2 - nu.shape[1]))])
        tt = np.broadcast_to(np.asarray(t, dtype=float), (m,))
        cols = []
        for fn in self._funcs:
            v = fn(*p.T, tt, nu[:, 0], nu[:, 1])
            cols.append(np.broadcast_to(np.asarray(v, dtype=float), (m,)))
        out = np.stack(cols, axis=-1)
        return out if self.vector else out[:, 0]

    # symbolic calculus ------------------------------------------------------

    def gradient(self) -> "ExprField":
        self._need_scalar()
        return ExprField([sp.diff(self.exprs[0], s) for s in SPACE[: self.dim]], self.dim, vector=True)

    def divergence(self) -> "ExprField":
        if not self.vector:
            raise ExpressionError("divergence needs a vector field")
        return ExprField([sum(sp.diff(e, s) for e, s in zip(self.exprs, SPACE))], self.dim, vector=False)

    def laplacian(self) -> "ExprField":
        self._need_scalar()
        return ExprField([sum(sp.diff(self.exprs[0], s, 2) for s in SPACE[: self.dim])], self.dim, vector=False)

    def hessian(self) -> list["ExprField"]:
        """Second derivatives ``d_ij`` for ``i <= j``."""
        self._need_scalar()
        out = []
        for i in range(self.dim):
            for j in range(i, self.dim):
                out.append(ExprField([sp.diff(self.exprs[0], SPACE[i], SPACE[j])], self.dim, vector=False))
        return out

    def jacobian(self) -> list["ExprField"]:
        if not self.vector:
            raise ExpressionError("jacobian needs a vector field")
        return [ExprField([sp.diff(e, s) for s in SPACE[: self.dim]], self.dim, vector=True) for e in self.exprs]

    def time_derivative(self) -> "ExprField":
        return ExprField([sp.diff(e, T_SYM) for e in self.exprs], self.dim, vector=self.vector)

    def dot(self, other: "ExprField") -> "ExprField":
        if not (self.vector and other.vector):
            raise ExpressionError("dot needs two vector fields")
        return ExprField([sum(a * b for a, b in zip(self.exprs, other.exprs))], self.dim, vector=False)

    def scale(self, c) -> "ExprField":
        return ExprField([sp.sympify(c) * e for e in self.exprs], self.dim, vector=self.vector)

    def __add__(self, other: "ExprField") -> "ExprField":
        return ExprField([a + b for a, b in zip(self.exprs, other.exprs)], self.dim, vector=self.vector)

    def __sub__(self, other: "ExprField") -> "ExprField":
        return ExprField([a - b for a, b in zip(self.exprs, other.exprs)], self.dim, vector=self.vector)

    def _need_scalar(self):
        if self.vector:
            raise ExpressionError("operation needs a scalar field")

    def check_finite(self, grid: Grid) -> None:
        """Raise if the expression is not finite at some vertex or time node."""
        for t in (0.0, grid.T / 2, grid.T) if self.time_dependent else (0.0,):
            v = self.at(grid.vertices, t)
            if not np.all(np.isfinite(v)):
                bad = grid.vertices[np.flatnonzero(~np.all(np.isfinite(v.reshape(len(v), -1)), axis=1))[0]]
                raise ExpressionError(f"{self.text} is not finite at x={bad.tolist()}, t={t}")


class SampledField(Field):
    """Field given by cell-center samples.

    Scalar samples have shape ``(size,)`` (stationary) or ``(n_steps + 1,
    size)`` (space-time). Vector samples have shape ``(size, dim)``.
    """

    def __init__(self, values, grid: Grid, vector: bool = False):
        v = np.asarray(values, dtype=float)
        nt = grid.n_steps + 1
        if vector:
            v = v.reshape(grid.size, grid.dim)
            self.spacetime_samples = False
        elif v.shape == (nt, grid.size) or v.shape == (nt, *grid.shape):
            v = v.reshape(nt, grid.size)
            self.spacetime_samples = True
        elif v.size == grid.size:
            v = v.reshape(grid.size)
            self.spacetime_samples = False
        else:
            raise ValueError(f"samples of shape {v.shape} do not match grid {grid.shape}")
        self.values = v
        self.grid = grid
        self.dim = grid.dim
        self.vector = vector
        self.smooth = False

    def __repr__(self):
        return f"SampledField(shape={self.values.shape}, vector={self.vector})"

    @property
    def time_dependent(self) -> bool:
        return self.spacetime_samples

    def on_cells(self, grid: Grid, t=0.0) -> np.ndarray:
        if grid == self.grid:
            if not self.spacetime_samples:
                return self.values.copy()
            k = t / grid.dt
            if abs(k - round(k)) < 1e-9:
                return self.values[int(round(k))].copy()
        return self.at(grid.cell_centers, t)

    def _interp_space(self, cell_values, points):
        from scipy.interpolate import RegularGridInterpolator

        g = self.grid
        axes = [g.axis_centers(k) for k in range(g.dim)]
        arr = cell_values.reshape(g.shape)
        # nearest extension from the outermost cell centers up to the boundary
        q = np.clip(points, [a[0] for a in axes], [a[-1] for a in axes])
        return RegularGridInterpolator(axes, arr, method="linear")(q)

    def at(self, points, t=0.0, normals=None) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.vector:
            return np.stack([self._interp_space(self.values[:, k], p) for k in range(self.dim)], axis=-1)
        if not self.spacetime_samples:
            return self._interp_space(self.values, p)
        tt = np.broadcast_to(np.asarray(t, float), (len(p),))
        if np.all(tt == tt[0]):
            k = np.clip(tt[0] / self.grid.dt, 0, self.grid.n_steps)
            k0 = int(np.floor(k))
            k1 = min(k0 + 1, self.grid.n_steps)
            w = k - k0
            v0 = self._interp_space(self.values[k0], p)
            return v0 if w == 0 else (1 - w) * v0 + w * self._interp_space(self.values[k1], p)
        return np.array([self.at(p[i : i + 1], tt[i])[0] for i in range(len(p))])

    def _field(self, arr, vector=False):
        return SampledField(arr, self.grid, vector=vector)

    def gradient(self) -> "SampledField":
        if self.vector or self.spacetime_samples:
            raise ValueError("gradient needs a stationary scalar field")
        return self._field(np.stack(_grad(self.values, self.grid), axis=-1), vector=True)

    def divergence(self) -> "SampledField":
        if not self.vector:
            raise ValueError("divergence needs a vector field")
        comps = [_grad(self.values[:, k], self.grid)[k] for k in range(self.dim)]
        return self._field(np.sum(comps, axis=0))

    def laplacian(self) -> "SampledField":
        if self.vector or self.spacetime_samples:
            raise ValueError("laplacian needs a stationary scalar field")
        return self._field(_second_diff_sum(self.values, self.grid))

    def hessian(self) -> list["SampledField"]:
        g = _grad(self.values, self.grid)
        out = []
        for i in range(self.dim):
            gi = _grad(g[i], self.grid)
            for j in range(i, self.dim):
                out.append(self._field(gi[j]))
        return out


def _grad(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    arr = values.reshape(grid.shape)
    parts = np.gradient(arr, *grid.h, edge_order=2)
    if grid.dim == 1:
        parts = [parts]
    return [p.ravel() for p in parts]


def _second_diff_sum(values: np.ndarray, grid: Grid) -> np.ndarray:
    arr = values.reshape(grid.shape)
    out = np.zeros_like(arr)
    for k in range(grid.dim):
        a = np.moveaxis(arr, k, 0)
        d = np.empty_like(a)
        d[1:-1] = a[2:] - 2 * a[1:-1] + a[:-2]
        if a.shape[0] >= 4:
            d[0] = 2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]
            d[-1] = 2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]
        else:
            d[0], d[-1] = d[1], d[-2]
        out += np.moveaxis(d, 0, k) / grid.h[k] ** 2
    return out.ravel()


def parse_field(text, dim: int, vector: bool | None = None, smooth: bool = True) -> ExprField:
    """Build an expression-backed field from config text or a number."""
    if isinstance(text, Field):
        return text
    if isinstance(text, (int, float)):
        text = repr(float(text))
    exprs = parse_expression(text)
    if vector and len(exprs) == 1 and dim > 1:
        raise ExpressionError(f"vector field {text!r} needs {dim} components")
    return ExprField(exprs, dim, vector=vector if vector is not None else len(exprs) > 1 or None, smooth=smooth, text=str(text))


def constant(value, dim: int) -> ExprField:
    if np.ndim(value) == 0:
        return ExprField([sp.nsimplify(float(value))], dim, vector=False)
    return ExprField([sp.nsimplify(float(v)) for v in value], dim, vector=True)


def evaluate(field: Field, points, grid: Grid | None = None, t=0.0) -> np.ndarray:
    """Evaluate ``field`` at ``points``, checking they lie in the closed domain."""
    p = np.asarray(points, float)
    if grid is not None:
        inside = grid.contains(p.reshape(-1, grid.dim), tol=1e-12)
        if not np.all(inside):
            bad = p.reshape(-1, grid.dim)[np.flatnonzero(~inside)[0]]
            raise DomainError(f"point {bad.tolist()} lies outside the domain")
        tt = np.atleast_1d(np.asarray(t, float))
        if np.any(tt < -1e-12) or np.any(tt > grid.T * (1 + 1e-12)):
            raise DomainError(f"time {t} outside [0, {grid.T}]")
    return field.at(p, t)


def gradient(field: Field) -> Field:
    return field.gradient()


def divergence(field: Field) -> Field:
    return field.divergence()


def laplacian(field: Field) -> Field:
    return field.laplacian()


def fd_consistency(field: ExprField, grid: Grid) -> float:
    """Max interior gap between symbolic and finite-difference gradients."""
    sampled = SampledField(field.on_cells(grid), grid)
    sym = field.gradient().on_cells(grid)
    fd = sampled.gradient().values
    interior = _interior_mask(grid)
    return float(np.max(np.abs(sym - fd)[interior]))


def _interior_mask(grid: Grid, width: int = 1) -> np.ndarray:
    m = np.ones(grid.shape, bool)
    for k in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[k] = slice(0, width)
        m[tuple(sl)] = False
        sl[k] = slice(-width, None)
        m[tuple(sl)] = False
    return m.ravel()


def c2_norm(field: Field, grid: Grid) -> float:
    """Grid version of ``sum_{|alpha| <= 2} sup |d^alpha u|`` over the vertices.

    Expression-backed fields are differentiated exactly; sampled fields use
    cell values and finite differences.
    """
    if isinstance(field, ExprField):
        pts = grid.vertices
        total = float(np.max(np.abs(field.at(pts))))
        g = field.gradient().at(pts).reshape(len(pts), grid.dim)
        total += float(np.sum(np.max(np.abs(g), axis=0)))
        total += sum(float(np.max(np.abs(hf.at(pts)))) for hf in field.hessian())
        return total
    vals = field.on_cells(grid)
    total = float(np.max(np.abs(vals)))
    s = SampledField(vals, grid)
    total += float(np.sum(np.max(np.abs(s.gradient().values), axis=0)))
    total += sum(float(np.max(np.abs(hf.values))) for hf in s.hessian())
    return total
