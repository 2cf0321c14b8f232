"""
Finite differences for mean exit time and escape probability.

The generator is discretised on a uniform tensor grid over a box ``D`` extended
by an exterior band wide enough to hold every jump target (``sigma2_i * c`` per
axis). Unknowns live on interior nodes; all other nodes carry exterior data.

Local part, per axis: ``b_i d/dx_i + a_ii/2 d^2/dx_i^2`` with central
differences, switching to one-sided drift differences where the cell Peclet
number exceeds one (``a_ii < |b_i| h``) so the scheme stays monotone when the
diffusion degenerates.

Jump part, per axis, after substituting ``w = sigma2 * y``::

    C_alpha sigma2^alpha int_0^W [f(x+w) + f(x-w) - 2 f(x)] / w^(1+alpha) dw,   W = sigma2 c

The bracket divided by ``w^2`` is interpolated piecewise linearly between grid
offsets ``w = jh`` (held at its ``j=1`` value on ``(0, h)``) and integrated
exactly against ``w^(1-alpha)``. The ``(0, h)`` cell reproduces the usual
``f''_h h^(2-alpha) / (2-alpha)`` correction, and ``f = x^2`` is integrated
without error.
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .stoch_sim import c_alpha

logger = logging.getLogger(__name__)

DEFAULT_NODES = {1: 400, 2: 100}


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Domain:
    """Open box ``D`` and an escape target.

    ``target`` selects the part of the complement where escape counts:
    ``'right'`` (``x_1 >= hi_1``), ``'left'`` (``x_1 <= lo_1``), ``'all'`` or a
    callable mapping an ``(P, d)`` array of exterior points to booleans. For
    Brownian models only boundary nodes are exterior, so ``'right'`` means the
    right edge.
    """
    bounds: tuple
    target: object = "right"

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in np.asarray(self.bounds, dtype=float).reshape(-1, 2))
        for lo, hi in b:
            if not lo < hi:
                raise ValueError(f"empty interval ({lo}, {hi})")
        object.__setattr__(self, "bounds", b)
        if not callable(self.target) and self.target not in ("right", "left", "all"):
            raise ValueError(f"unknown target {self.target!r}")

    @property
    def dim(self):
        return len(self.bounds)

    def in_target(self, points):
        points = np.atleast_2d(points)
        if callable(self.target):
            return np.asarray(self.target(points), dtype=bool)
        if self.target == "all":
            return np.ones(points.shape[0], dtype=bool)
        lo, hi = self.bounds[0]
        tol = 1e-12 * max(1.0, abs(hi - lo))
        if self.target == "right":
            return points[:, 0] >= hi - tol
        return points[:, 0] <= lo + tol


@dataclass(frozen=True)
class Grid:
    """``n[i]`` interior nodes per axis, spacing ``(hi - lo) / (n + 1)``.

    ``band`` optionally fixes the exterior band width per axis; by default it is
    sized from the model's jump range.
    """
    n: tuple
    band: tuple | None = None

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        if any(k < 1 for k in n):
            raise ValueError("need at least one interior node per axis")
        object.__setattr__(self, "n", n)
        if self.band is not None:
            object.__setattr__(self, "band", tuple(float(w) for w in np.atleast_1d(self.band)))

    def spacing(self, domain):
        return np.array([(hi - lo) / (k + 1) for (lo, hi), k in zip(domain.bounds, self.n)])


def default_grid(dim):
    return Grid((DEFAULT_NODES.get(dim, 50),) * dim)


def _jump_reach(model):
    d = model.dim
    if getattr(model, "levy", None) is None:
        return np.zeros(d)
    return np.asarray(model.sigma2, dtype=float) * float(model.c)


def jump_weights(h, W, alpha):
    """Weights ``omega_j`` (``j = 1..J+1``) of ``int_0^W w^(1-alpha) g(w) dw`` for
    ``g`` interpolated from its values at ``w = jh``."""
    if W <= 0:
        return np.zeros(0)
    J = int(np.floor(W / h + 1e-9))
    omega = np.zeros(J + 2)  # index j, slot 0 unused
    p0, p1 = 2.0 - alpha, 3.0 - alpha
    first = min(h, W)
    omega[1] += first ** p0 / p0
    for j in range(1, J + 1):
        a, b = j * h, min((j + 1) * h, W)
        if b <= a:
            continue
        I0 = (b ** p0 - a ** p0) / p0
        I1 = (b ** p1 - a ** p1) / p1
        omega[j] += ((j + 1) * h * I0 - I1) / h
        omega[j + 1] += (I1 - j * h * I0) / h
    return omega[1:]


@dataclass
class AssembledGenerator:
    """Discrete generator on the extended grid.

    ``full`` has one row per interior node and one column per extended-grid node
    (C order over ``shape``). ``nodes`` are the coordinates of all extended nodes.
    """
    domain: Domain
    grid: Grid
    h: np.ndarray
    shape: tuple
    offset: np.ndarray
    nodes: np.ndarray
    interior: np.ndarray
    full: sp.csr_matrix
    mode: str
    info: dict = field(default_factory=dict)

    @property
    def interior_matrix(self):
        return self.full[:, self.interior]

    @property
    def exterior_matrix(self):
        return self.full[:, ~self.interior]

    def apply(self, f):
        """Generator applied to ``f`` (callable on points or array over all nodes)."""
        vals = f(self.nodes) if callable(f) else np.asarray(f, dtype=float)
        return self.full @ vals


def assemble_generator(model, domain, grid=None):
    """Build the discrete generator of ``model`` on ``domain``.

    ``model`` needs ``dim``, ``drift_at``, ``diffusion_at`` and, for jump noise,
    ``levy`` (with ``alpha``), ``sigma2`` and ``c``. Negative diffusion values
    (possible for learned polynomials) are clipped to zero.
    """
    d = domain.dim
    if model.dim != d:
        raise ValueError(f"model dim {model.dim} does not match domain dim {d}")
    grid = grid or default_grid(d)
    if len(grid.n) != d:
        raise ValueError("grid and domain dimensions differ")
    h = grid.spacing(domain)
    reach = _jump_reach(model)
    if grid.band is not None:
        band = np.broadcast_to(np.asarray(grid.band, dtype=float), (d,))
        if np.any(reach > band + 1e-12):
            raise ValueError(f"jump reach {reach.tolist()} exceeds the exterior band {band.tolist()}")
    J = np.array([int(np.floor(w / hh + 1e-9)) if w > 0 else 0 for w, hh in zip(reach, h)])
    n = np.array(grid.n)
    shape = tuple(int(k) for k in n + 2 + 2 * J)
    offset = J.copy()  # array index = grid index k + offset, k = -J..n+1+J
    axes = [lo + (np.arange(s) - off) * hh for (lo, _), s, off, hh in zip(domain.bounds, shape, offset, h)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    ks = np.meshgrid(*[np.arange(s) - off for s, off in zip(shape, offset)], indexing="ij")
    interior = np.ones(nodes.shape[0], dtype=bool)
    for k, nn in zip(ks, n):
        interior &= ((k >= 1) & (k <= nn)).ravel()

    int_idx = np.flatnonzero(interior)
    row_of = np.arange(int_idx.size)
    int_multi = np.unravel_index(int_idx, shape)
    pts = nodes[int_idx]
    b = model.drift_at(pts)
    a = model.diffusion_at(pts)
    neg = a < 0
    if np.any(neg):
        logger.warning("clipping %d negative diffusion values (min %.3g)", int(neg.sum()), float(a.min()))
        a = np.where(neg, 0.0, a)

    rows, cols, vals = [], [], []

    def add(axis, shift, coef):
        m = list(int_multi)
        m[axis] = m[axis] + shift
        rows.append(row_of)
        cols.append(np.ravel_multi_index(tuple(m), shape))
        vals.append(coef)

    diag = np.zeros(int_idx.size)
    n_upwind = 0
    mode = "local"
    for i in range(d):
        hi_ = h[i]
        bi, ai = b[:, i], a[:, i]
        central = ai >= np.abs(bi) * hi_
        n_upwind += int((~central).sum())
        plus = ai / (2 * hi_ ** 2) + np.where(central, bi / (2 * hi_), np.maximum(bi, 0.0) / hi_)
        minus = ai / (2 * hi_ ** 2) + np.where(central, -bi / (2 * hi_), np.maximum(-bi, 0.0) / hi_)
        add(i, 1, plus)
        add(i, -1, minus)
        diag -= plus + minus
        if reach[i] > 0:
            mode = "nonlocal"
            alpha = model.levy.alpha
            sig = float(model.sigma2[i])
            omega = jump_weights(hi_, reach[i], alpha)
            pref = c_alpha(alpha) * sig ** alpha
            for j, w in enumerate(omega, start=1):
                if w == 0.0:
                    continue
                kj = np.full(int_idx.size, pref * w / (j * hi_) ** 2)
                add(i, j, kj)
                add(i, -j, kj)
                diag -= 2 * kj
    rows.append(row_of)
    cols.append(int_idx)
    vals.append(diag)
    full = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(int_idx.size, nodes.shape[0]),
    )
    full.sum_duplicates()
    info = {"h": h.tolist(), "band_nodes": J.tolist(), "upwind_nodes": n_upwind}
    return AssembledGenerator(domain, grid, h, shape, offset, nodes, interior, full, mode, info)


@dataclass
class ScalarField:
    """Solution values on the extended grid of an :class:`AssembledGenerator`."""
    kind: str
    values: np.ndarray
    nodes: np.ndarray
    interior: np.ndarray
    shape: tuple
    h: np.ndarray
    n: tuple
    domain: Domain
    info: dict = field(default_factory=dict)

    @property
    def interior_nodes(self):
        return self.nodes[self.interior]

    @property
    def interior_values(self):
        return self.values[self.interior]

    def interior_grid(self):
        """Interior values reshaped to the ``n`` tensor shape."""
        return self.interior_values.reshape(self.n)

    def axes(self):
        return [lo + np.arange(1, k + 1) * hh for (lo, _), k, hh in zip(self.domain.bounds, self.n, self.h)]

    def __call__(self, points):
        """Multilinear interpolation of the interior solution (with zero boundary frame for MET)."""
        from scipy.interpolate import RegularGridInterpolator
        interp = RegularGridInterpolator(self.axes(), self.interior_grid(), bounds_error=False, fill_value=None)
        return interp(np.atleast_2d(points))

    def to_csv(self, path):
        pts = self.interior_nodes
        names = ["x", "y", "z"][: pts.shape[1]] if pts.shape[1] <= 3 else [f"x{i + 1}" for i in range(pts.shape[1])]
        header = ",".join(names + [self.kind])
        np.savetxt(path, np.column_stack([pts, self.interior_values]), delimiter=",",
                   header=header, comments="", fmt="%.12e")

    @staticmethod
    def read_csv(path):
        """Return ``(coords, values, kind)`` from a field CSV."""
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, :-1], data[:, -1], header[-1]


def _exterior_data(gen, kind):
    ext = ~gen.interior
    if kind == "met":
        return np.zeros(int(ext.sum()))
    return gen.domain.in_target(gen.nodes[ext]).astype(float)


DENSE_LIMIT = 12000


class _LinearSolver:
    """Factorise once, solve for several right-hand sides.

    Sparse LU for local or small systems; nonlocal rows in 2-D couple whole grid
    lines, where SuperLU fills in badly, so mid-size systems use dense LU and
    large ones ILU-preconditioned GMRES.
    """

    def __init__(self, A, nonlocal_2d=False, tol=1e-10):
        A = sp.csc_matrix(A)
        zero_rows = np.flatnonzero(np.abs(A).sum(axis=1).A1 == 0)
        if zero_rows.size:
            raise SolverError(f"singular system: {zero_rows.size} rows without coupling "
                              "(diffusion and drift both vanish on a node); shift the grid")
        self.A, self.tol = A, tol
        n = A.shape[0]
        try:
            if nonlocal_2d and n <= DENSE_LIMIT:
                self.method = "dense-lu"
                lu = scipy.linalg.lu_factor(A.toarray(), overwrite_a=True, check_finite=False)
                self._solve = lambda b: scipy.linalg.lu_solve(lu, b, check_finite=False)
            elif nonlocal_2d:
                self.method = "ilu-gmres"
                ilu = spla.spilu(A, drop_tol=1e-4, fill_factor=10)
                self._M = spla.LinearOperator(A.shape, ilu.solve)
                self._solve = self._gmres
            else:
                self.method = "sparse-lu"
                self._solve = spla.splu(A).solve
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"factorisation failed: {exc}; condition estimate "
                              f"{self.condition_estimate():.2e}") from exc

    def _gmres(self, b):
        u, status = spla.gmres(self.A, b, M=self._M, rtol=self.tol, atol=0.0, restart=100, maxiter=1000)
        if status != 0:
            raise SolverError(f"GMRES did not converge (status {status})")
        return u

    def condition_estimate(self):
        try:
            return float(spla.onenormest(self.A) * spla.onenormest(spla.inv(self.A)))
        except Exception:  # noqa: BLE001 - diagnostic only
            return float("nan")

    def solve(self, rhs):
        u = self._solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SolverError("non-finite solution; system is numerically singular")
        rel = np.linalg.norm(self.A @ u - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if rel > 1e-6:
            raise SolverError(f"solve residual {rel:.2e} too large (condition estimate "
                              f"{self.condition_estimate():.2e})")
        return u, float(rel)


def _rhs(gen, kind):
    g = _exterior_data(gen, kind)
    rhs = -gen.exterior_matrix @ g
    if kind == "met":
        rhs = rhs - 1.0
    return g, rhs


def _field(gen, solver, kind, check=True):
    g, rhs = _rhs(gen, kind)
    u_int, rel = solver.solve(rhs)
    values = np.empty(gen.nodes.shape[0])
    values[gen.interior] = u_int
    values[~gen.interior] = g
    info = dict(gen.info, residual=rel, scheme=gen.mode, solver=solver.method)
    out = ScalarField(kind, values, gen.nodes, gen.interior, gen.shape, gen.h, gen.grid.n, gen.domain, info)
    if check:
        check_maximum_principle(out)
    return out


def _solver_for(gen):
    return _LinearSolver(gen.interior_matrix, nonlocal_2d=gen.mode == "nonlocal" and gen.domain.dim > 1)


def check_maximum_principle(field_, tol=1e-8):
    v = field_.values
    if field_.kind == "met" and v.min() < -tol:
        raise SolverError(f"mean exit time has negative values (min {v.min():.3g})")
    if field_.kind == "ep" and (v.min() < -tol or v.max() > 1 + tol):
        raise SolverError(f"escape probability outside [0, 1] (range {v.min():.3g}..{v.max():.3g})")


def solve_met(model, domain, grid=None):
    """Mean exit time: generator ``u = -1`` in ``D``, ``u = 0`` outside."""
    gen = assemble_generator(model, domain, grid)
    return _field(gen, _solver_for(gen), "met")


def solve_ep(model, domain, grid=None):
    """Escape probability to ``domain.target``: generator ``p = 0`` in ``D``, ``p`` = indicator outside."""
    gen = assemble_generator(model, domain, grid)
    return _field(gen, _solver_for(gen), "ep")


def solve_met_ep(model, domain, grid=None):
    """Both fields from a single assembly and factorisation."""
    gen = assemble_generator(model, domain, grid)
    solver = _solver_for(gen)
    return _field(gen, solver, "met"), _field(gen, solver, "ep")


def field_error(f1, f2):
    """Mean and max absolute difference over interior nodes (grids must match)."""
    c1 = f1.interior_nodes if isinstance(f1, ScalarField) else np.asarray(f1[0])
    c2 = f2.interior_nodes if isinstance(f2, ScalarField) else np.asarray(f2[0])
    v1 = f1.interior_values if isinstance(f1, ScalarField) else np.asarray(f1[1])
    v2 = f2.interior_values if isinstance(f2, ScalarField) else np.asarray(f2[1])
    if c1.shape != c2.shape or not np.allclose(c1, c2, rtol=0, atol=1e-9):
        raise ValueError("fields live on different grids")
    diff = np.abs(v1 - v2)
    return {"mean_abs": float(diff.mean()), "max_abs": float(diff.max())}


def write_svg(path, fields, labels=None, title=""):
    """Line plot (1-D fields, overlaid) or heatmap (a single 2-D field) as standalone SVG."""
    fields = list(fields) if isinstance(fields, (list, tuple)) else [fields]
    labels = labels or [f.kind for f in fields]
    W, H, pad = 480, 360, 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>']
    f0 = fields[0]
    if f0.domain.dim == 1:
        xs = [f.interior_nodes[:, 0] for f in fields]
        ys = [f.interior_values for f in fields]
        xlo, xhi = f0.domain.bounds[0]
        ylo = min(0.0, min(float(y.min()) for y in ys))
        yhi = max(float(y.max()) for y in ys) or 1.0

        def sx(x):
            return pad + (x - xlo) / (xhi - xlo) * (W - 2 * pad)

        def sy(y):
            return H - pad - (y - ylo) / (yhi - ylo) * (H - 2 * pad)

        out.append(f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>')
        colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
        dashes = ["", ' stroke-dasharray="6,4"', ' stroke-dasharray="2,2"', ""]
        for k, (x, y) in enumerate(zip(xs, ys)):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{colors[k % 4]}" stroke-width="1.5"{dashes[k % 4]}/>')
            out.append(f'<text x="{W - pad - 100}" y="{pad + 15 + 15 * k}" fill="{colors[k % 4]}">{labels[k]}</text>')
        out.append(f'<text x="{pad}" y="{H - pad + 15}">{xlo:g}</text>')
        out.append(f'<text x="{W - pad}" y="{H - pad + 15}" text-anchor="end">{xhi:g}</text>')
        out.append(f'<text x="{pad - 5}" y="{pad}" text-anchor="end">{yhi:.3g}</text>')
        out.append(f'<text x="{pad - 5}" y="{H - pad}" text-anchor="end">{ylo:.3g}</text>')
    else:
        vals = f0.interior_grid()
        nx, ny = vals.shape[:2]
        vmin, vmax = float(vals.min()), float(vals.max())
        span = (vmax - vmin) or 1.0
        cw, ch = (W - 2 * pad) / nx, (H - 2 * pad) / ny
        for i in range(nx):
            for j in range(ny):
                t = (vals[i, j] - vmin) / span
                r, g, bl = int(255 * t), int(255 * (1 - abs(2 * t - 1))), int(255 * (1 - t))
                out.append(f'<rect x="{pad + i * cw:.2f}" y="{H - pad - (j + 1) * ch:.2f}" '
                           f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb({r},{g},{bl})"/>')
        out.append(f'<text x="{pad}" y="{H - pad + 15}">min {vmin:.3g}, max {vmax:.3g}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
