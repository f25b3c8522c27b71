"""Independent reference solutions.

* a finite-volume solver on a rectilinear voxel grid (transient BDF2,
  harmonic and steady), sharing no code with the boundary element modules;
* the one-dimensional two-layer harmonic slab in closed form;
* the series solution of a homogeneous slab after a step on one face;
* direct volume quadrature of the dual-reciprocity domain integral;
* probe comparison with relative L-infinity and L2 discrepancies.
"""
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla



class OracleResolutionError(ValueError):
    """Raised when the grid does not resolve the inclusions well enough."""


# ---------------------------------------------------------------------------
# volume quadrature of the dual-reciprocity domain integral


def _gauss01(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def _pyramid_rule(apex, lo, hi, n):
    """Points and weights on a box with a corner at ``apex``, singular there."""
    far = np.where(np.isclose(apex, lo), hi, lo)
    span = far - apex
    t, w = _gauss01(n)
    s, u, v = np.meshgrid(t, t, t, indexing="ij")
    ws = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    s, u, v = s.ravel(), u.ravel(), v.ravel()
    pts, wts = [], []
    vol = abs(np.prod(span))
    for axis in range(3):
        rel = np.empty((len(s), 3))
        others = [a for a in range(3) if a != axis]
        rel[:, axis] = 1.0
        rel[:, others[0]] = u
        rel[:, others[1]] = v
        pts.append(apex + s[:, None] * rel * span)
        wts.append(ws * s * s * vol)
    return np.concatenate(pts), np.concatenate(wts)


def _box_rule(lo, hi, x, n, ratio=0.5, depth=0):
    size = np.linalg.norm(hi - lo)
    dist = np.linalg.norm(np.maximum(np.maximum(lo - x, x - hi), 0.0))
    t, w = _gauss01(n)
    if size <= ratio * dist or depth > 8:
        g = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
        ws = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        return lo + g * (hi - lo), ws * np.prod(hi - lo)
    mid = 0.5 * (lo + hi)
    pts, wts = [], []
    for corner in np.ndindex(2, 2, 2):
        c = np.array(corner)
        a = np.where(c == 0, lo, mid)
        b = np.where(c == 0, mid, hi)
        p, q = _box_rule(a, b, x, n, ratio, depth + 1)
        pts.append(p)
        wts.append(q)
    return np.concatenate(pts), np.concatenate(wts)


def drm_volume_oracle(x, xm, scenario, ell, n=20):
    """Direct quadrature of ``sum_layers C int G(x, x') chi(x', x^m) dV'``.

    The box is cut at the interface and at the coordinates of ``x`` and
    ``x^m``; sub-boxes with ``x`` (or ``x^m``) at a corner use three
    Duffy pyramids, which cancel the 1/r singularity (or the cusp of chi).
    """
    from .kernels import greens

    x = np.asarray(x, dtype=float)
    xm = np.asarray(xm, dtype=float)
    b = scenario.bounds
    cuts = [np.unique(np.clip([b[d, 0], b[d, 1], x[d], xm[d]] + ([0.0] if d == 2 else []), b[d, 0], b[d, 1]))
            for d in range(3)]
    total = 0.0
    ku, kl = scenario.upper.conductivity, scenario.lower.conductivity
    for i in range(len(cuts[0]) - 1):
        for j in range(len(cuts[1]) - 1):
            for k in range(len(cuts[2]) - 1):
                lo = np.array([cuts[0][i], cuts[1][j], cuts[2][k]])
                hi = np.array([cuts[0][i + 1], cuts[1][j + 1], cuts[2][k + 1]])
                if np.any(hi - lo <= 0):
                    continue
                upper = 0.5 * (lo[2] + hi[2]) > 0
                cap = scenario.upper.capacity if upper else scenario.lower.capacity
                corners_x = np.all(np.isclose(x, lo) | np.isclose(x, hi))
                corners_m = np.all(np.isclose(xm, lo) | np.isclose(xm, hi))
                if corners_x:
                    pts, wts = _pyramid_rule(x, lo, hi, n)
                elif corners_m:
                    pts, wts = _pyramid_rule(xm, lo, hi, n)
                else:
                    pts, wts = _box_rule(lo, hi, x, max(6, n // 2))
                r = np.linalg.norm(pts - xm, axis=1) / ell
                chi = 1.0 + r + r * r
                g = greens(np.broadcast_to(x, pts.shape), pts, ku, kl,
                           field_upper=x[2] >= 0, src_upper=np.full(len(pts), upper))
                total += cap * np.sum(wts * g * chi)
    return total


def eshelby_quadrature_oracle(x, center, semi_axes, k_upper, k_lower, field_upper=None, tol=1e-9):
    """Direct volume quadrature of the Eshelby integrals at one field point.

    Returns ``(D, L)`` with shapes (3, 10) and (10,): ``L_rho = int G rho``
    and ``D_i,rho = int K^s dG/dx'_i rho`` over the ellipsoid, for the ten
    densities 1, y_p, y_p y_q (y = x' - centre).
    """
    from .kernels import greens_derivs
    from .potentials import DENSITIES, ellipsoid_integral

    x = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float)
    src_upper = c[2] > 0
    ks = k_upper if src_upper else k_lower
    fu = x[2] >= 0 if field_upper is None else bool(field_upper)

    def f(xp):
        y = xp - c
        rho = np.stack([np.prod(y[:, list(d)], axis=-1) if d else np.ones(len(y)) for d in DENSITIES], axis=-1)
        ev = greens_derivs(np.broadcast_to(x, xp.shape), xp, k_upper, k_lower, 0, fu, np.full(len(xp), src_upper))
        d = ks * ev.g_src[0][:, :, None] * rho[:, None, :]
        return np.concatenate([d.reshape(len(xp), -1), ev.g[0][:, None] * rho], axis=1)

    val = ellipsoid_integral(x, c, semi_axes, f, tol=tol)
    return val[:30].reshape(3, 10), val[30:]


# ---------------------------------------------------------------------------
# finite-volume reference solver


_AXIS = {"x_min": (0, 0), "x_max": (0, 1), "y_min": (1, 0), "y_max": (1, 1), "bottom": (2, 0), "top": (2, 1)}


def graded_edges(lo, hi, h, fine=(), growth=1.25):
    """Cell edges on [lo, hi] with spacing ``h``, refined to ``hf`` on each ``(a, b, hf)``.

    Spacing grows geometrically by ``growth`` away from fine intervals.
    """
    x = [lo]
    while x[-1] < hi - 1e-12 * (hi - lo):
        p = x[-1]
        step = h
        for a, b, hf in fine:
            d = max(a - p, p - b, 0.0)
            step = min(step, hf * growth ** max(d / hf, 0.0) if d > 0 else hf)
            step = min(step, hf + (growth - 1.0) * d)
        step = min(step, hi - p)
        if hi - (p + step) < 0.3 * step:
            step = hi - p
        x.append(p + step)
    return np.array(x)


@dataclass
class FdGrid:
    """Rectilinear voxel grid with per-cell conductivity and capacity."""

    edges: tuple
    K: np.ndarray
    C: np.ndarray
    scenario: object

    @property
    def shape(self):
        return self.K.shape

    @property
    def centers(self):
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def widths(self):
        return tuple(np.diff(e) for e in self.edges)


def build_fd_grid(scenario, inclusions=(), h=None, fine=None, subsample=4, min_cells_per_diameter=6, region=None):
    """Voxelize the box; cells cut by an inclusion get volume-fraction-weighted properties.

    Parameters
    ----------
    h : float or (3,) sequence
        Background spacing.
    fine : list of (axis, a, b, hf), optional
        Refinement intervals.
    region : (3, 2) array, optional
        Sub-box to grid instead of the full box, e.g. a symmetric quarter.
        Its faces take the conditions of the box faces they face, so cut
        planes must be planes of symmetry with adiabatic lateral faces.
    """
    b = scenario.bounds if region is None else np.asarray(region, dtype=float)
    h = np.broadcast_to(np.asarray(h if h is not None else scenario.length_scale / 20, dtype=float), (3,))
    fine = fine or []
    edges = []
    for d in range(3):
        f = [(a, bb, hf) for ax, a, bb, hf in fine if ax == d]
        if d == 2:
            lower = graded_edges(b[2, 0], 0.0, h[2], f)
            upper = graded_edges(0.0, b[2, 1], h[2], f)
            edges.append(np.concatenate([lower, upper[1:]]))
        else:
            edges.append(graded_edges(b[d, 0], b[d, 1], h[d], f))
    cz = 0.5 * (edges[2][1:] + edges[2][:-1])
    shape = tuple(len(e) - 1 for e in edges)
    up = np.broadcast_to(cz > 0, shape)
    K = np.where(up, scenario.upper.conductivity, scenario.lower.conductivity).astype(float)
    C = np.where(up, scenario.upper.capacity, scenario.lower.capacity).astype(float)
    s = (np.arange(subsample) + 0.5) / subsample
    for n, inc in enumerate(inclusions):
        c = np.asarray(inc.center)
        if np.any(c + np.asarray(inc.semi_axes) < b[:, 0]) or np.any(c - np.asarray(inc.semi_axes) > b[:, 1]):
            continue
        a = np.asarray(inc.semi_axes)
        ranges = []
        for d in range(3):
            e = edges[d]
            i0 = max(np.searchsorted(e, c[d] - a[d]) - 1, 0)
            i1 = min(np.searchsorted(e, c[d] + a[d]), len(e) - 1)
            ranges.append((i0, i1))
            hmax = np.diff(e[i0:i1 + 1]).max()
            if 2 * a[d] / hmax < min_cells_per_diameter:
                raise OracleResolutionError(
                    f"inclusion {n}: {2 * a[d] / hmax:.1f} cells across axis {d}, need {min_cells_per_diameter}")
        sub = []
        for d in range(3):
            i0, i1 = ranges[d]
            lo = edges[d][i0:i1]
            w = np.diff(edges[d][i0:i1 + 1])
            sub.append(lo[:, None] + w[:, None] * s[None, :])
        X = sub[0][:, None, None, :, None, None]
        Y = sub[1][None, :, None, None, :, None]
        Z = sub[2][None, None, :, None, None, :]
        inside = ((X - c[0]) / a[0]) ** 2 + ((Y - c[1]) / a[1]) ** 2 + ((Z - c[2]) / a[2]) ** 2 <= 1.0
        frac = inside.mean(axis=(3, 4, 5))
        sl = tuple(slice(r[0], r[1]) for r in ranges)
        K[sl] = frac * inc.props.conductivity + (1 - frac) * K[sl]
        C[sl] = frac * inc.props.capacity + (1 - frac) * C[sl]
    return FdGrid(tuple(edges), K, C, scenario)


def _fd_operator(grid):
    """Conductance matrix L (heat out of each cell per unit temperature) and boundary data maps."""
    nx, ny, nz = grid.shape
    N = nx * ny * nz
    idx = np.arange(N).reshape(grid.shape)
    w = grid.widths
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    bnd = {}
    for d in range(3):
        area = np.ones(grid.shape)
        for e in range(3):
            if e != d:
                area = area * w[e].reshape([-1 if k == e else 1 for k in range(3)])
        half = (0.5 * w[d]).reshape([-1 if k == d else 1 for k in range(3)]) / grid.K
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        T = area[lo] / (half[lo] + half[hi])
        a, b = idx[lo].ravel(), idx[hi].ravel()
        t = T.ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [-t, -t]
        np.add.at(diag, a, t)
        np.add.at(diag, b, t)
        for side in (0, 1):
            s = [slice(None)] * 3
            s[d] = slice(0, 1) if side == 0 else slice(-1, None)
            s = tuple(s)
            bnd[(d, side)] = (idx[s].ravel(), (area[s] / half[s]).ravel(), area[s].ravel())
    L = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return L, diag, bnd


def _face_points(grid, d, side):
    c = list(grid.centers)
    c[d] = np.array([grid.edges[d][0] if side == 0 else grid.edges[d][-1]])
    X, Y, Z = np.meshgrid(*c, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


class FdSolver:
    """Finite-volume solver; reuses factorizations per time factor."""

    def __init__(self, grid):
        self.grid = grid
        self.L, diag, self.bnd = _fd_operator(grid)
        sc = grid.scenario
        self.dir_diag = np.zeros_like(diag)
        for name, (d, side) in _AXIS.items():
            cells, tb, _area = self.bnd[(d, side)]
            if sc.bcs[name].kind == "dirichlet":
                np.add.at(self.dir_diag, cells, tb)
        self.L = (self.L + sparse.diags(diag + self.dir_diag)).tocsc()
        w = grid.widths
        self.vol = (w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :]).ravel()
        self.cap = self.vol * grid.C.ravel()
        self._lu = {}

    def load(self, when, mode):
        """Boundary contributions (Dirichlet conductance times value, Neumann flux times area)."""
        sc = self.grid.scenario
        dtype = complex if mode == "harmonic" else float
        b = np.zeros(self.L.shape[0], dtype=dtype)
        for name, (d, side) in _AXIS.items():
            cells, tb, area = self.bnd[(d, side)]
            bc = sc.bcs[name]
            pts = _face_points(self.grid, d, side)
            if mode == "harmonic":
                v = bc.phasor(pts)
            else:
                v = bc.values(pts, None if mode == "steady" else when)
                if bc.kind == "dirichlet":
                    v = v - sc.u0
            if bc.kind == "dirichlet":
                np.add.at(b, cells, tb * v)
            else:
                np.add.at(b, cells, area * v)
        return b

    def _factor(self, a):
        key = complex(a)
        if key not in self._lu:
            A = (self.L + sparse.diags(a * self.cap)).tocsc()
            self._lu[key] = spla.splu(A)
        return self._lu[key]

    def steady(self):
        return self._factor(0.0).solve(self.load(None, "steady"))

    def harmonic(self, omega):
        """Complex amplitudes for loads ``Re(A exp(-i omega t))``."""
        return self._factor(-1j * omega).solve(self.load(None, "harmonic"))

    def transient(self, dt, steps, t0=0.0, stations=None):
        """BDF2 march (first step backward Euler); returns {station: field}."""
        u_prev = np.zeros(self.L.shape[0])
        u_prev2 = u_prev
        keep = set(range(steps + 1)) if stations is None else set(stations)
        out = {0: u_prev.copy()} if 0 in keep else {}
        for n in range(1, steps + 1):
            t = t0 + n * dt
            if n == 1:
                rhs = self.load(t, "transient") + self.cap * u_prev / dt
                u = self._factor(1.0 / dt).solve(rhs)
            else:
                rhs = self.load(t, "transient") + self.cap * (4 * u_prev - u_prev2) / (2 * dt)
                u = self._factor(1.5 / dt).solve(rhs)
            u_prev2, u_prev = u_prev, u
            if n in keep:
                out[n] = u.copy()
        return out

    # -- probes -------------------------------------------------------------

    def probe(self, u, points, when=None, mode="transient"):
        """Temperature at points: multilinear in x1, x2 over centres, flux-consistent in x3."""
        g = self.grid
        U = np.asarray(u).reshape(g.shape)
        zc = g.centers[2]
        w3 = g.widths[2]
        K = g.K
        out = []
        for p in np.atleast_2d(points):
            ix, fx = _bracket(g.centers[0], p[0])
            iy, fy = _bracket(g.centers[1], p[1])
            col = np.zeros(len(zc), dtype=U.dtype)
            kcol = np.zeros(len(zc))
            for (i, wi) in ((ix, 1 - fx), (ix + 1, fx)):
                for (j, wj) in ((iy, 1 - fy), (iy + 1, fy)):
                    if wi * wj == 0:
                        continue
                    col = col + wi * wj * U[i, j]
                    kcol = kcol + wi * wj * K[i, j]
            zs, vs = _column_nodes(col, kcol, zc, w3, g.edges[2], self._end_values(p, when, mode, col, kcol, w3))
            out.append(np.interp(p[2], zs, vs.real) + (1j * np.interp(p[2], zs, vs.imag) if np.iscomplexobj(vs) else 0))
        return np.array(out)

    def probe_flux3(self, u, points, when=None, mode="transient"):
        """q3 = -K du/dx3 from face fluxes, linearly interpolated between faces."""
        g = self.grid
        U = np.asarray(u).reshape(g.shape)
        zc = g.centers[2]
        w3 = g.widths[2]
        out = []
        for p in np.atleast_2d(points):
            ix, fx = _bracket(g.centers[0], p[0])
            iy, fy = _bracket(g.centers[1], p[1])
            col = np.zeros(len(zc), dtype=U.dtype)
            kcol = np.zeros(len(zc))
            for (i, wi) in ((ix, 1 - fx), (ix + 1, fx)):
                for (j, wj) in ((iy, 1 - fy), (iy + 1, fy)):
                    if wi * wj == 0:
                        continue
                    col = col + wi * wj * U[i, j]
                    kcol = kcol + wi * wj * g.K[i, j]
            half = 0.5 * w3 / kcol
            q = -(col[1:] - col[:-1]) / (half[1:] + half[:-1])
            zf = g.edges[2][1:-1]
            out.append(np.interp(p[2], zf, q.real) + (1j * np.interp(p[2], zf, q.imag) if np.iscomplexobj(q) else 0))
        return np.array(out)

    def _end_values(self, p, when, mode, col, kcol, w3):
        sc = self.grid.scenario
        ends = []
        for name, k, sgn in (("bottom", 0, -1.0), ("top", -1, 1.0)):
            bc = sc.bcs[name]
            pt = np.array([[p[0], p[1], sc.bounds[2, 0 if k == 0 else 1]]])
            if mode == "harmonic":
                v = bc.phasor(pt)[0]
            else:
                v = bc.values(pt, None if mode == "steady" else when)[0]
                if bc.kind == "dirichlet":
                    v = v - sc.u0
            if bc.kind == "dirichlet":
                ends.append(v)
            else:
                # flux v enters the body: K du/dn = v across the half cell
                ends.append(col[k] + v * 0.5 * w3[k] / kcol[k])
        return ends


def _bracket(c, x):
    if x <= c[0]:
        return 0, 0.0
    if x >= c[-1]:
        return len(c) - 2 if len(c) > 1 else 0, 1.0 if len(c) > 1 else 0.0
    i = int(np.searchsorted(c, x) - 1)
    return i, (x - c[i]) / (c[i + 1] - c[i])


def _column_nodes(col, kcol, zc, w3, edges, ends):
    half = 0.5 * w3 / kcol
    face = (col[:-1] * half[1:] + col[1:] * half[:-1]) / (half[:-1] + half[1:])
    zs = np.empty(2 * len(zc) + 1)
    vs = np.empty(2 * len(zc) + 1, dtype=col.dtype)
    zs[0::2] = edges
    zs[1::2] = zc
    vs[1::2] = col
    vs[2:-1:2] = face
    vs[0], vs[-1] = ends
    return zs, vs


# ---------------------------------------------------------------------------
# closed-form one-dimensional references


def slab_harmonic_1d(scenario, z):
    """Two-layer slab with lateral faces adiabatic, loads ``Re(A exp(-i omega t))``.

    Each layer carries ``a cosh(k z) + b sinh(k z)`` with ``k = sqrt(-i omega C/K)``;
    the top and bottom conditions and continuity of u and K du/dz at z = 0
    give a 4 x 4 complex system.
    """
    sc = scenario
    w = sc.omega
    layers = [(sc.upper, 0), (sc.lower, 1)]

    def basis(mat, zz):
        k = np.sqrt(-1j * w * mat.capacity / mat.conductivity + 0j)
        if abs(k) * sc.length_scale < 1e-8:
            return np.array([1.0 + 0j, zz]), np.array([0.0 + 0j, 1.0])
        return np.array([np.cosh(k * zz), np.sinh(k * zz) / k]), np.array([k * np.sinh(k * zz), np.cosh(k * zz)])

    A = np.zeros((4, 4), dtype=complex)
    rhs = np.zeros(4, dtype=complex)
    for row, (name, zz, mat, off, sgn) in enumerate((("top", sc.h1, sc.upper, 0, 1.0),
                                                      ("bottom", -sc.h2, sc.lower, 2, -1.0))):
        bc = sc.bcs[name]
        v, dv = basis(mat, zz)
        if bc.kind == "dirichlet":
            A[row, off:off + 2] = v
        else:
            A[row, off:off + 2] = sgn * mat.conductivity * dv
        rhs[row] = complex(bc.amplitude)
    vu, dvu = basis(sc.upper, 0.0)
    vl, dvl = basis(sc.lower, 0.0)
    A[2, 0:2], A[2, 2:4] = vu, -vl
    A[3, 0:2], A[3, 2:4] = sc.upper.conductivity * dvu, -sc.lower.conductivity * dvl
    coef = np.linalg.solve(A, rhs)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty(len(z), dtype=complex)
    for n, zz in enumerate(z):
        mat, off = (sc.upper, 0) if zz >= 0 else (sc.lower, 2)
        v, _ = basis(mat, zz)
        out[n] = v @ coef[off:off + 2]
    return out


def slab_step_series(z, t, length, diffusivity, delta_t, terms=50):
    """Slab on [0, length] at zero, face z = length raised to ``delta_t`` at t = 0."""
    z = np.asarray(z, dtype=float)
    n = np.arange(1, terms + 1)[:, None]
    s = np.sum(2.0 / (n * np.pi) * (-1.0) ** n * np.sin(n * np.pi * z / length)
               * np.exp(-(n * np.pi / length) ** 2 * diffusivity * t), axis=0)
    return delta_t * (z / length + s)


def bimaterial_steady_flux(scenario, delta_t):
    """Steady q3 through a two-layer slab held ``delta_t`` hotter on top."""
    ku, kl = scenario.upper.conductivity, scenario.lower.conductivity
    return -delta_t / (scenario.h1 / ku + scenario.h2 / kl)


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonReport:
    linf_abs: float
    linf_rel: float
    l2_rel: float
    n: int

    def passed(self, tol):
        return self.linf_rel <= tol


def compare_fields(a, b, phases_a=None, phases_b=None):
    """Discrepancy of ``a`` against reference ``b`` at shared probes.

    ``linf_rel`` is max|a - b| / max|b| and ``l2_rel`` is ||a - b|| / ||b||.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("probe sets differ")
    if phases_a is not None and phases_b is not None and list(phases_a) != list(phases_b):
        raise ValueError("phase tags differ between the compared probe sets")
    d = np.abs(a - b)
    scale = np.max(np.abs(b)) if b.size else 0.0
    norm = np.linalg.norm(b)
    return ComparisonReport(
        linf_abs=float(d.max()) if d.size else 0.0,
        linf_rel=float(d.max() / scale) if scale > 0 else float(d.max() if d.size else 0.0),
        l2_rel=float(np.linalg.norm(d) / norm) if norm > 0 else float(np.linalg.norm(d)),
        n=int(a.size),
    )
