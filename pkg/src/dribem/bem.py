"""Boundary quadrature and the boundary-integral operator blocks.

All surface integrals are reduced to weighted sums over one shared set of
base points: an n x n Gauss rule on every panel. For field points close to
a panel the integral is computed with a refined rule (adaptive subdivision,
or a Duffy fan when the point lies on the panel) and projected back onto
that panel's base points through tensor Lagrange interpolation. The
projection is exact for the bilinear shape functions and for uniform
fluxes, and spectrally accurate for the smooth particular potentials.
The result is a kernel matrix (rows x base points) that every block
(double layer, single layer, dual reciprocity, field evaluation) shares.

Panels are either boundary elements of the mesh or integration-only
copies of the interface plane (one per side) used by the dual-reciprocity
terms, which involve each layer's full boundary.
"""
import functools
from dataclasses import dataclass
import warnings

import numpy as np
from scipy import sparse

from .kernels import greens_derivs
from .model import FACES


@functools.lru_cache(maxsize=None)
def gauss_square(n):
    """Tensor Gauss-Legendre rule on [0, 1]^2, ordered with eta fastest (read-only arrays)."""
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    xi = np.repeat(t, n)
    eta = np.tile(t, n)
    out = (xi, eta, np.outer(w, w).ravel())
    for a in out:
        a.flags.writeable = False
    return out


def shape_functions(xi, eta):
    """Bilinear shape functions, shape (m, 4), vertex order (0,0),(1,0),(1,1),(0,1)."""
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def map_panel(vertices, xi, eta):
    """Points and area Jacobians of the bilinear map of a quadrilateral."""
    v = np.asarray(vertices, dtype=float)
    pts = shape_functions(xi, eta) @ v
    dxi = np.outer(1 - eta, v[1] - v[0]) + np.outer(eta, v[2] - v[3])
    deta = np.outer(1 - xi, v[3] - v[0]) + np.outer(xi, v[2] - v[1])
    return pts, np.linalg.norm(np.cross(dxi, deta), axis=1)


def _lagrange_1d(nodes, t):
    out = np.ones((len(t), len(nodes)))
    for j, xj in enumerate(nodes):
        for i, xi in enumerate(nodes):
            if i != j:
                out[:, j] *= (t - xi) / (xj - xi)
    return out


def _box_distance(x, lo, hi):
    d = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return np.linalg.norm(d, axis=-1)


def _param_of(vertices, x):
    """Parametric coordinates of a point on a (flat) bilinear panel."""
    v = np.asarray(vertices, dtype=float)
    p = np.array([0.5, 0.5])
    for _ in range(30):
        pts, _ = map_panel(v, p[:1], p[1:])
        r = pts[0] - x
        dxi = (1 - p[1]) * (v[1] - v[0]) + p[1] * (v[2] - v[3])
        deta = (1 - p[0]) * (v[3] - v[0]) + p[0] * (v[2] - v[1])
        jac = np.stack([dxi, deta], axis=1)
        step = np.linalg.lstsq(jac, r, rcond=None)[0]
        p = p - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return np.clip(p, 0.0, 1.0)


def duffy_fan_rule(p, n):
    """Rule on the unit square for an integrand singular at parametric point ``p``.

    The square is split into triangles fanned at ``p`` (two to four,
    depending on whether ``p`` is a corner, on an edge or inside), each
    mapped from the unit square so that the Jacobian vanishes at ``p``.
    """
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    s, t, w = gauss_square(n)
    xi, eta, wt = [], [], []
    for a in range(4):
        ca, cb = corners[a], corners[(a + 1) % 4]
        u = ca - p
        e = cb - ca
        det = abs(u[0] * e[1] - u[1] * e[0])
        if det < 1e-14:
            continue
        q = p + s[:, None] * (u + t[:, None] * e)
        xi.append(q[:, 0])
        eta.append(q[:, 1])
        wt.append(w * s * det)
    return np.concatenate(xi), np.concatenate(eta), np.concatenate(wt)


def subdivision_rule(vertices, x, ratio=0.5, n=4, max_depth=24):
    """Adaptive rule on the unit square for a point near (not on) a panel.

    Parametric cells are split in four until each cell's diameter is at
    most ``ratio`` times its distance to ``x``; accepted cells carry an
    n x n Gauss rule. All cells of one level are tested together.
    """
    v = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    gx, gy, gw = gauss_square(n)
    cells = np.array([[0.0, 1.0, 0.0, 1.0]])
    done = []
    depth = 0
    while len(cells):
        a, b, c, d = cells.T
        cx = np.stack([a, b, b, a], axis=1)
        cy = np.stack([c, c, d, d], axis=1)
        cp = shape_functions(cx, cy) @ v
        size = np.maximum(np.linalg.norm(cp[:, 2] - cp[:, 0], axis=1), np.linalg.norm(cp[:, 3] - cp[:, 1], axis=1))
        dist = _box_distance(x, cp.min(axis=1), cp.max(axis=1))
        ok = size <= ratio * dist
        if depth >= max_depth:
            if not ok.all():
                warnings.warn("near-singular subdivision reached its depth cap; accuracy may be reduced",
                              stacklevel=2)
            ok[:] = True
        done.append(cells[ok])
        rest = cells[~ok]
        m = 0.5 * (rest[:, 0] + rest[:, 1])
        k = 0.5 * (rest[:, 2] + rest[:, 3])
        a, b, c, d = rest.T
        cells = np.concatenate([np.stack(q, axis=1) for q in
                                ((a, m, c, k), (m, b, c, k), (a, m, k, d), (m, b, k, d))])
        depth += 1
    cells = np.concatenate(done)
    a, b, c, d = (cells[:, i:i + 1] for i in range(4))
    xi = (a + (b - a) * gx).ravel()
    eta = (c + (d - c) * gy).ravel()
    wt = ((b - a) * (d - c) * gw).ravel()
    return xi, eta, wt


def integrate_element(kernel, vertices, x, order=4, ratio=0.5):
    """Integral of ``kernel(points)`` over a panel for a point off the panel.

    The plain ``order`` x ``order`` Gauss rule is used when the panel
    diameter is at most ``ratio`` times the distance; otherwise the panel
    is subdivided adaptively.
    """
    v = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    size = max(np.linalg.norm(v[2] - v[0]), np.linalg.norm(v[3] - v[1]))
    dist = _box_distance(x, v.min(axis=0), v.max(axis=0))
    if size <= ratio * dist:
        xi, eta, w = gauss_square(order)
    else:
        xi, eta, w = subdivision_rule(v, x, ratio, order)
    pts, jac = map_panel(v, xi, eta)
    vals = np.asarray(kernel(pts))
    return np.tensordot(w * jac, vals, axes=(0, 0))


def integrate_singular(kernel, vertices, x, order=8):
    """Integral of a 1/r-singular ``kernel(points)`` over a panel containing ``x``."""
    v = np.asarray(vertices, dtype=float)
    p = _param_of(v, np.asarray(x, dtype=float))
    xi, eta, w = duffy_fan_rule(p, order)
    pts, jac = map_panel(v, xi, eta)
    vals = np.asarray(kernel(pts))
    return np.tensordot(w * jac, vals, axes=(0, 0))


@dataclass
class PanelSet:
    """Flat quadrilateral panels with the side and material of their layer.

    ``node_ids`` is -1 for the integration-only interface panels and
    ``face`` is -1 for them as well.
    """

    vertices: np.ndarray
    normals: np.ndarray
    src_upper: np.ndarray
    node_ids: np.ndarray
    conductivity: np.ndarray
    capacity: np.ndarray
    face: np.ndarray

    def __len__(self):
        return len(self.vertices)

    @property
    def is_boundary(self):
        return self.face >= 0


def build_panels(mesh, scenario, interface=True):
    """Boundary panels of ``mesh`` plus, optionally, both sides of the interface plane."""
    verts = mesh.element_vertices()
    upper = verts[:, :, 2].mean(axis=1) > 0
    props = [scenario.upper if u else scenario.lower for u in upper]
    parts = {
        "vertices": [verts],
        "normals": [mesh.normals],
        "src_upper": [upper],
        "node_ids": [mesh.elements],
        "conductivity": [np.array([p.conductivity for p in props])],
        "capacity": [np.array([p.capacity for p in props])],
        "face": [mesh.element_face],
    }
    if interface:
        nx, ny = mesh.divisions[:2]
        b = scenario.bounds
        xs = np.linspace(b[0, 0], b[0, 1], nx + 1)
        ys = np.linspace(b[1, 0], b[1, 1], ny + 1)
        quads = []
        for i in range(nx):
            for j in range(ny):
                quads.append([[xs[i], ys[j], 0.0], [xs[i], ys[j + 1], 0.0],
                              [xs[i + 1], ys[j + 1], 0.0], [xs[i + 1], ys[j], 0.0]])
        q = np.array(quads)
        nq = len(q)
        # the upper layer sees the interface with normal -e3, the lower with +e3
        for side_upper, quad, nz, mat in ((True, q, -1.0, scenario.upper),
                                          (False, q[:, [0, 3, 2, 1]], 1.0, scenario.lower)):
            parts["vertices"].append(quad)
            parts["normals"].append(np.tile([0.0, 0.0, nz], (nq, 1)))
            parts["src_upper"].append(np.full(nq, side_upper))
            parts["node_ids"].append(np.full((nq, 4), -1))
            parts["conductivity"].append(np.full(nq, mat.conductivity))
            parts["capacity"].append(np.full(nq, mat.capacity))
            parts["face"].append(np.full(nq, -1))
    return PanelSet(**{k: np.concatenate(v) for k, v in parts.items()})


class BoundaryQuadrature:
    """Shared base points and near-field-corrected kernel matrices.

    Parameters
    ----------
    panels : PanelSet
    k_upper, k_lower : float
        Layer conductivities of the bimaterial kernel.
    order : int
        Base Gauss order per panel direction.
    near_ratio : float
        Panels whose diameter exceeds this fraction of their distance to
        the field point get a refined rule.
    cell_order, singular_order : int
        Gauss orders of subdivision cells and of Duffy triangles.
    """

    def __init__(self, panels, k_upper, k_lower, order=4, near_ratio=0.5, cell_order=4,
                 singular_order=8, max_depth=24):
        self.panels = panels
        self.k_upper = k_upper
        self.k_lower = k_lower
        self.order = order
        self.near_ratio = near_ratio
        self.cell_order = cell_order
        self.singular_order = singular_order
        self.max_depth = max_depth
        xi, eta, w = gauss_square(order)
        self._nodes_1d = 0.5 * (np.polynomial.legendre.leggauss(order)[0] + 1.0)
        self.n_local = order * order
        P = len(panels)
        pts = np.empty((P, self.n_local, 3))
        wj = np.empty((P, self.n_local))
        for p in range(P):
            pts[p], jac = map_panel(panels.vertices[p], xi, eta)
            wj[p] = w * jac
        self.points = pts.reshape(-1, 3)
        self.weights = wj.ravel()
        self.panel_of = np.repeat(np.arange(P), self.n_local)
        self.shape = np.tile(shape_functions(xi, eta), (P, 1))
        self.normals = panels.normals[self.panel_of]
        self.src_upper = panels.src_upper[self.panel_of]
        self.lo = panels.vertices.min(axis=1)
        self.hi = panels.vertices.max(axis=1)
        v = panels.vertices
        self.size = np.maximum(np.linalg.norm(v[:, 2] - v[:, 0], axis=1), np.linalg.norm(v[:, 3] - v[:, 1], axis=1))
        self._cache = {}

    @property
    def n_points(self):
        return len(self.points)

    def point_values(self, per_panel):
        """Broadcast a per-panel quantity to base points."""
        return np.asarray(per_panel)[self.panel_of]

    def node_matrix(self, weights=None):
        """Sparse (base points x nodes) matrix of shape-function values.

        Rows of interface panels are empty. ``weights`` scales each point.
        """
        ids = self.panels.node_ids[self.panel_of]
        keep = ids[:, 0] >= 0
        rows = np.repeat(np.flatnonzero(keep), 4)
        vals = self.shape[keep]
        if weights is not None:
            vals = vals * np.asarray(weights)[keep, None]
        n_nodes = int(self.panels.node_ids.max()) + 1
        return sparse.csr_matrix((vals.ravel(), (rows, ids[keep].ravel())), shape=(self.n_points, n_nodes))

    def _local_rule(self, p, x):
        """Refined rule for one pair: points, weights and projection basis.

        Rules depend only on the panel shape relative to ``x``, so they are
        cached in units of the panel size and reused across a structured mesh.
        """
        v = self.panels.vertices[p]
        scale = self.size[p]
        rel = np.round((v - x) / scale, 9)
        key = rel.tobytes()
        rule = self._cache.get(key)
        if rule is None:
            dist = _box_distance(x, self.lo[p], self.hi[p])
            if dist <= 1e-12 * scale:
                xi, eta, w = duffy_fan_rule(_param_of(v, x), self.singular_order)
            else:
                xi, eta, w = subdivision_rule(v, x, self.near_ratio, self.cell_order, self.max_depth)
            basis = (_lagrange_1d(self._nodes_1d, xi)[:, :, None]
                     * _lagrange_1d(self._nodes_1d, eta)[:, None, :]).reshape(len(xi), -1)
            pts, jac = map_panel(v, xi, eta)
            rule = ((pts - x) / scale, w * jac / scale**2, basis)
            self._cache[key] = rule
        offsets, w, basis = rule
        return x + offsets * scale, w * scale**2, basis

    def near_pairs(self, X):
        """Row and panel indices of (field point, panel) pairs needing a refined rule."""
        rows, cols = [], []
        for start in range(0, len(X), 256):
            xs = X[start:start + 256]
            d = _box_distance(xs[:, None, :], self.lo[None], self.hi[None])
            r, c = np.nonzero(self.size[None] > self.near_ratio * d)
            rows.append(r + start)
            cols.append(c)
        return np.concatenate(rows), np.concatenate(cols)

    def kernels(self, X, order=0, field_upper=None):
        """Weighted kernel matrices for field points ``X``.

        Returns ``(KG, KF)`` of shape (R, n_points) + (3,) * order with
        ``KG[r, q] ~ w_q d^k G(x_r, y_q)`` and ``KF[r, q] ~ w_q d^k dG/dn'``,
        where d^k are field derivatives. Summing ``KG @ f`` integrates a
        density ``f`` given at base points over all panels.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        R = len(X)
        fu = X[:, 2] >= 0 if field_upper is None else np.broadcast_to(np.asarray(field_upper, dtype=bool), R)
        tail = (3,) * order
        KG = np.empty((R, self.n_points) + tail)
        KF = np.empty_like(KG)
        rows, cols = self.near_pairs(X)
        near_of_row = np.zeros((R, len(self.panels)), dtype=bool)
        near_of_row[rows, cols] = True
        wshape = (1, -1) + (1,) * order
        chunk = max(1, int(2e6 // (self.n_points * 3 ** (order + 1))))
        for s in range(0, R, chunk):
            xs = X[s:s + chunk]
            # refined pairs are overwritten below; keep their base values finite
            bad = near_of_row[s:s + chunk][:, self.panel_of]
            src = np.where(bad[..., None], xs[:, None, :] + 1.0, self.points[None])
            ev = greens_derivs(xs[:, None, :], src, self.k_upper, self.k_lower, order,
                               fu[s:s + chunk, None], self.src_upper[None])
            KG[s:s + chunk] = ev.g[order] * self.weights.reshape(wshape)
            KF[s:s + chunk] = ev.normal_flux(self.normals[None], order) * self.weights.reshape(wshape)
        self._apply_near(X, fu, order, rows, cols, KG, KF)
        return KG, KF

    def _apply_near(self, X, fu, order, rows, cols, KG, KF):
        if len(rows) == 0:
            return
        n_loc = self.n_local
        batch = 2048
        for s in range(0, len(rows), batch):
            rb, cb = rows[s:s + batch], cols[s:s + batch]
            pts, wts, bases, owner = [], [], [], []
            for m, (r, p) in enumerate(zip(rb, cb)):
                q, w, basis = self._local_rule(p, X[r])
                pts.append(q)
                wts.append(w)
                bases.append(basis)
                owner.append(np.full(len(w), m))
            pts = np.concatenate(pts)
            wts = np.concatenate(wts)
            basis = np.concatenate(bases)
            owner = np.concatenate(owner)
            r_of = rb[owner]
            p_of = cb[owner]
            ev = greens_derivs(X[r_of], pts, self.k_upper, self.k_lower, order, fu[r_of], self.panels.src_upper[p_of])
            g = ev.g[order].reshape(len(wts), -1) * wts[:, None]
            f = ev.normal_flux(self.panels.normals[p_of], order).reshape(len(wts), -1) * wts[:, None]
            # project each pair's refined samples onto its panel's base points
            proj = sparse.csr_matrix(
                (basis.ravel(), ((owner[:, None] * n_loc + np.arange(n_loc)[None]).ravel(),
                                 np.repeat(np.arange(len(owner)), n_loc))),
                shape=(len(rb) * n_loc, len(owner)))
            pg = proj @ g
            pf = proj @ f
            cols_q = cb[:, None] * n_loc + np.arange(n_loc)[None]
            tail = (3,) * order
            KG[rb[:, None], cols_q] = pg.reshape((len(rb), n_loc) + tail)
            KF[rb[:, None], cols_q] = pf.reshape((len(rb), n_loc) + tail)


def free_terms_and_diagonal(H, boundary_rows):
    """Row-sum closure of the double-layer block.

    For each boundary collocation row ``k`` (node ``boundary_rows[k]``),
    the diagonal is set to minus the sum of the off-diagonal entries, so a
    uniform temperature with zero flux satisfies every row exactly. The
    implied free terms ``c = -sum_j H_kj`` of the numerically integrated
    row are returned alongside.
    """
    H = np.array(H, dtype=float)
    rows = np.arange(len(boundary_rows))
    cols = np.asarray(boundary_rows)
    c = -H[rows].sum(axis=1)
    H[rows, cols] = 0.0
    H[rows, cols] = -H[rows].sum(axis=1)
    return H, c


@dataclass
class BieBlocks:
    """Collocated boundary-integral blocks for nodes followed by interior points.

    ``H`` (rows x nodes) is the closed double layer including free terms
    (interior rows carry no free term here; their c = 1 multiplies the
    interior temperature column). ``KG`` and ``KF`` are the corrected
    kernel matrices over base points, from which single-layer columns of
    any boundary data are formed as ``KG @ density``.
    """

    H: np.ndarray
    KG: np.ndarray
    KF: np.ndarray
    c: np.ndarray
    points: np.ndarray

    @property
    def n_rows(self):
        return len(self.points)


def assemble_bie(quad, mesh):
    """Kernel matrices and the closed double-layer block at all collocation points."""
    X = np.vstack([mesh.nodes, mesh.interior])
    KG, KF = quad.kernels(X, 0)
    cond_q = quad.point_values(quad.panels.conductivity)
    H = (quad.node_matrix(cond_q).T @ KF.T).T
    H, c = free_terms_and_diagonal(H, np.arange(mesh.n_nodes))
    return BieBlocks(H=H, KG=KG, KF=KF, c=c, points=X)


def face_point_mask(quad, face):
    """Base points lying on the boundary face named ``face``."""
    return quad.point_values(quad.panels.face) == FACES.index(face)
