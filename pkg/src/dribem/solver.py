"""Global system layout, factorization and time or frequency solves.

Unknown vector (full, before boundary data are moved to the right side)::

    [ u at nodes | dT/dn flux dofs | u at interior points | alpha | eigen ]

Flux dofs are per (Dirichlet face, node) because the normal derivative
jumps across box edges. Rows::

    [ BIE at nodes | BIE at interior points | interpolation | equivalent conditions ]

Every row has the form ``M0 z + M1 dz/dt = B p(t)`` where ``M1`` only
touches the source densities alpha and the eigen heat storage unknowns.
Backward differences replace ``dz/dt`` by ``a z + h`` with a history
vector ``h``; the harmonic solve uses ``a = -i omega`` and ``h = 0`` and the
steady solve ``a = 0``. Known Dirichlet temperatures and edge flux dofs
are moved to the right side and the corresponding node rows dropped.
"""
from dataclasses import dataclass
import json
import time
import warnings

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .bem import BoundaryQuadrature, build_panels, free_terms_and_diagonal
from .drm import boundary_gamma, build_rbf_system, rbf_gamma
from .eim import capacity_reference, disturbance_columns, eigen_layout, eim_rows
from .model import FACES, validate_scenario


class NumericalError(RuntimeError):
    """Raised when the global operator cannot be factorized reliably."""


def _first_true(row):
    idx = np.flatnonzero(row)
    return int(idx[0]) if len(idx) else -1


class BoundaryContext:
    """Quadrature, density maps and eigen layout shared by assembly and evaluation."""

    def __init__(self, scenario, mesh, inclusions=(), order=4, near_ratio=0.5):
        self.scenario = scenario
        self.mesh = mesh
        self.inclusions = tuple(inclusions)
        ku, kl = scenario.upper.conductivity, scenario.lower.conductivity
        self.panels = build_panels(mesh, scenario, interface=True)
        self.quad = BoundaryQuadrature(self.panels, ku, kl, order=order, near_ratio=near_ratio)
        q = self.quad
        self.ell = scenario.length_scale
        self.centers = np.vstack([mesh.nodes, mesh.interior])
        self.rbf = build_rbf_system(self.centers, self.ell)
        self.cond_q = q.point_values(self.panels.conductivity)
        self.cap_q = q.point_values(self.panels.capacity)
        self.face_q = q.point_values(self.panels.face)
        self.node_map = q.node_matrix(self.cond_q).tocsc()
        self.dirichlet = np.array([scenario.bcs[f].kind == "dirichlet" for f in FACES])
        self._build_flux_dofs()
        self.face_masks = np.stack([(self.face_q == f).astype(float) for f in range(len(FACES))], axis=1)
        self.gammas = boundary_gamma(q, self.centers, self.ell)
        self.layout = eigen_layout(self.inclusions)
        self.c_ref = capacity_reference(scenario, self.inclusions)

    def _build_flux_dofs(self):
        mesh = self.mesh
        dofs = {}
        for f in np.flatnonzero(self.dirichlet):
            for n in np.flatnonzero(mesh.node_faces[:, f]):
                dofs[(int(f), int(n))] = len(dofs)
        self.flux_dofs = list(dofs)
        q = self.quad
        ids = self.panels.node_ids[q.panel_of]
        rows, cols, vals = [], [], []
        for qi in np.flatnonzero((self.face_q >= 0) & self.dirichlet[np.maximum(self.face_q, 0)]):
            f = int(self.face_q[qi])
            for a in range(4):
                rows.append(qi)
                cols.append(dofs[(f, int(ids[qi, a]))])
                vals.append(q.shape[qi, a] * self.cond_q[qi])
        self.flux_map = sparse.csc_matrix((vals, (rows, cols)), shape=(q.n_points, len(dofs)))
        # a node on two or more Dirichlet faces has all its flux dofs known
        n_dir = mesh.node_faces[:, self.dirichlet].sum(axis=1)
        self.node_known = n_dir >= 1
        self.flux_known = np.array([n_dir[n] >= 2 for (_f, n) in self.flux_dofs], dtype=bool)
        self.node_has_unknown = (n_dir == 0) | (n_dir == 1)

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    @property
    def n_flux(self):
        return len(self.flux_dofs)

    @property
    def n_interior(self):
        return len(self.mesh.interior)

    @property
    def n_alpha(self):
        return len(self.centers)

    @property
    def n_eigen(self):
        return self.layout.size

    def field_faces(self):
        return [f for f, name in enumerate(FACES)
                if self.scenario.bcs[name].kind == "neumann" and self.scenario.bcs[name].field is not None]


@dataclass
class Representation:
    """Linear map from the solution state to the k-th field derivative at points.

    Each block has shape (R, 3**order, columns).
    """

    points: np.ndarray
    order: int
    u: np.ndarray
    flux: np.ndarray
    face: np.ndarray
    field: dict
    alpha: np.ndarray
    etg: np.ndarray
    ehs: np.ndarray

    def apply(self, state):
        out = (self.u @ state.u_nodes + self.flux @ state.flux + self.face @ state.face_loads
               + self.alpha @ state.alpha_rate + self.etg @ state.eigen + self.ehs @ state.eigen_rate)
        for f, mat in self.field.items():
            out = out + mat @ state.field_loads[f]
        return out.reshape((len(self.points),) + (3,) * self.order)


def _dense_times_sparse(M, S):
    return np.asarray((S.T @ M.T).T)


def _inward_offsets(ctx, X, field_upper):
    """Unit directions moving points off outer faces and the interface, zero elsewhere."""
    sc = ctx.scenario
    b = sc.bounds
    tol = 1e-9 * sc.length_scale
    d = np.zeros_like(X)
    for axis in range(3):
        d[:, axis] += np.abs(X[:, axis] - b[axis, 0]) < tol
        d[:, axis] -= np.abs(X[:, axis] - b[axis, 1]) < tol
    on_if = (np.abs(X[:, 2]) < tol) & (d[:, 2] == 0)
    up = np.ones(len(X), bool) if field_upper is None else np.broadcast_to(field_upper, len(X))
    d[on_if, 2] = np.where(up[on_if], 1.0, -1.0)
    norm = np.linalg.norm(d, axis=1)
    return d / np.where(norm > 0, norm, 1.0)[:, None], norm > 0


def _combine(a, b, wa, wb):
    out = Representation(a.points, a.order, *(wa * getattr(a, n) + wb * getattr(b, n) for n in
                                               ("u", "flux", "face")), {},
                         *(wa * getattr(a, n) + wb * getattr(b, n) for n in ("alpha", "etg", "ehs")))
    out.field = {f: wa * a.field[f] + wb * b.field[f] for f in a.field}
    return out


def build_representation(ctx, X, order=0, field_upper=None, offset=1e-3):
    """Representation of u (order 0) or its derivatives at points.

    At order 0 the dual-reciprocity term uses the subtraction form and
    every block is divided by the free term (the row sum of the double
    layer), so points on the boundary are allowed. Derivatives at points
    on an outer face or on the interface are one-sided limits, extrapolated
    linearly from two points at ``offset`` and ``2 offset`` (times the
    length scale) inside the chosen layer.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if order > 0:
        d, on = _inward_offsets(ctx, X, field_upper)
        if on.any():
            h = offset * ctx.scenario.length_scale
            fu = X[:, 2] >= 0 if field_upper is None else np.broadcast_to(field_upper, len(X))
            fu = np.where(np.abs(X[:, 2]) < 1e-9 * ctx.scenario.length_scale, d[:, 2] > 0, fu)
            r1 = _build_representation(ctx, X + h * d, order, fu)
            r2 = _build_representation(ctx, X + 2 * h * d, order, fu)
            rep = _combine(r1, r2, 2.0, -1.0)
            rep.points = X
            return rep
    return _build_representation(ctx, X, order, field_upper)


def _build_representation(ctx, X, order, field_upper):
    R, T = len(X), 3**order
    KG, KF = ctx.quad.kernels(X, order, field_upper)
    Q = ctx.quad.n_points
    KG2 = np.moveaxis(KG.reshape(R, Q, T), 1, 2).reshape(R * T, Q)
    KF2 = np.moveaxis(KF.reshape(R, Q, T), 1, 2).reshape(R * T, Q)
    del KG, KF
    A_u = -_dense_times_sparse(KF2, ctx.node_map)
    A_g = _dense_times_sparse(KG2, ctx.flux_map)
    A_face = KG2 @ ctx.face_masks
    field = {f: KG2[:, ctx.face_q == f].reshape(R, T, -1) for f in ctx.field_faces()}
    gam, dgn = ctx.gammas
    S = KG2 @ dgn - KF2 @ gam
    if order == 0:
        S += (KF2 @ ctx.cap_q)[:, None] * rbf_gamma(X, ctx.centers, ctx.ell)[0]
    else:
        sc = ctx.scenario
        up = X[:, 2] >= 0 if field_upper is None else np.broadcast_to(field_upper, R)
        ratio = np.where(up, sc.upper.capacity / sc.upper.conductivity, sc.lower.capacity / sc.lower.conductivity)
        free = rbf_gamma(X, ctx.centers, ctx.ell, order)[order]
        free = np.moveaxis(free.reshape(R, len(ctx.centers), T), 1, 2).reshape(R * T, -1)
        S -= np.repeat(ratio, T)[:, None] * free
    etg, ehs = disturbance_columns(X, ctx.layout, ctx.scenario, order, ctx.c_ref, field_upper)
    shape = (R, T, -1)
    rep = Representation(X, order, A_u.reshape(shape), A_g.reshape(shape), A_face.reshape(shape), field,
                         -S.reshape(shape), etg, ehs)
    if order == 0:
        c = A_u.sum(axis=1).reshape(R, 1, 1)
        for name in ("u", "flux", "face", "alpha", "etg", "ehs"):
            setattr(rep, name, getattr(rep, name) / c)
        rep.field = {f: m / c for f, m in rep.field.items()}
    return rep


@dataclass
class State:
    """Full solution vector split into named parts, plus loads and rates."""

    z: np.ndarray
    rate: np.ndarray
    face_loads: np.ndarray
    field_loads: dict
    sizes: tuple
    time: float = None
    omega: float = None

    def _part(self, vec, k):
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        return vec[off[k]:off[k + 1]]

    @property
    def u_nodes(self):
        return self._part(self.z, 0)

    @property
    def flux(self):
        return self._part(self.z, 1)

    @property
    def u_interior(self):
        return self._part(self.z, 2)

    @property
    def alpha(self):
        return self._part(self.z, 3)

    @property
    def alpha_rate(self):
        return self._part(self.rate, 3)

    @property
    def eigen(self):
        return self._part(self.z, 4)

    @property
    def eigen_rate(self):
        return self._part(self.rate, 4)


class GlobalSystem:
    """Assembled operator pieces for one scenario, mesh and inclusion set.

    Parameters
    ----------
    scenario : BilayerScenario
    mesh : BoundaryMesh
        Boundary mesh with interior interpolation points attached.
    inclusions : sequence of Inclusion
    """

    def __init__(self, scenario, mesh, inclusions=(), order=4, near_ratio=0.5):
        validate_scenario(scenario, inclusions)
        t0 = time.perf_counter()
        self.scenario = scenario
        self.ctx = ctx = BoundaryContext(scenario, mesh, inclusions, order, near_ratio)
        NN, NG, NS, NM, NE = ctx.n_nodes, ctx.n_flux, ctx.n_interior, ctx.n_alpha, ctx.n_eigen
        self.sizes = (NN, NG, NS, NM, NE)
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        self.col = {k: slice(off[n], off[n + 1]) for n, k in enumerate(("u", "g", "ui", "alpha", "eigen"))}
        n_full = int(off[-1])
        n_rows = NN + NS + NM + NE
        M0 = np.zeros((n_rows, n_full))
        M1 = np.zeros((n_rows, n_full))
        B = np.zeros((n_rows, len(FACES)))
        self.field_B = {f: np.zeros((n_rows, int(np.sum(ctx.face_q == f)))) for f in ctx.field_faces()}

        rep = build_representation(ctx, ctx.centers, 0)
        self.free_terms = None
        H = -rep.u[:, 0, :]
        Hb, c = free_terms_and_diagonal(H[:NN], np.arange(NN))
        self.free_terms = c
        rows = slice(0, NN + NS)
        M0[:NN, self.col["u"]] = Hb
        M0[NN:NN + NS, self.col["u"]] = H[NN:]
        M0[NN:NN + NS, self.col["ui"]] = np.eye(NS)
        self._fill_rep_row(M0, M1, B, rows, rep, -1.0, 0, skip_u=True)

        r = slice(NN + NS, NN + NS + NM)
        M0[r, self.col["alpha"]] = ctx.rbf.F
        M0[r, self.col["u"]] = -np.eye(NM, NN)
        M0[r, self.col["ui"]] = -np.eye(NM, NS, -NN)

        if NE:
            self.eim_rows = eim_rows(ctx.layout, scenario, ctx.c_ref)
            centers = np.array([inc.center for inc in ctx.inclusions])
            reps = {k: build_representation(ctx, centers, k)
                    for k in sorted({row.order for row in self.eim_rows})}
            base = NN + NS + NM
            for n, row in enumerate(self.eim_rows):
                rep_k = reps[row.order]
                comp = int(np.ravel_multi_index(row.component, (3,) * row.order)) if row.order else 0
                sub = _slice_rep(rep_k, row.inclusion, comp)
                self._fill_rep_row(M0, M1, B, slice(base + n, base + n + 1), sub, row.factor, 0)
                M0[base + n, self.col["eigen"].start + row.column] += row.weight
        self.M0, self.M1, self.B = M0, M1, B
        self._select_unknowns()
        self._factors = {}
        self.assembly_time = time.perf_counter() - t0

    def _fill_rep_row(self, M0, M1, B, rows, rep, factor, comp, skip_u=False):
        """Add ``factor * representation`` (component ``comp``) to ``rows``."""
        if not skip_u:
            M0[rows, self.col["u"]] += factor * rep.u[:, comp]
        M0[rows, self.col["g"]] += factor * rep.flux[:, comp]
        M0[rows, self.col["eigen"]] += factor * rep.etg[:, comp]
        M1[rows, self.col["alpha"]] += factor * rep.alpha[:, comp]
        M1[rows, self.col["eigen"]] += factor * rep.ehs[:, comp]
        B[rows] -= factor * rep.face[:, comp]
        for f, mat in rep.field.items():
            self.field_B[f][rows] -= factor * mat[:, comp]

    def _select_unknowns(self):
        ctx = self.ctx
        NN, NG = ctx.n_nodes, ctx.n_flux
        known = np.zeros(self.M0.shape[1], dtype=bool)
        known[self.col["u"]] = ctx.node_known
        known[self.col["g"]] = ctx.flux_known
        self.known = known
        keep = np.ones(self.M0.shape[0], dtype=bool)
        keep[:NN] = ctx.node_has_unknown
        self.keep = keep
        n_unknown = int((~known).sum())
        if n_unknown != int(keep.sum()):
            raise NumericalError(f"system is not square: {keep.sum()} rows for {n_unknown} unknowns")

    @property
    def n_unknowns(self):
        return int((~self.known).sum())

    @property
    def n_full(self):
        return self.M0.shape[1]

    # -- boundary data -----------------------------------------------------

    def _bc_values(self, face, points, when, mode):
        bc = self.scenario.bcs[FACES[face]]
        if mode == "harmonic":
            return bc.phasor(points)
        vals = bc.values(points, None if mode == "steady" else when)
        if bc.kind == "dirichlet":
            vals = vals - self.scenario.u0
        return vals

    def known_values(self, when, mode):
        """Known node temperatures and edge flux dofs (full vector, zeros elsewhere)."""
        ctx = self.ctx
        mesh = ctx.mesh
        dtype = complex if mode == "harmonic" else float
        z = np.zeros(self.n_full, dtype=dtype)
        nodes_u = z[self.col["u"]]
        dir_faces = ctx.dirichlet
        for n in np.flatnonzero(ctx.node_known):
            f = _first_true(mesh.node_faces[n] & dir_faces)
            nodes_u[n] = self._bc_values(f, mesh.nodes[n], when, mode)[0]
        g = z[self.col["g"]]
        h = 1e-6 * self.scenario.length_scale
        for k in np.flatnonzero(ctx.flux_known):
            f, n = ctx.flux_dofs[k]
            other = mesh.node_faces[n] & dir_faces
            other[f] = False
            b = _first_true(other)
            normal = np.zeros(3)
            axis = {"top": 2, "bottom": 2, "x_min": 0, "x_max": 0, "y_min": 1, "y_max": 1}[FACES[f]]
            normal[axis] = 1.0 if FACES[f] in ("top", "x_max", "y_max") else -1.0
            x = mesh.nodes[n]
            plus = self._bc_values(b, x + h * normal, when, mode)[0]
            minus = self._bc_values(b, x - h * normal, when, mode)[0]
            g[k] = (plus - minus) / (2 * h)
        return z

    def loads(self, when, mode):
        """Uniform Neumann face loads and per-point loads of field-defined faces."""
        ctx = self.ctx
        dtype = complex if mode == "harmonic" else float
        p = np.zeros(len(FACES), dtype=dtype)
        field = {}
        for f, name in enumerate(FACES):
            bc = self.scenario.bcs[name]
            if bc.kind != "neumann":
                continue
            if bc.field is None:
                p[f] = self._bc_values(f, np.zeros((1, 3)), when, mode)[0]
            else:
                field[f] = self._bc_values(f, ctx.quad.points[ctx.face_q == f], when, mode)
        return p, field

    # -- solves ------------------------------------------------------------

    def factor(self, a):
        """LU factors of the reduced operator for time factor ``a`` (cached)."""
        key = complex(a)
        if key not in self._factors:
            A = (self.M0 + a * self.M1)[self.keep][:, ~self.known] if a != 0 else self.M0[self.keep][:, ~self.known]
            scale = 1.0 / np.max(np.abs(A), axis=1)
            A = A * scale[:, None]
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                try:
                    lu = sla.lu_factor(A, check_finite=True)
                except (sla.LinAlgWarning, ValueError, np.linalg.LinAlgError) as exc:
                    raise NumericalError(f"global operator is singular: {exc}") from exc
            piv = np.abs(np.diag(lu[0]))
            ratio = piv.min() / piv.max()
            if ratio < 1e3 * np.finfo(float).eps:
                raise NumericalError(f"global operator is numerically singular (pivot ratio {ratio:.2e})")
            self._factors[key] = (lu, scale, ratio)
        return self._factors[key]

    def solve(self, a, when, mode, history=None):
        """Solve ``(M0 + a M1) z = B p - M1 h`` with known values moved across.

        Returns the full vector and the rate vector ``a z + h``.
        """
        lu, scale, _ = self.factor(a)
        zk = self.known_values(when, mode)
        p, field = self.loads(when, mode)
        rhs = self.B @ p
        for f, vals in field.items():
            rhs = rhs + self.field_B[f] @ vals
        A_known = self.M0[:, self.known] + (a * self.M1[:, self.known] if a != 0 else 0.0)
        rhs = rhs - A_known @ zk[self.known]
        if history is not None:
            rhs = rhs - self.M1 @ history
        rhs = rhs[self.keep] * scale
        x = sla.lu_solve(lu, rhs)
        z = zk.astype(x.dtype)
        z[~self.known] = x
        rate = a * z if a != 0 else np.zeros_like(z)
        if history is not None:
            rate = rate + history
        mask = np.zeros(self.n_full, dtype=bool)
        mask[self.col["alpha"]] = True
        mask[self.col["eigen"]] = self.ctx.layout.ehs_mask()
        rate = np.where(mask, rate, 0.0)
        return State(z, rate, p, field, self.sizes, time=when if mode == "transient" else None,
                     omega=None)

    def solve_steady(self):
        return self.solve(0.0, None, "steady")

    def solve_harmonic(self, omega):
        """Complex amplitudes for loads ``Re(A exp(-i omega t))``."""
        if omega < 0:
            raise ValueError("frequency must be non-negative")
        st = self.solve(-1j * omega, None, "harmonic")
        st.omega = omega
        return st

    def residual(self, state, a=0.0, history=None):
        """Residual of every row of the full system for a given state."""
        r = (self.M0 + a * self.M1) @ state.z - self.B @ state.face_loads
        if history is not None:
            r = r + self.M1 @ history
        for f, vals in state.field_loads.items():
            r = r - self.field_B[f] @ vals
        return r[self.keep]

    def summary(self):
        NN, NG, NS, NM, NE = self.sizes
        return {
            "boundary_nodes": NN, "flux_dofs": NG, "interior_points": NS, "source_densities": NM,
            "eigen_coefficients": NE, "unknowns": self.n_unknowns,
            "elements": int(self.ctx.mesh.n_elements), "inclusions": len(self.ctx.inclusions),
            "assembly_seconds": self.assembly_time,
        }


def _slice_rep(rep, n, comp):
    """Representation restricted to point ``n`` and flat component ``comp``."""
    take = lambda a: a[n:n + 1, comp:comp + 1]
    return Representation(rep.points[n:n + 1], 0, take(rep.u), take(rep.flux), take(rep.face),
                          {f: take(m) for f, m in rep.field.items()}, take(rep.alpha), take(rep.etg), take(rep.ehs))


@dataclass
class TimeState:
    """Station index, time and the last two full solution vectors."""

    n: int
    t: float
    z: np.ndarray
    z_prev: np.ndarray

    def save(self, path):
        """Write an ``.npz`` checkpoint with arrays ``n``, ``t``, ``z``, ``z_prev``."""
        np.savez(path, n=self.n, t=self.t, z=self.z, z_prev=self.z_prev)

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            return cls(int(d["n"]), float(d["t"]), d["z"].copy(), d["z_prev"].copy())


def step_factors(ts, dt):
    """Rate ``a z + h`` of the step leaving ``ts``: backward Euler first, then second order."""
    if ts.n == 0:
        return 1.0 / dt, -ts.z / dt
    return 1.5 / dt, (-4.0 * ts.z + ts.z_prev) / (2.0 * dt)


def step_transient(system, ts):
    """Advance one station with first-order (n = 1) or second-order differences."""
    sc = system.scenario
    n = ts.n + 1
    t = sc.t0 + n * sc.dt
    a, h = step_factors(ts, sc.dt)
    state = system.solve(a, t, "transient", history=h)
    return state, TimeState(n, t, state.z, ts.z)


def initial_state(system):
    """Uniform initial temperature: every stored change, density and eigen field is zero."""
    z = np.zeros(system.n_full)
    return TimeState(0, system.scenario.t0, z, z)


def run_transient(system, steps=None, callback=None, start=None):
    """March ``steps`` stations; returns the list of states (station 0 included)."""
    ts = start if start is not None else initial_state(system)
    steps = system.scenario.steps if steps is None else steps
    p, field = system.loads(ts.t, "transient")
    states = [State(ts.z, np.zeros_like(ts.z), p, field, system.sizes, time=ts.t)]
    for _ in range(steps):
        state, ts = step_transient(system, ts)
        states.append(state)
        if callback is not None:
            callback(state, ts)
    return states


def write_summary(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)
