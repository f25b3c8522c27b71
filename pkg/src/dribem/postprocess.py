"""Interior field sampling, layer averages and result export."""
import csv
import json
from dataclasses import dataclass

import numpy as np

from .solver import build_representation

UPPER, LOWER = -1, -2


def phase_tags(points, scenario, inclusions=()):
    """Phase per point: inclusion index, ``UPPER`` (-1) or ``LOWER`` (-2)."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    tags = np.where(X[:, 2] >= 0, UPPER, LOWER)
    for n, inc in enumerate(inclusions):
        xi = np.sum(((X - inc.center) / np.asarray(inc.semi_axes)) ** 2, axis=1)
        tags = np.where(xi < 1.0, n, tags)
    return tags


def phase_name(tag):
    return {UPPER: "upper", LOWER: "lower"}.get(int(tag), f"inclusion{int(tag)}")


def local_conductivity(tags, scenario, inclusions=()):
    tags = np.asarray(tags)
    k = np.where(tags == UPPER, scenario.upper.conductivity, scenario.lower.conductivity).astype(float)
    for n, inc in enumerate(inclusions):
        k[tags == n] = inc.props.conductivity
    return k


def nudge_off_surfaces(points, inclusions, rel_tol=1e-6):
    """Move points within ``rel_tol * a`` of an ellipsoid surface outward along its normal."""
    X = np.array(np.atleast_2d(points), dtype=float)
    for inc in inclusions:
        a = np.asarray(inc.semi_axes)
        y = (X - inc.center) / a
        rho = np.linalg.norm(y, axis=1)
        near = np.abs(rho - 1.0) < rel_tol
        if near.any():
            normal = (X[near] - inc.center) / a**2
            normal /= np.linalg.norm(normal, axis=1)[:, None]
            X[near] += 2.0 * rel_tol * a.min() * normal
    return X


@dataclass
class FieldSample:
    """Temperature change, flux and phase at a set of points."""

    points: np.ndarray
    u: np.ndarray
    q: np.ndarray
    phase: np.ndarray
    t: float = 0.0


class FieldProbe:
    """Representations of u and grad u at fixed points, reusable for every state.

    Points are evaluated in chunks to bound the size of the kernel blocks.
    Points on x3 = 0 take the side of ``field_upper`` (upper by default).
    """

    def __init__(self, system, points, field_upper=None, chunk=256):
        ctx = system.ctx
        self.scenario = ctx.scenario
        self.inclusions = ctx.inclusions
        self.points = nudge_off_surfaces(points, self.inclusions)
        self.phase = phase_tags(self.points, self.scenario, self.inclusions)
        if field_upper is not None:
            on_if = np.abs(self.points[:, 2]) < 1e-9 * self.scenario.length_scale
            fu = np.broadcast_to(field_upper, len(self.points))
            self.phase = np.where(on_if & (self.phase < 0), np.where(fu, UPPER, LOWER), self.phase)
        self.k_local = local_conductivity(self.phase, self.scenario, self.inclusions)
        self._reps = []
        for s in range(0, len(self.points), chunk):
            X = self.points[s:s + chunk]
            fu = None if field_upper is None else np.broadcast_to(field_upper, len(self.points))[s:s + chunk]
            self._reps.append((build_representation(ctx, X, 0, fu), build_representation(ctx, X, 1, fu)))

    def temperature(self, state):
        return np.concatenate([r0.apply(state) for r0, _ in self._reps])

    def gradient(self, state):
        return np.concatenate([r1.apply(state) for _, r1 in self._reps])

    def sample(self, state):
        u = self.temperature(state)
        q = -self.k_local[:, None] * self.gradient(state)
        return FieldSample(self.points, u, q, self.phase, t=float(state.time or 0.0))


def eval_field(system, state, points, field_upper=None):
    """One-off sample of u and q = -K grad u at ``points``."""
    return FieldProbe(system, points, field_upper).sample(state)


def uniform_etg(system, state, n):
    """Uniform eigen temperature gradient of inclusion ``n`` (its value at the centre)."""
    lay = system.ctx.layout
    off = lay.offsets[n]
    out = np.zeros(3, dtype=state.eigen.dtype)
    for j, (kind, i, rho, _w) in enumerate(lay.layouts[n]):
        if kind == "etg" and rho == 0:
            out[i] = state.eigen[off + j]
    return out


def eigen_route_flux(system, state, n, grad_center):
    """Flux at an inclusion centre from the matrix conductivity and the eigen gradient."""
    inc = system.ctx.inclusions[n]
    sc = system.scenario
    k_matrix = sc.upper.conductivity if inc.upper else sc.lower.conductivity
    return -k_matrix * (np.asarray(grad_center) - uniform_etg(system, state, n))


# ---------------------------------------------------------------------------
# layer averages


@dataclass
class LayerProfile:
    """Plane averages over the sampling grid of each layer."""

    z: np.ndarray
    u: np.ndarray
    q3: np.ndarray
    counts: np.ndarray
    layer_edges: np.ndarray


def layer_sample_points(scenario, n_layers=2, counts=(10, 10, 20)):
    """Cube centres of an ``n1 x n2 x n3`` grid inside each of ``n_layers`` equal slabs.

    Slab boundaries include the interface when ``n_layers`` is even and h1 = h2;
    in general the slabs split the upper and lower layers separately, half each.
    """
    b = scenario.bounds
    if n_layers % 2:
        raise ValueError("n_layers must be even so the interface is a slab boundary")
    half = n_layers // 2
    edges = np.concatenate([np.linspace(b[2, 0], 0.0, half + 1), np.linspace(0.0, b[2, 1], half + 1)[1:]])
    n1, n2, n3 = counts
    xs = b[0, 0] + (np.arange(n1) + 0.5) * (b[0, 1] - b[0, 0]) / n1
    ys = b[1, 0] + (np.arange(n2) + 0.5) * (b[1, 1] - b[1, 0]) / n2
    zs = np.concatenate([lo + (np.arange(n3) + 0.5) * (hi - lo) / n3 for lo, hi in zip(edges[:-1], edges[1:])])
    Z, X, Y = np.meshgrid(zs, xs, ys, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1), zs, edges


def layer_average(sample, zs, edges):
    """Average a sample laid out by :func:`layer_sample_points` over each sampling plane."""
    nz = len(zs)
    u = np.asarray(sample.u).reshape(nz, -1)
    q3 = np.asarray(sample.q[:, 2]).reshape(nz, -1)
    return LayerProfile(z=zs, u=u.mean(axis=1), q3=q3.mean(axis=1),
                        counts=np.full(nz, u.shape[1]), layer_edges=edges)


def contour_points(scenario, x1, shape=(160, 640)):
    """Cube centres of an ``n2 x n3`` grid on the plane x1 = const."""
    b = scenario.bounds
    n2, n3 = shape
    ys = b[1, 0] + (np.arange(n2) + 0.5) * (b[1, 1] - b[1, 0]) / n2
    zs = b[2, 0] + (np.arange(n3) + 0.5) * (b[2, 1] - b[2, 0]) / n3
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    return np.stack([np.full(Y.size, x1), Y.ravel(), Z.ravel()], axis=1)


# ---------------------------------------------------------------------------
# export

CSV_COLUMNS = ("x1", "x2", "x3", "t", "u", "q1", "q2", "q3", "phase")


def _real_snapshot(values, omega, t):
    """Real part of ``values * exp(-i omega t)`` for complex amplitudes."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return np.real(values * np.exp(-1j * omega * t))
    return values


def export_csv(samples, path, omega=0.0):
    """Write one row per point and sample; floats use ``repr`` so they round-trip exactly.

    Complex (harmonic) samples are written as the real field at time ``t``.
    """
    if isinstance(samples, FieldSample):
        samples = [samples]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for s in samples:
                u = _real_snapshot(s.u, omega, s.t)
                q = _real_snapshot(s.q, omega, s.t)
                for p, uu, qq, ph in zip(s.points, u, q, s.phase):
                    w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(s.t)),
                                repr(float(uu)), repr(float(qq[0])), repr(float(qq[1])), repr(float(qq[2])),
                                phase_name(ph)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    """Parse a file written by :func:`export_csv` into a dict of arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS if c != "phase"}
    out["phase"] = np.array([r["phase"] for r in rows])
    return out


def export_profile(profile, path, t=0.0):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("x3", "t", "u_avg", "q3_avg", "count"))
            for z, u, q, c in zip(profile.z, profile.u, profile.q3, profile.counts):
                w.writerow([repr(float(z)), repr(float(t)), repr(float(np.real(u))), repr(float(np.real(q))), int(c)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_matrix(values, path):
    """Plain-text matrix, one grid row per line, blank-free (gnuplot ``matrix`` format)."""
    try:
        np.savetxt(path, np.real(np.asarray(values)), fmt="%.17g")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_summary(path, payload):
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, default=_json_default)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return str(obj)
