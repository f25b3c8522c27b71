"""Newtonian potentials of an ellipsoid with polynomial densities.

For an ellipsoid centred at ``c`` with semi-axes ``a`` the ten densities
are 1, y_p and y_p y_q with y = x' - c. The potential of density ``rho``
is the volume integral of rho(x' - c)/|x - x'| over the ellipsoid.

Potentials come back as :class:`~dribem.jets.Jet` objects so that any
Cartesian derivative up to the requested order is exact. Spheres use
closed forms (multipoles outside, polynomials inside). Other ellipsoids
use the confocal-parameter integral, evaluated with Gauss-Legendre in the
variable w = (c_max^2 + s)^(-1/2), where the integrand is analytic.
"""
import warnings

import numpy as np

from .jets import Jet, stack
from .kernels import MIRROR

DENSITIES = ((), (0,), (1,), (2,), (0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
PAIR_INDEX = {(p, q): 4 + n for n, (p, q) in enumerate(DENSITIES[4:])}
PAIR_INDEX.update({(q, p): v for (p, q), v in list(PAIR_INDEX.items())})
N_DENSITY = (1, 4, 10)

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)
_NODES = 0.5 * (_NODES + 1.0)
_WEIGHTS = 0.5 * _WEIGHTS
_SURFACE_TOL = 1e-12
_CHUNK = 128


class AccuracyError(RuntimeError):
    """Raised when an adaptive rule misses its tolerance."""


def density_signs():
    """Mirror sign factor of each density under x3 -> -x3."""
    return np.array([np.prod(MIRROR[list(d)]) if d else 1.0 for d in DENSITIES])


def _rel(x, center):
    return np.atleast_2d(np.asarray(x, dtype=float)) - np.asarray(center, dtype=float)


def shape_xi(x, center, semi_axes):
    """Ellipsoid shape function sum((x - c)_k^2 / a_k^2); below 1 is inside."""
    y = _rel(x, center)
    return np.sum(y**2 / np.asarray(semi_axes, dtype=float) ** 2, axis=-1)


def lambda_of(x, center, semi_axes):
    """Confocal parameter: zero inside, else the largest root of the shape equation."""
    y = _rel(x, center)
    a = np.asarray(semi_axes, dtype=float)
    a2 = a**2
    lam = np.zeros(len(y))
    out = np.sum(y**2 / a2, axis=-1) > 1.0
    if not np.any(out):
        return lam
    yo = y[out]
    if np.allclose(a, a[0], rtol=1e-14):
        lam[out] = np.sum(yo**2, axis=-1) - a2[0]
    elif np.isclose(a[0], a[1], rtol=1e-14):
        # axisymmetric: (rho^2)/(a^2+l) + z^2/(c^2+l) = 1 is a quadratic in l
        rho2 = yo[:, 0] ** 2 + yo[:, 1] ** 2
        z2 = yo[:, 2] ** 2
        b = a2[0] + a2[2] - rho2 - z2
        c0 = a2[0] * a2[2] - rho2 * a2[2] - z2 * a2[0]
        lam[out] = 0.5 * (-b + np.sqrt(b * b - 4.0 * c0))
    else:
        # the shape sum is convex and decreasing in l, so Newton from l = 0 is monotone
        y2 = yo**2
        l = np.zeros(len(yo))
        for _ in range(100):
            A = a2 + l[:, None]
            g = np.sum(y2 / A, axis=-1) - 1.0
            dg = -np.sum(y2 / A**2, axis=-1)
            step = g / dg
            l = l - step
            if np.all(np.abs(step) <= 1e-15 * (1.0 + l)):
                break
        lam[out] = l
    return np.maximum(lam, 0.0)


class PotentialSet:
    """Ten density potentials as a jet with batch shape ``(N, 10)``."""

    def __init__(self, jet):
        self.jet = jet

    @property
    def order(self):
        return self.jet.order

    def derivatives(self, k):
        """k-th Cartesian derivatives, shape ``(N, 10) + (3,) * k``."""
        return self.jet.derivatives(k)

    @property
    def values(self):
        return self.jet.value


def _sphere_exterior(y, a, order):
    X = Jet.variables(y, order)
    r2 = X[0] * X[0] + X[1] * X[1] + X[2] * X[2]
    ir = r2.power(-0.5)
    ir2 = ir * ir
    ir3 = ir * ir2
    ir5 = ir3 * ir2
    v = 4.0 * np.pi * a**3 / 3.0
    c1 = 4.0 * np.pi * a**5 / 15.0
    c2 = 4.0 * np.pi * a**7 / 35.0
    out = [ir * v] + [X[p] * ir3 * c1 for p in range(3)]
    for p, q in DENSITIES[4:]:
        h = X[p] * X[q]
        if p == q:
            h = h - r2 * (1.0 / 3.0)
            out.append(h * ir5 * c2 + ir * c1)
        else:
            out.append(h * ir5 * c2)
    return stack(out)


def _sphere_interior(y, a, order):
    X = Jet.variables(y, order)
    r2 = X[0] * X[0] + X[1] * X[1] + X[2] * X[2]
    a2 = a * a
    out = [(a2 - r2 * (1.0 / 3.0)) * (2.0 * np.pi)]
    f1 = (a2 * 0.5 - r2 * 0.3) * (4.0 * np.pi / 3.0)
    out += [X[p] * f1 for p in range(3)]
    f2 = (a2 * 0.5 - r2 * (5.0 / 14.0)) * (4.0 * np.pi / 5.0)
    radial = (a2 * a2 - r2 * r2 * 0.2) * (np.pi / 3.0)
    for p, q in DENSITIES[4:]:
        h = X[p] * X[q]
        if p == q:
            out.append((h - r2 * (1.0 / 3.0)) * f2 + radial)
        else:
            out.append(h * f2)
    return stack(out)


def _lambda_jet(X, a2, lam0, order):
    lam = Jet.constant(lam0, order)
    n_iter = int(np.ceil(np.log2(order + 1))) + 1 if order > 0 else 0
    for _ in range(n_iter):
        inv = [(lam + a2[k]).power(-1.0) for k in range(3)]
        g = sum(X[k] * X[k] * inv[k] for k in range(3)) - 1.0
        dg = -sum(X[k] * X[k] * inv[k] * inv[k] for k in range(3))
        lam = lam - g / dg
    return lam


def _general(y, a, order, exterior, lam0):
    a = np.asarray(a, dtype=float)
    a2 = a**2
    c2 = a2.max()
    X = Jet.variables(y, order)
    if exterior:
        lam = _lambda_jet(X, a2, lam0, order)
    else:
        lam = Jet.constant(np.zeros(len(y)), order)
    wl = (lam + c2).power(-0.5)
    w = Jet(wl.c[:, None, :] * _NODES[None, :, None], order)
    w2 = w * w
    invB = [(w2 * (a2[k] - c2) + 1.0).power(-1.0) for k in range(3)]
    rs = (invB[0] * invB[1] * invB[2]).sqrt() * 2.0
    Xb = [Jet(X[k].c[:, None, :], order) for k in range(3)]
    xi = sum(Xb[k] * Xb[k] * w2 * invB[k] for k in range(3))
    one_m = 1.0 - xi
    base = one_m * rs
    vol = np.pi * a.prod()

    def integrate(f):
        return f.wsum(_WEIGHTS, axis=1) * wl * vol

    phi = integrate(base)
    first = [integrate(base * w2 * invB[p]) for p in range(3)]
    out = [phi] + [X[p] * first[p] * a2[p] for p in range(3)]
    for p, q in DENSITIES[4:]:
        t = X[p] * X[q] * integrate(base * w2 * w2 * invB[p] * invB[q]) * (a2[p] * a2[q])
        if p == q:
            extra = integrate(one_m * one_m * (1.0 - w2 * c2) * invB[p] * rs)
            t = t + extra * (a2[p] / 4.0)
        out.append(t)
    return stack(out)


def phi_tensor(x, center, semi_axes, deriv_order=0):
    """Potentials of the ten densities and their derivatives up to ``deriv_order``.

    Parameters
    ----------
    x : array_like, shape (N, 3) or (3,)
        Field points.
    center, semi_axes : array_like, shape (3,)
        Ellipsoid geometry.
    deriv_order : int
        Highest Cartesian derivative needed (at most 4).

    Returns
    -------
    PotentialSet
    """
    if not 0 <= deriv_order <= 4:
        raise ValueError("derivative order must lie in 0..4")
    y = _rel(x, center)
    a = np.asarray(semi_axes, dtype=float)
    if np.any(a <= 0):
        raise ValueError("semi-axes must be positive")
    n = len(y)
    lam = lambda_of(y, np.zeros(3), a)
    exterior = lam > _SURFACE_TOL * a.max() ** 2
    sphere = np.allclose(a, a[0], rtol=1e-14)
    coef = np.zeros((n, 10, len(Jet.constant(0.0, deriv_order).c)))
    for mask, ext in ((exterior, True), (~exterior, False)):
        idx = np.flatnonzero(mask)
        for start in range(0, len(idx), _CHUNK):
            sel = idx[start:start + _CHUNK]
            if sphere:
                j = (_sphere_exterior if ext else _sphere_interior)(y[sel], a[0], deriv_order)
            else:
                j = _general(y[sel], a, deriv_order, ext, lam[sel])
            coef[sel] = j.c
    return PotentialSet(Jet(coef, deriv_order))


def image_phi_tensor(x, center, semi_axes, deriv_order=0):
    """Potentials of the mirrored ellipsoid with densities mapped back to the original.

    Equals the integral of rho(x' - c)/|x - M x'| over the original ellipsoid,
    where M reflects across x3 = 0.
    """
    ps = phi_tensor(x, np.asarray(center, dtype=float) * MIRROR, semi_axes, deriv_order)
    return PotentialSet(ps.jet * density_signs()[None, :])


def _gauss01(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def _sphere_dirs(n):
    ct, wt = np.polynomial.legendre.leggauss(n)
    ph = 2.0 * np.pi * np.arange(2 * n) / (2 * n)
    wp = np.full(2 * n, 2.0 * np.pi / (2 * n))
    st = np.sqrt(1.0 - ct**2)
    d = np.stack([
        st[:, None] * np.cos(ph)[None, :],
        st[:, None] * np.sin(ph)[None, :],
        np.broadcast_to(ct[:, None], (n, 2 * n)),
    ], axis=-1).reshape(-1, 3)
    return d, (wt[:, None] * wp[None, :]).ravel()


def _graded(n, levels, toward_one=True):
    """Composite Gauss on [0, 1] with pieces shrinking geometrically toward 1."""
    edges = np.concatenate([[0.0], 1.0 - 0.25 ** np.arange(1, levels + 1), [1.0]])
    t, w = _gauss01(n)
    h = np.diff(edges)
    pts = (edges[:-1, None] + h[:, None] * t[None, :]).ravel()
    return pts, (h[:, None] * w[None, :]).ravel()


def _ellipsoid_rule(x, center, a, n):
    """Volume rule for the ellipsoid, singularity-adapted to the field point."""
    y = x - center
    xi = np.sum(y**2 / a**2)
    if xi < 1.0:
        d, wd = _sphere_dirs(n)
        t, wt = _gauss01(n)
        A = np.sum(d**2 / a**2, axis=-1)
        B = 2.0 * np.sum(y * d / a**2, axis=-1)
        C = xi - 1.0
        R = (-B + np.sqrt(B * B - 4.0 * A * C)) / (2.0 * A)
        r = R[:, None] * t[None, :]
        pts = x + r[..., None] * d[:, None, :]
        w = wd[:, None] * wt[None, :] * R[:, None] * r**2
        return pts.reshape(-1, 3), w.ravel()
    # unit-ball coordinates with the pole facing the field point
    e3 = (y / a) / np.linalg.norm(y / a)
    e1 = np.cross(e3, [1.0, 0.0, 0.0] if abs(e3[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    gap = np.sqrt(xi) - 1.0
    levels = int(np.clip(np.ceil(np.log(gap) / np.log(0.25)) + 1, 1, 14))
    u, wu = _graded(n, levels)
    ct = 2.0 * u - 1.0
    wct = 2.0 * wu
    ph = 2.0 * np.pi * np.arange(2 * n) / (2 * n)
    st = np.sqrt(1.0 - ct**2)
    d = (st[:, None, None] * (np.cos(ph)[None, :, None] * e1 + np.sin(ph)[None, :, None] * e2)
         + ct[:, None, None] * e3).reshape(-1, 3)
    wd = (wct[:, None] * np.full(2 * n, np.pi / n)[None, :]).ravel()
    r, wr = _graded(n, levels)
    pts = center + a * (r[None, :, None] * d[:, None, :])
    w = wd[:, None] * (wr * r**2)[None, :] * a.prod()
    return pts.reshape(-1, 3), w.ravel()


def ellipsoid_integral(x, center, semi_axes, integrand, tol=1e-8, n0=6, n_max=96):
    """Adaptive product-Gauss volume integral over an ellipsoid.

    ``integrand(xp)`` maps source points of shape (M, 3) to values of shape
    (M, ...). The rule order grows until successive results agree to
    ``tol`` relative to the largest component.
    """
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    a = np.asarray(semi_axes, dtype=float)
    prev = None
    n = n0
    while n <= n_max:
        pts, w = _ellipsoid_rule(x, center, a, n)
        val = np.tensordot(w, integrand(pts), axes=(0, 0))
        if prev is not None:
            scale = max(np.abs(val).max(), 1e-300)
            if np.abs(val - prev).max() <= tol * scale:
                return val
        prev = val
        n = int(np.ceil(1.5 * n))
    raise AccuracyError(f"volume quadrature did not reach {tol:g} at order {n_max}")


def phi_quadrature_oracle(x, center, semi_axes, density_order=2, tol=1e-8):
    """Direct quadrature of the density potentials at a single point."""
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    dens = DENSITIES[: N_DENSITY[density_order]]

    def f(xp):
        y = xp - center
        inv = 1.0 / np.linalg.norm(x - xp, axis=-1)
        cols = [np.prod(y[:, list(d)], axis=-1) if d else np.ones(len(y)) for d in dens]
        return np.stack(cols, axis=-1) * inv[:, None]

    return ellipsoid_integral(x, center, semi_axes, f, tol=tol)


def warn_if_slender(semi_axes, limit=10.0):
    a = np.asarray(semi_axes, dtype=float)
    if a.max() / a.min() > limit:
        warnings.warn(f"aspect ratio {a.max() / a.min():.1f} slows the potential quadrature", stacklevel=2)
