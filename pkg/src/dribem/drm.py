"""Dual-reciprocity radial basis functions and boundary blocks.

The capacity term ``C du/dt`` is interpolated as ``C * sum_m a_m chi_m``
with ``chi = 1 + rho + rho^2`` (rho = r / ell). Its particular potential
``Gamma = ell^2 (rho^2/6 + rho^3/12 + rho^4/20)`` satisfies
``lap Gamma = chi``, which turns each layer's domain integral of
``C G chi`` into integrals over that layer's full boundary, interface
included:

    S_m(x) = sum_layers C [ int G dGamma/dn' - Gamma dG/dn' ] - C(x)/K(x) Gamma(x)

The interface contributions are taken on integration-only panels; they
are absent from the temperature unknowns.
"""
from dataclasses import dataclass

import numpy as np

# Gamma = sum_n coef_n r^n with coef depending on ell
_POWERS = (2, 3, 4)


def _coefs(ell):
    return (1.0 / 6.0, 1.0 / (12.0 * ell), 1.0 / (20.0 * ell**2))


def rbf_chi(x, xm, ell):
    """Interpolation function ``1 + rho + rho^2`` for every pair, shape (N, M)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xm = np.atleast_2d(np.asarray(xm, dtype=float))
    r = np.linalg.norm(x[:, None, :] - xm[None], axis=-1) / ell
    return 1.0 + r + r * r


def rbf_gamma(x, xm, ell, order=0):
    """Particular potential and its x-derivatives up to ``order`` (<= 3).

    Returns a list whose k-th entry has shape (N, M) + (3,) * k.
    """
    if not 0 <= order <= 3:
        raise ValueError("particular potential derivatives are available up to order 3")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xm = np.atleast_2d(np.asarray(xm, dtype=float))
    y = x[:, None, :] - xm[None]
    r2 = np.einsum("...i,...i->...", y, y)
    r = np.sqrt(r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ir = np.where(r > 0, 1.0 / r, 0.0)
    c2, c3, c4 = _coefs(ell)
    out = [c2 * r2 + c3 * r2 * r + c4 * r2 * r2]
    if order >= 1:
        # d r^n = n r^(n-2) y
        f1 = 2 * c2 + 3 * c3 * r + 4 * c4 * r2
        out.append(f1[..., None] * y)
    if order >= 2:
        # d2 r^n = n r^(n-2) delta + n(n-2) r^(n-4) y y
        f2 = 3 * c3 * ir + 8 * c4
        yy = y[..., :, None] * y[..., None, :]
        out.append(f1[..., None, None] * np.eye(3) + f2[..., None, None] * yy)
    if order >= 3:
        # d3 r^n = n(n-2) r^(n-4) (delta y)_sym + n(n-2)(n-4) r^(n-6) y y y
        f3 = -3 * c3 * ir**3
        e = np.eye(3)
        sym = (e[:, :, None] * y[..., None, None, :] + e[:, None, :] * y[..., None, :, None]
               + e[None, :, :] * y[..., :, None, None])
        yyy = yy[..., None] * y[..., None, None, :]
        out.append(f2[..., None, None, None] * sym + f3[..., None, None, None] * yyy)
    return out


def rbf_gamma_normal(x, xm, normals, ell):
    """``n · grad_x Gamma(x, x^m)`` for points ``x`` with unit normals, shape (N, M)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xm = np.atleast_2d(np.asarray(xm, dtype=float))
    y = x[:, None, :] - xm[None]
    r2 = np.einsum("...i,...i->...", y, y)
    c2, c3, c4 = _coefs(ell)
    f1 = 2 * c2 + 3 * c3 * np.sqrt(r2) + 4 * c4 * r2
    return f1 * np.einsum("...i,...i->...", y, np.asarray(normals)[:, None, :])


class SingularInterpolationError(ValueError):
    """Raised when the interpolation matrix is singular (repeated points)."""


@dataclass
class RbfSystem:
    """Interpolation points (boundary nodes then interior points) and matrix."""

    points: np.ndarray
    ell: float
    F: np.ndarray


def build_rbf_system(points, ell):
    """Interpolation matrix ``F[k, m] = chi(x_k, x^m)``."""
    pts = np.asarray(points, dtype=float)
    scale = ell * 1e-12
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(len(pts)) * ell
    if np.any(d < scale):
        raise SingularInterpolationError("duplicate interpolation points")
    return RbfSystem(points=pts, ell=ell, F=rbf_chi(pts, pts, ell))


def assemble_interpolation(system, values):
    """Source densities reproducing ``values`` at the interpolation points."""
    try:
        return np.linalg.solve(system.F, values)
    except np.linalg.LinAlgError as exc:
        raise SingularInterpolationError(str(exc)) from exc


def boundary_gamma(quad, centers, ell, chunk=4096):
    """Capacity-weighted Gamma and dGamma/dn' at all base points, shape (Q, M) each."""
    cap = quad.point_values(quad.panels.capacity)
    Q = quad.n_points
    gam = np.empty((Q, len(centers)))
    dgn = np.empty_like(gam)
    for s in range(0, Q, chunk):
        sl = slice(s, s + chunk)
        gam[sl] = rbf_gamma(quad.points[sl], centers, ell)[0] * cap[sl, None]
        dgn[sl] = rbf_gamma_normal(quad.points[sl], centers, quad.normals[sl], ell) * cap[sl, None]
    return gam, dgn


def assemble_drm_blocks(quad, KG, KF, X, centers, ell, boundary_gammas=None):
    """Dual-reciprocity block S (rows x interpolation points) at collocation points.

    Uses the subtraction form, in which the free term is replaced by the
    capacity-weighted double-layer integral of the constant Gamma(x), so
    boundary and corner rows need no solid angle.
    """
    gam, dgn = boundary_gammas if boundary_gammas is not None else boundary_gamma(quad, centers, ell)
    cap = quad.point_values(quad.panels.capacity)
    S = KG @ dgn - KF @ gam
    S += (KF @ cap)[:, None] * rbf_gamma(X, centers, ell)[0]
    return S


def drm_derivative_rows(quad, KGk, KFk, X, centers, ell, scenario, order, boundary_gammas=None):
    """k-th field derivatives of the S rows at interior points, shape (R, M) + (3,) * k."""
    gam, dgn = boundary_gammas if boundary_gammas is not None else boundary_gamma(quad, centers, ell)
    S = np.einsum("rq...,qm->rm...", KGk, dgn) - np.einsum("rq...,qm->rm...", KFk, gam)
    X = np.atleast_2d(X)
    ratio = np.where(X[:, 2] >= 0, scenario.upper.capacity / scenario.upper.conductivity,
                     scenario.lower.capacity / scenario.lower.conductivity)
    free = rbf_gamma(X, centers, ell, order)[order]
    return S - ratio.reshape((-1, 1) + (1,) * order) * free
