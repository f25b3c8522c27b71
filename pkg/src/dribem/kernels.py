"""Steady bimaterial Green's function for two bonded half-spaces.

The interface is the plane x3 = 0. The source conductivity ``K^s`` is the
conductivity of the half-space that contains the source point; the image
source sits at the mirror point across the interface. Points with x3 = 0
count as upper unless the caller passes explicit side flags, which is how
one-sided limits are taken.
"""
from dataclasses import dataclass

import numpy as np

MIRROR = np.array([1.0, 1.0, -1.0])


class SingularPointError(ValueError):
    """Raised when field and source points coincide."""


def image_point(xp):
    """Reflect points across the interface plane x3 = 0."""
    return np.asarray(xp, dtype=float) * MIRROR


def inverse_distance_derivs(r, order):
    """Derivatives of ``1/|r|`` with respect to ``r`` up to ``order`` (<= 4).

    Returns a list whose k-th entry has shape ``r.shape[:-1] + (3,) * k``.
    """
    r = np.asarray(r, dtype=float)
    r2 = np.einsum("...i,...i->...", r, r)
    if np.any(r2 == 0.0):
        raise SingularPointError("field point coincides with source point")
    ir = 1.0 / np.sqrt(r2)
    ir2 = ir * ir
    eye = np.eye(3)
    out = [ir]
    if order >= 1:
        ir3 = ir * ir2
        out.append(-r * ir3[..., None])
    if order >= 2:
        ir5 = ir3 * ir2
        rr = r[..., :, None] * r[..., None, :]
        out.append(3.0 * rr * ir5[..., None, None] - eye * ir3[..., None, None])
    if order >= 3:
        ir7 = ir5 * ir2
        rrr = rr[..., None] * r[..., None, None, :]
        dr = (eye[:, :, None] * r[..., None, None, :]
              + eye[:, None, :] * r[..., None, :, None]
              + eye[None, :, :] * r[..., :, None, None])
        out.append(-15.0 * rrr * ir7[..., None, None, None] + 3.0 * dr * ir5[..., None, None, None])
    if order >= 4:
        ir9 = ir7 * ir2
        rrrr = rrr[..., None] * r[..., None, None, None, :]
        e = eye
        drr = (e[:, :, None, None] * rr[..., None, None, :, :]
               + e[:, None, :, None] * rr[..., None, :, None, :]
               + e[:, None, None, :] * rr[..., None, :, :, None]
               + e[None, :, :, None] * rr[..., :, None, None, :]
               + e[None, :, None, :] * rr[..., :, None, :, None]
               + e[None, None, :, :] * rr[..., :, :, None, None])
        dd = (e[:, :, None, None] * e[None, None, :, :]
              + e[:, None, :, None] * e[None, :, None, :]
              + e[:, None, None, :] * e[None, :, :, None])
        s = (...,) + (None,) * 4
        out.append(105.0 * rrrr * ir9[s] - 15.0 * drr * ir7[s] + 3.0 * dd * ir5[s])
    if order >= 5:
        raise ValueError("derivatives of 1/r are available up to order 4")
    return out


def _side(x3, flag):
    if flag is None:
        return np.asarray(x3) >= 0.0
    return np.broadcast_to(np.asarray(flag, dtype=bool), np.shape(x3))


def branch_coefficients(field_upper, src_upper, k_upper, k_lower):
    """Weights of the direct and image ``1/r`` terms.

    Returns ``(direct, image)`` such that G = direct/|x-x'| + image/|x-Mx'|.
    """
    ks = np.where(src_upper, k_upper, k_lower)
    kb = np.where(src_upper, k_lower, k_upper)
    same = field_upper == src_upper
    beta = (ks - kb) / (ks + kb)
    direct = np.where(same, 1.0 / (4.0 * np.pi * ks), 1.0 / (2.0 * np.pi * (ks + kb)))
    image = np.where(same, beta / (4.0 * np.pi * ks), 0.0)
    return direct, image


def greens(x, xp, k_upper, k_lower, field_upper=None, src_upper=None):
    """Bimaterial Green's function G(x, x') for a unit source at ``xp``."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    fu = _side(x[..., 2], field_upper)
    su = _side(xp[..., 2], src_upper)
    a, b = branch_coefficients(fu, su, k_upper, k_lower)
    d = np.linalg.norm(x - xp, axis=-1)
    if np.any(d == 0.0):
        raise SingularPointError("field point coincides with source point")
    return a / d + b / _image_distance(x, xp, b)


def _image_vector(x, xp, image_weight):
    # the image term is absent on cross-side pairs, where x may equal Mx'
    r = x - xp * MIRROR
    return np.where((np.asarray(image_weight) == 0.0)[..., None], 1.0, r)


def _image_distance(x, xp, image_weight):
    return np.linalg.norm(_image_vector(x, xp, image_weight), axis=-1)


@dataclass
class KernelEval:
    """Field derivatives of G and of its source gradient.

    ``g[k]`` has shape ``(..., 3**k as k axes)`` and holds the k-th field
    derivative of G. ``g_src[k]`` has a leading source index ``j`` before
    the k field indices and holds the k-th field derivative of dG/dx'_j.
    """

    g: list
    g_src: list

    def normal_flux(self, normal, k=0):
        """k-th field derivative of n'·dG/dx'."""
        t = self.g_src[k]
        n = np.asarray(normal, dtype=float)
        n = n.reshape(n.shape[:-1] + (3,) + (1,) * k)
        return (t * n).sum(axis=-(k + 1))


def greens_derivs(x, xp, k_upper, k_lower, max_order=0, field_upper=None, src_upper=None):
    """Closed-form field derivatives of G and dG/dx' up to ``max_order`` (<= 3)."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    fu = _side(x[..., 2], field_upper)
    su = _side(xp[..., 2], src_upper)
    a, b = branch_coefficients(fu, su, k_upper, k_lower)
    td = inverse_distance_derivs(x - xp, max_order + 1)
    has_image = np.any(b != 0.0)
    if has_image:
        ti = inverse_distance_derivs(_image_vector(x, xp, b), max_order + 1)
    g, g_src = [], []
    for k in range(max_order + 1):
        s = (...,) + (None,) * k
        gk = a[s] * td[k]
        sk = -a[s + (None,)] * td[k + 1]
        if has_image:
            gk = gk + b[s] * ti[k]
            sk = sk - b[s + (None,)] * MIRROR.reshape((3,) + (1,) * k) * ti[k + 1]
        g.append(gk)
        g_src.append(sk)
    return KernelEval(g, g_src)
