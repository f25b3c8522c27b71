"""Bimaterial Eshelby tensors of an ellipsoidal inclusion.

For a density rho over the inclusion (1, y_p or y_p y_q with y = x' - c):

* ``L_rho(x)``   = integral of G(x, x') rho dx'
* ``D_i,rho(x)`` = integral of K^s dG/dx'_i rho dx'

where K^s is the conductivity of the matrix layer holding the inclusion.
Both are built from the direct potentials and those of the mirrored
ellipsoid, and are returned as jets so field derivatives are exact.
"""
from dataclasses import dataclass

import numpy as np

from .jets import Jet, stack, where
from .kernels import MIRROR
from .potentials import DENSITIES, PAIR_INDEX, image_phi_tensor, phi_tensor

_PAIRS = tuple(d for d in DENSITIES if len(d) == 2)


def coefficient_layout(order):
    """Eigen coefficients of one inclusion as ``(kind, i, density, weight)``.

    ``kind`` is ``"etg"`` (eigen temperature gradient, flux index ``i``) or
    ``"ehs"`` (eigen heat storage, ``i`` unused). ``weight`` is 2 for the
    off-diagonal quadratic terms, which stand for both (p, q) and (q, p).
    Order: u0_i, w0 | u1_ip, w1_p | u2_i(pq), w2_(pq).
    """
    out = [("etg", i, 0, 1.0) for i in range(3)] + [("ehs", 0, 0, 1.0)]
    if order in ("linear", "quadratic"):
        out += [("etg", i, 1 + p, 1.0) for i in range(3) for p in range(3)]
        out += [("ehs", 0, 1 + p, 1.0) for p in range(3)]
    if order == "quadratic":
        out += [("etg", i, PAIR_INDEX[pq], 1.0 if pq[0] == pq[1] else 2.0) for i in range(3) for pq in _PAIRS]
        out += [("ehs", 0, PAIR_INDEX[pq], 1.0 if pq[0] == pq[1] else 2.0) for pq in _PAIRS]
    return out


@dataclass
class EshelbyEval:
    """``D`` has batch shape (N, 3, 10) and ``L`` has (N, 10)."""

    D: Jet
    L: Jet

    def columns(self, layout, k, ehs_scale=1.0):
        """k-th field derivative of the disturbance per unit coefficient.

        Returns an array of shape (N, len(layout)) + (3,) * k.
        """
        d = self.D.derivatives(k)
        l = self.L.derivatives(k)
        cols = []
        for kind, i, rho, w in layout:
            if kind == "etg":
                cols.append(w * d[:, i, rho])
            else:
                cols.append(w * ehs_scale * l[:, rho])
        return np.stack(cols, axis=1)


def _side_constants(inclusion_upper, k_upper, k_lower):
    ks = k_upper if inclusion_upper else k_lower
    kb = k_lower if inclusion_upper else k_upper
    return ks, kb, (ks - kb) / (ks + kb)


def eshelby_eval(x, center, semi_axes, k_upper, k_lower, deriv_order=0, field_upper=None):
    """Eshelby tensors D and L with field derivatives up to ``deriv_order`` (<= 3).

    Parameters
    ----------
    x : array_like, shape (N, 3)
        Field points.
    center, semi_axes : array_like
        Inclusion geometry; the inclusion must not touch x3 = 0.
    k_upper, k_lower : float
        Layer conductivities.
    field_upper : array_like of bool, optional
        Side of each field point; defaults to x3 >= 0.
    """
    if not 0 <= deriv_order <= 3:
        raise ValueError("Eshelby derivatives are available up to order 3")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    center = np.asarray(center, dtype=float)
    a = np.asarray(semi_axes, dtype=float)
    if abs(center[2]) <= a[2]:
        raise ValueError("inclusion crosses the interface x3 = 0")
    inc_upper = center[2] > 0
    ks, kb, beta = _side_constants(inc_upper, k_upper, k_lower)
    fu = x[:, 2] >= 0 if field_upper is None else np.broadcast_to(np.asarray(field_upper, dtype=bool), len(x))
    same = fu == inc_upper
    pot = phi_tensor(x, center, a, deriv_order + 1).jet
    opposite_scale = 1.0 / (2.0 * np.pi * (ks + kb))
    if np.any(same) and beta != 0.0:
        img = image_phi_tensor(x, center, a, deriv_order + 1).jet
    else:
        img = None
    L_same = pot * (1.0 / (4.0 * np.pi * ks))
    if img is not None:
        L_same = L_same + img * (beta / (4.0 * np.pi * ks))
    L = where(same[:, None], L_same, pot * opposite_scale).truncate(deriv_order)
    D = []
    for i in range(3):
        gi = pot.diff(i)
        d_same = gi * (-1.0 / (4.0 * np.pi))
        if img is not None:
            d_same = d_same + img.diff(i) * (-beta * MIRROR[i] / (4.0 * np.pi))
        D.append(where(same[:, None], d_same, gi * (-ks * opposite_scale)))
    return EshelbyEval(stack(D, axis=1), L)


def tensor_D(x, inclusion, k_upper, k_lower, deriv_order=0):
    """D block for an :class:`~dribem.model.Inclusion`; see :func:`eshelby_eval`."""
    return eshelby_eval(x, inclusion.center, inclusion.semi_axes, k_upper, k_lower, deriv_order).D


def tensor_L(x, inclusion, k_upper, k_lower, deriv_order=0):
    """L block for an :class:`~dribem.model.Inclusion`; see :func:`eshelby_eval`."""
    return eshelby_eval(x, inclusion.center, inclusion.semi_axes, k_upper, k_lower, deriv_order).L
