"""Equivalent-inclusion coupling: eigen-field disturbances and matching rows.

Each inhomogeneity is replaced by matrix material carrying a polynomial
eigen temperature gradient ``u*`` (ETG) and an eigen heat storage ``W``
(EHS) about its centre. Their disturbance is

    u'(x) = D(x) . u* + L(x) . dW/dt

with the Eshelby blocks of :mod:`dribem.eshelby`; it follows from the
source ``-div(K^s u* Theta) + dW/dt Theta`` of the equivalent problem.
The EHS unknowns are stored as ``w = W / C_ref`` so that they share the
scale of temperatures. At the centre, the equivalent conditions read

    (K^I/K^s - 1) d^(k+1) u + m u*_k = 0          (m = 1, 1, 2 for k = 0, 1, 2)
    m w_k - (C^s - C^I)/C_ref d^k u = 0

where ``d^k u`` is the k-th derivative of the full representation.
"""
from dataclasses import dataclass

import numpy as np

from .eshelby import coefficient_layout, eshelby_eval
from .potentials import DENSITIES


def capacity_reference(scenario, inclusions=()):
    """Scale for the eigen heat storage unknowns."""
    caps = [scenario.upper.capacity, scenario.lower.capacity] + [i.props.capacity for i in inclusions]
    c = max(caps)
    return c if c > 0 else 1.0


@dataclass
class EigenLayout:
    """Column offsets of every inclusion's coefficients in the eigen block."""

    inclusions: tuple
    layouts: list
    offsets: np.ndarray

    @property
    def size(self):
        return int(self.offsets[-1]) if len(self.offsets) else 0

    def ehs_mask(self):
        mask = np.zeros(self.size, dtype=bool)
        for lay, off in zip(self.layouts, self.offsets):
            for n, (kind, *_rest) in enumerate(lay):
                mask[off + n] = kind == "ehs"
        return mask


def eigen_layout(inclusions):
    layouts = [coefficient_layout(inc.eigen_order) for inc in inclusions]
    offsets = np.concatenate([[0], np.cumsum([len(l) for l in layouts])]).astype(int)
    return EigenLayout(tuple(inclusions), layouts, offsets)


def disturbance_columns(X, layout, scenario, order=0, c_ref=1.0, field_upper=None):
    """Disturbance per unit eigen coefficient, split by kind.

    Returns ``(etg, ehs)`` each of shape (N, 3**order, n_eigen): the k-th
    derivative of the temperature disturbance per unit ETG coefficient,
    and per unit rate of the scaled EHS coefficient.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = 3**order
    etg = np.zeros((len(X), T, layout.size))
    ehs = np.zeros_like(etg)
    ku, kl = scenario.upper.conductivity, scenario.lower.conductivity
    for inc, lay, off in zip(layout.inclusions, layout.layouts, layout.offsets):
        ev = eshelby_eval(X, inc.center, inc.semi_axes, ku, kl, order, field_upper)
        cols = ev.columns(lay, order, ehs_scale=c_ref).reshape(len(X), len(lay), T)
        kinds = np.array([k == "ehs" for k, *_ in lay])
        block = np.swapaxes(cols, 1, 2)
        etg[:, :, off:off + len(lay)] = np.where(kinds, 0.0, block)
        ehs[:, :, off:off + len(lay)] = np.where(kinds, block, 0.0)
    return etg, ehs


def eval_disturbance(X, layout, scenario, coeffs, rates, order=0, c_ref=1.0, field_upper=None):
    """k-th derivative of the total disturbance of all inclusions, shape (N,) + (3,)*order."""
    etg, ehs = disturbance_columns(X, layout, scenario, order, c_ref, field_upper)
    out = etg @ coeffs + ehs @ rates
    return out.reshape((len(out),) + (3,) * order)


@dataclass(frozen=True)
class EimRow:
    """One equivalent condition: coefficient column, derivative order and component.

    The row reads ``weight * e[column] + factor * d^order u [component] = 0``.
    """

    inclusion: int
    column: int
    order: int
    component: tuple
    weight: float
    factor: float


def eim_rows(layout, scenario, c_ref=1.0):
    """Equivalent conditions for every coefficient of every inclusion."""
    rows = []
    for n, (inc, lay, off) in enumerate(zip(layout.inclusions, layout.layouts, layout.offsets)):
        matrix = scenario.upper if inc.upper else scenario.lower
        kappa = inc.props.conductivity / matrix.conductivity
        gamma = (matrix.capacity - inc.props.capacity) / c_ref
        for j, (kind, i, rho, _w) in enumerate(lay):
            dens = DENSITIES[rho]
            level = len(dens)
            weight = 2.0 if level == 2 else 1.0
            if kind == "etg":
                rows.append(EimRow(n, off + j, level + 1, (i,) + tuple(dens), weight, kappa - 1.0))
            else:
                rows.append(EimRow(n, off + j, level, tuple(dens), weight, -gamma))
    return rows
