"""Truncated Taylor arithmetic in three variables.

A :class:`Jet` stores the Taylor coefficients of a scalar field about a
batch of expansion points, truncated at a fixed total degree. Arithmetic
on jets propagates derivatives exactly, which is how the ellipsoid
potentials obtain their Cartesian derivatives when the confocal parameter
depends implicitly on the field point.
"""
from functools import lru_cache
import itertools
import math

import numpy as np


@lru_cache(maxsize=None)
def monomials(order):
    """Exponent triples of total degree <= ``order``, sorted by degree."""
    exps = []
    for d in range(order + 1):
        for i in range(d, -1, -1):
            for j in range(d - i, -1, -1):
                exps.append((i, j, d - i - j))
    return tuple(exps)


@lru_cache(maxsize=None)
def _product_table(order):
    exps = monomials(order)
    index = {e: n for n, e in enumerate(exps)}
    ia, ib, ic = [], [], []
    for a, ea in enumerate(exps):
        for b, eb in enumerate(exps):
            s = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2])
            if sum(s) <= order:
                ia.append(a)
                ib.append(b)
                ic.append(index[s])
    scatter = np.zeros((len(ic), len(exps)))
    scatter[np.arange(len(ic)), ic] = 1.0
    return np.array(ia), np.array(ib), scatter


@lru_cache(maxsize=None)
def _diff_table(order, axis):
    """Source indices and factors for d/dx_axis, mapping order -> order-1."""
    src = monomials(order)
    index = {e: n for n, e in enumerate(src)}
    rows, fac = [], []
    for e in monomials(order - 1):
        up = list(e)
        up[axis] += 1
        rows.append(index[tuple(up)])
        fac.append(up[axis])
    return np.array(rows), np.array(fac, dtype=float)


@lru_cache(maxsize=None)
def _tensor_table(order, k):
    """Coefficient index and factorial weight for each k-index tuple."""
    index = {e: n for n, e in enumerate(monomials(order))}
    idx, fac = [], []
    for tup in itertools.product(range(3), repeat=k):
        e = [0, 0, 0]
        for t in tup:
            e[t] += 1
        idx.append(index[tuple(e)])
        fac.append(math.prod(math.factorial(x) for x in e))
    return np.array(idx), np.array(fac, dtype=float)


class Jet:
    """Taylor coefficients ``c[..., m]`` over the monomials of :func:`monomials`."""

    __array_priority__ = 1000

    def __init__(self, coef, order):
        self.c = np.asarray(coef)
        self.order = order

    @property
    def shape(self):
        return self.c.shape[:-1]

    @property
    def value(self):
        return self.c[..., 0]

    @classmethod
    def constant(cls, value, order):
        value = np.asarray(value)
        c = np.zeros(value.shape + (len(monomials(order)),), dtype=value.dtype if value.dtype.kind == "c" else float)
        c[..., 0] = value
        return cls(c, order)

    @classmethod
    def variables(cls, x0, order):
        """Return the three coordinate jets expanded about points ``x0[..., 3]``."""
        x0 = np.asarray(x0, dtype=float)
        out = []
        for i in range(3):
            j = cls.constant(x0[..., i], order)
            if order > 0:
                j.c[..., 1 + i] = 1.0
            out.append(j)
        return out

    def _coef(self, other):
        if isinstance(other, Jet):
            return other.c
        other = np.asarray(other)
        c = np.zeros(other.shape + (self.c.shape[-1],), dtype=np.result_type(other, float))
        c[..., 0] = other
        return c

    def __add__(self, other):
        return Jet(self.c + self._coef(other), self.order)

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.c - self._coef(other), self.order)

    def __rsub__(self, other):
        return Jet(self._coef(other) - self.c, self.order)

    def __neg__(self):
        return Jet(-self.c, self.order)

    def __mul__(self, other):
        if isinstance(other, Jet):
            if self.order == 0:
                return Jet(self.c * other.c, 0)
            ia, ib, scatter = _product_table(self.order)
            return Jet((self.c[..., ia] * other.c[..., ib]) @ scatter, self.order)
        return Jet(self.c * np.asarray(other)[..., None], self.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.power(-1.0)
        return Jet(self.c / np.asarray(other)[..., None], self.order)

    def __rtruediv__(self, other):
        return self.power(-1.0) * other

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(np.ones(self.shape), self.order)
            for _ in range(p):
                out = out * self
            return out
        return self.power(p)

    def power(self, p):
        """Real power through the binomial series about the constant term."""
        a0 = self.value
        h = Jet(self.c.copy(), self.order)
        h.c[..., 0] = 0.0
        out = Jet.constant(a0 ** p, self.order)
        term = Jet.constant(np.ones(self.shape), self.order)
        binom = 1.0
        for n in range(1, self.order + 1):
            binom *= (p - n + 1) / n
            term = term * h
            out = out + term * (binom * a0 ** (p - n))
        return out

    def sqrt(self):
        return self.power(0.5)

    def diff(self, axis):
        """Partial derivative along ``axis``; the result has one order less."""
        if self.order == 0:
            return Jet(np.zeros_like(self.c), 0)
        rows, fac = _diff_table(self.order, axis)
        return Jet(self.c[..., rows] * fac, self.order - 1)

    def truncate(self, order):
        return Jet(self.c[..., : len(monomials(order))], order)

    def derivatives(self, k):
        """k-th derivative tensor with shape ``shape + (3,) * k``."""
        if k > self.order:
            raise ValueError(f"jet of order {self.order} has no derivative of order {k}")
        idx, fac = _tensor_table(self.order, k)
        return (self.c[..., idx] * fac).reshape(self.shape + (3,) * k)

    def take(self, index, axis):
        return Jet(np.take(self.c, index, axis=axis), self.order)

    def wsum(self, weights, axis):
        """Weighted sum over a batch axis."""
        w = np.expand_dims(np.asarray(weights), -1)
        return Jet((self.c * w).sum(axis=axis), self.order)


def stack(jets, axis=-1):
    """Stack jets of equal order along a new batch axis."""
    order = jets[0].order
    ax = axis if axis >= 0 else axis - 1
    return Jet(np.stack([j.c for j in jets], axis=ax), order)


def where(mask, a, b):
    """Select coefficients of ``a`` where ``mask`` holds, else ``b``."""
    return Jet(np.where(np.asarray(mask)[..., None], a.c, b.c), a.order)
