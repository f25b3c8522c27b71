import numpy as np
import pytest

from dribem.eim import capacity_reference, disturbance_columns, eigen_layout, eim_rows, eval_disturbance
from dribem.model import Inclusion, MaterialProps

from conftest import slab_scenario


def incl(center, order, k=10.0, c=1.0, a=(0.1, 0.1, 0.1)):
    return Inclusion(center, a, MaterialProps(k, c), order)


def test_layout_sizes_and_masks():
    lay = eigen_layout([incl((0.5, 0.5, 0.2), "uniform"), incl((0.5, 0.5, -0.2), "linear"),
                        incl((0.2, 0.2, 0.3), "quadratic")])
    np.testing.assert_array_equal(lay.offsets, [0, 4, 20, 60])
    mask = lay.ehs_mask()
    assert mask[:4].sum() == 1 and mask[4:20].sum() == 4 and mask[20:].sum() == 10


def test_row_factors():
    sc = slab_scenario(4.0, 10.0, 2.0, 3.0)
    inc = [incl((0.5, 0.5, 0.2), "linear", k=8.0, c=2.0), incl((0.5, 0.5, -0.2), "uniform", k=1.0, c=6.0)]
    lay = eigen_layout(inc)
    c_ref = capacity_reference(sc, inc)
    assert c_ref == 10.0
    rows = eim_rows(lay, sc, c_ref)
    assert [r.column for r in rows] == list(range(lay.size))
    mask = lay.ehs_mask()
    # conductivity rows carry K^I/K^s - 1 and a derivative one order up
    first = [r for r in rows if r.inclusion == 0]
    assert {r.factor for r, m in zip(first, mask) if not m} == {8.0 / 4.0 - 1.0}
    assert {r.factor for r, m in zip(first, mask) if m} == {-(10.0 - 2.0) / 10.0}
    assert {r.order for r, m in zip(first, mask) if not m} == {1, 2}
    assert {r.order for r, m in zip(first, mask) if m} == {0, 1}
    second = [r for r in rows if r.inclusion == 1]
    assert sorted(r.factor for r in second) == sorted([1.0 / 2.0 - 1.0] * 3 + [-(3.0 - 6.0) / 10.0])


def test_capacity_reference_without_capacity():
    assert capacity_reference(slab_scenario(1.0, 0.0, 1.0, 0.0)) == 1.0


@pytest.mark.parametrize("order", ["uniform", "quadratic"])
def test_gradient_columns_match_differences(order):
    sc = slab_scenario(4.0, 10.0, 2.0, 3.0)
    lay = eigen_layout([incl((0.5, 0.5, 0.2), order, a=(0.15, 0.1, 0.08))])
    X = np.array([[0.31, 0.44, 0.35], [0.6, 0.52, -0.1], [0.52, 0.49, 0.21]])
    etg1, ehs1 = disturbance_columns(X, lay, sc, 1, c_ref=10.0)
    h = 1e-5
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        p, m = disturbance_columns(X + e, lay, sc, 0, 10.0), disturbance_columns(X - e, lay, sc, 0, 10.0)
        np.testing.assert_allclose(etg1[:, i], (p[0][:, 0] - m[0][:, 0]) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(ehs1[:, i], (p[1][:, 0] - m[1][:, 0]) / (2 * h), atol=1e-8)


def test_eval_disturbance_shape():
    sc = slab_scenario()
    lay = eigen_layout([incl((0.5, 0.5, 0.2), "linear")])
    out = eval_disturbance(np.zeros((2, 3)) + 0.3, lay, sc, np.ones(lay.size), np.zeros(lay.size), order=2)
    assert out.shape == (2, 3, 3)
