import numpy as np
import pytest

from dribem.eshelby import coefficient_layout, eshelby_eval
from dribem.model import EIGEN_COUNTS
from dribem.potentials import phi_tensor

CENTER = np.array([0.5, 0.5, 0.3])


def test_layout_counts():
    for order, n in EIGEN_COUNTS.items():
        assert len(coefficient_layout(order)) == n


def test_full_space_sphere_interior_gradient():
    # unit uniform ETG along x1 inside a sphere: du'/dx_j = delta_1j / 3
    x = CENTER + np.array([[0.01, -0.02, 0.03], [0.0, 0.0, 0.0]])
    ev = eshelby_eval(x, CENTER, [0.1] * 3, 3.0, 3.0, deriv_order=1)
    grad = ev.D.derivatives(1)[:, :, 0]
    np.testing.assert_allclose(grad, np.broadcast_to(np.eye(3) / 3, grad.shape), atol=1e-14)


def test_full_space_reduces_to_potential_gradient():
    x = np.array([[0.2, 0.7, 0.6], [0.45, 0.52, 0.33]])
    a = [0.2, 0.2, 0.1]
    ev = eshelby_eval(x, CENTER, a, 2.0, 2.0, deriv_order=0)
    pot = phi_tensor(x, CENTER, a, 1)
    np.testing.assert_allclose(ev.D.value, -np.moveaxis(pot.derivatives(1), -1, 1) / (4 * np.pi), rtol=1e-14)
    np.testing.assert_allclose(ev.L.value, pot.values / (4 * np.pi * 2.0), rtol=1e-14)


def test_sphere_far_field_and_center_value():
    k = 2.5
    high = np.array([0.5, 0.5, 3.0])
    ev = eshelby_eval([high], high, [1.0] * 3, k, k)
    np.testing.assert_allclose(ev.L.value[0, 0], 1 / (2 * k), rtol=1e-14)
    far = CENTER + np.array([[300.0, -200.0, 400.0]])
    ev = eshelby_eval(far, CENTER, [0.1] * 3, k, k)
    r = far[0] - CENTER
    d = np.linalg.norm(r)
    np.testing.assert_allclose(ev.D.value[0, :, 0], 0.1**3 / 3 * r / d**3, rtol=1e-12)
    np.testing.assert_allclose(ev.L.value[0, 0], (4 / 3 * np.pi * 0.1**3) / (4 * np.pi * k * d), rtol=1e-12)


@pytest.mark.parametrize("axes", [[0.1] * 3, [0.2, 0.2, 0.1]])
def test_interface_continuity(axes):
    ku, kl = 4.0, 2.0
    x = np.array([[0.3, 0.6, 0.0]])
    up = eshelby_eval(x, CENTER, axes, ku, kl, 1, field_upper=True)
    lo = eshelby_eval(x, CENTER, axes, ku, kl, 1, field_upper=False)
    for blk in ("D", "L"):
        a, b = getattr(up, blk), getattr(lo, blk)
        np.testing.assert_allclose(a.value, b.value, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(ku * a.derivatives(1)[..., 2], kl * b.derivatives(1)[..., 2], rtol=1e-12, atol=1e-14)


def test_disturbance_continuous_across_inclusion_surface():
    axes = np.array([0.2, 0.2, 0.1])
    layout = coefficient_layout("quadratic")
    coef = np.random.default_rng(0).normal(size=len(layout))
    d = np.array([0.4, -0.3, 0.7])
    d /= np.sqrt(np.sum(d**2 / axes**2))
    pts = CENTER + np.array([d * (1 - 1e-9), d * (1 + 1e-9)])
    cols = eshelby_eval(pts, CENTER, axes, 4.0, 2.0, 1).columns(layout, 0)
    u = cols @ coef
    np.testing.assert_allclose(u[0], u[1], rtol=1e-6)


def test_image_vanishes_for_matched_layers():
    x = np.array([[0.2, 0.3, 0.4]])
    a = [0.2, 0.2, 0.1]
    ev = eshelby_eval(x, CENTER, a, 3.0, 3.0)
    pot = phi_tensor(x, CENTER, a, 0)
    np.testing.assert_allclose(ev.L.value, pot.values / (12 * np.pi), rtol=1e-14)


def test_crossing_inclusion_rejected():
    with pytest.raises(ValueError):
        eshelby_eval([[0, 0, 1.0]], [0.5, 0.5, 0.05], [0.1] * 3, 1.0, 2.0)
