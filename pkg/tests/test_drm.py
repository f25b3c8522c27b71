import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dribem.bem import BoundaryQuadrature, assemble_bie, build_panels
from dribem.drm import (SingularInterpolationError, assemble_drm_blocks, assemble_interpolation,
                        build_rbf_system, drm_derivative_rows, rbf_chi, rbf_gamma, rbf_gamma_normal)
from dribem.mesh import build_box_mesh, interior_interpolation_points
from dribem.oracle import drm_volume_oracle

from conftest import slab_scenario

coord = st.floats(-2.0, 2.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord), st.floats(0.1, 5.0))
def test_laplacian_of_particular_potential(x, xm, ell):
    x, xm = np.array([x]), np.array([xm])
    if np.linalg.norm(x - xm) < 1e-6:
        return
    lap = np.trace(rbf_gamma(x, xm, ell, 2)[2][0, 0])
    np.testing.assert_allclose(lap, rbf_chi(x, xm, ell)[0, 0], rtol=1e-12)


def test_potential_derivatives_match_differences(rng):
    x = rng.uniform(-1, 1, (4, 3))
    xm = rng.uniform(-1, 1, (3, 3))
    ell, h = 1.7, 1e-5
    g = rbf_gamma(x, xm, ell, 3)
    for k in range(3):
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (rbf_gamma(x + e, xm, ell, k)[k] - rbf_gamma(x - e, xm, ell, k)[k]) / (2 * h)
            np.testing.assert_allclose(np.take(g[k + 1], i, axis=-1), fd, rtol=1e-7, atol=1e-9)


def test_normal_derivative(rng):
    x = rng.uniform(-1, 1, (5, 3))
    xm = rng.uniform(-1, 1, (2, 3))
    n = rng.normal(size=(5, 3))
    n /= np.linalg.norm(n, axis=1)[:, None]
    grad = rbf_gamma(x, xm, 0.8, 1)[1]
    np.testing.assert_allclose(rbf_gamma_normal(x, xm, n, 0.8), np.einsum("nmi,ni->nm", grad, n), rtol=1e-14)


def test_interpolation_reproduces_values(rng):
    pts = rng.uniform(0, 1, (30, 3))
    sys_ = build_rbf_system(pts, 1.0)
    vals = np.sin(pts[:, 0]) + pts[:, 2]
    a = assemble_interpolation(sys_, vals)
    np.testing.assert_allclose(rbf_chi(pts, pts, 1.0) @ a, vals, rtol=1e-10)


def test_repeated_points_are_rejected():
    pts = np.array([[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [0.1, 0.2, 0.3]])
    with pytest.raises(SingularInterpolationError):
        build_rbf_system(pts, 1.0)


@pytest.fixture(scope="module")
def drm_setup():
    ku, kl = 4.0, 2.0
    sc = slab_scenario(ku, 10.0, kl, 3.0)
    me = build_box_mesh(sc, 6, 6, 4, 4, interior=interior_interpolation_points(sc, (2, 2, 2, 2)))
    quad = BoundaryQuadrature(build_panels(me, sc), ku, kl)
    bie = assemble_bie(quad, me)
    ell = sc.length_scale
    S = assemble_drm_blocks(quad, bie.KG, bie.KF, bie.points, bie.points, ell)
    return sc, me, quad, bie, ell, S




def test_drm_block_matches_volume_quadrature(drm_setup):
    sc, me, _, bie, ell, S = drm_setup
    X = bie.points
    rng = np.random.default_rng(7)
    rows = list(rng.choice(me.n_nodes, 6, replace=False)) + list(me.n_nodes + rng.choice(len(me.interior), 4, replace=False))
    cols = rng.choice(len(X), 10)
    for r, m in zip(rows, cols):
        ref = drm_volume_oracle(X[r], X[m], sc, ell)
        np.testing.assert_allclose(S[r, m], ref, rtol=1e-4)


def test_drm_gradient_rows_match_differences(drm_setup):
    sc, me, quad, bie, ell, _ = drm_setup
    X = np.array([[0.4, 0.55, 0.2], [0.6, 0.3, -0.15]])
    centers = bie.points[::7]
    KG1, KF1 = quad.kernels(X, 1)
    grad = drm_derivative_rows(quad, KG1, KF1, X, centers, ell, sc, 1)
    h = 1e-4
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        S = []
        for Y in (X + e, X - e):
            KG, KF = quad.kernels(Y, 0)
            S.append(assemble_drm_blocks(quad, KG, KF, Y, centers, ell))
        np.testing.assert_allclose(grad[..., i], (S[0] - S[1]) / (2 * h), atol=1e-5 * np.abs(grad).max())
