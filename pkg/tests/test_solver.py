import numpy as np
import pytest

from dribem.mesh import build_box_mesh, interior_interpolation_points
from dribem.model import FaceBC, Inclusion, MaterialProps
from dribem.solver import (GlobalSystem, TimeState, build_representation, initial_state, run_transient,
                           step_factors, step_transient)

from conftest import slab_scenario

PROBES = np.array([[0.5, 0.5, 0.4], [0.3, 0.7, 0.1], [0.5, 0.5, 0.0], [0.2, 0.4, -0.3]])


def small_system(sc, inclusions=(), div=(3, 3, 2, 2), counts=(2, 2, 2, 2)):
    ip = interior_interpolation_points(sc, counts, inclusions)
    return GlobalSystem(sc, build_box_mesh(sc, *div, interior=ip), inclusions)


def slab_exact(z, ku=4.0, kl=2.0, h=0.5):
    q = 1.0 / (h / ku + h / kl)
    return np.where(z >= 0, q * h / kl + q * z / ku, q * (z + h) / kl)


@pytest.fixture(scope="module")
def steady_system():
    return small_system(slab_scenario(mode="steady"))


def test_steady_bimaterial_slab(steady_system):
    st = steady_system.solve_steady()
    u = build_representation(steady_system.ctx, PROBES, 0).apply(st)
    np.testing.assert_allclose(u, slab_exact(PROBES[:, 2]), atol=1e-8)
    grad = build_representation(steady_system.ctx, PROBES, 1).apply(st)
    k = np.where(PROBES[:, 2] >= 0, 4.0, 2.0)
    np.testing.assert_allclose(-k * grad[:, 2], -1.0 / (0.5 / 4 + 0.5 / 2), rtol=1e-6)
    np.testing.assert_allclose(grad[:, :2], 0.0, atol=1e-6)


def test_steady_residual_and_summary(steady_system):
    st = steady_system.solve_steady()
    assert np.abs(steady_system.residual(st)).max() < 1e-12
    s = steady_system.summary()
    assert s["unknowns"] == steady_system.n_unknowns
    assert s["elements"] == 2 * (9 + 2 * 3 * 4)


def test_boundary_points_recover_data(steady_system):
    st = steady_system.solve_steady()
    X = np.array([[0.5, 0.5, 0.5], [0.25, 0.0, 0.2], [0.0, 0.0, -0.5], [1.0, 0.6, 0.0]])
    u = build_representation(steady_system.ctx, X, 0).apply(st)
    np.testing.assert_allclose(u, slab_exact(X[:, 2]), atol=1e-8)


def test_zero_capacity_transient_equals_steady():
    sc = slab_scenario(4.0, 0.0, 2.0, 0.0, top=FaceBC("dirichlet", 0.0, amplitude=10.0, period=20.0),
                       mode="transient", dt=0.1, steps=4)
    sys_ = small_system(sc)
    states = run_transient(sys_)
    for st in states[1:]:
        ref = sys_.solve(0.0, st.time, "transient")
        np.testing.assert_allclose(st.z, ref.z, rtol=1e-10, atol=1e-10 * np.abs(ref.z).max())


def test_matched_inclusion_has_zero_eigen_field():
    sc = slab_scenario(4.0, 10.0, 2.0, 3.0, top=FaceBC("dirichlet", 1.0), mode="transient", dt=0.1, steps=3)
    inc = [Inclusion((0.5, 0.5, 0.25), (0.1, 0.1, 0.1), sc.upper, "quadratic"),
           Inclusion((0.5, 0.5, -0.25), (0.1, 0.1, 0.05), sc.lower, "linear")]
    sys_ = small_system(sc, inc)
    for st in run_transient(sys_):
        assert np.abs(st.eigen).max() <= 1e-12
    assert np.abs(sys_.solve_steady().eigen).max() <= 1e-12


def test_harmonic_zero_frequency_is_steady():
    sc = slab_scenario(top=FaceBC("dirichlet", 1.0, amplitude=1.0, period=10.0), mode="harmonic")
    sys_ = small_system(sc)
    st_h = sys_.solve_harmonic(0.0)
    st_s = sys_.solve_steady()
    u_h = build_representation(sys_.ctx, PROBES, 0).apply(st_h)
    np.testing.assert_allclose(u_h, slab_exact(PROBES[:, 2]), atol=1e-8)
    assert np.abs(u_h.imag).max() < 1e-12
    np.testing.assert_allclose(st_h.z.real, st_s.z, atol=1e-8)


def test_step_factors():
    z, zp = np.array([2.0]), np.array([1.0])
    a, h = step_factors(TimeState(0, 0.0, z, zp), 0.1)
    assert a == 10.0 and h[0] == -20.0
    # second-order difference of a linear history is exact
    a, h = step_factors(TimeState(3, 0.3, z, zp), 0.1)
    np.testing.assert_allclose(a * 3.0 + h, 10.0)


def test_restart_is_bit_identical(tmp_path):
    sc = slab_scenario(top=FaceBC("dirichlet", 0.0, amplitude=10.0, period=20.0), mode="transient",
                       dt=0.1, steps=4)
    sys_ = small_system(sc)
    ts = initial_state(sys_)
    for _ in range(2):
        _, ts = step_transient(sys_, ts)
    ts.save(tmp_path / "ck.npz")
    straight = run_transient(sys_, steps=4)[-1]
    resumed = run_transient(sys_, steps=2, start=TimeState.load(tmp_path / "ck.npz"))[-1]
    assert resumed.time == pytest.approx(0.4)
    np.testing.assert_array_equal(resumed.z, straight.z)


def test_transient_residual():
    sc = slab_scenario(top=FaceBC("dirichlet", 0.0, amplitude=10.0, period=20.0), mode="transient",
                       dt=0.1, steps=3)
    sys_ = small_system(sc)
    ts = initial_state(sys_)
    for _ in range(3):
        a, h = step_factors(ts, sc.dt)
        st, ts = step_transient(sys_, ts)
        assert np.abs(sys_.residual(st, a, h)).max() < 1e-10
