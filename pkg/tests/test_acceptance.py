"""Acceptance criteria, each at its stated tolerance.

Every test records one summary line (see ``conftest.Criterion``); the lines
are printed together at the end of the pytest run.
"""
import dataclasses
import warnings

import numpy as np
import pytest

from dribem.bem import BoundaryQuadrature, assemble_bie, build_panels
from dribem.cli import _read_config, build_run_spec, execute
from dribem.drm import assemble_drm_blocks, rbf_chi, rbf_gamma
from dribem.eshelby import eshelby_eval
from dribem.kernels import greens, greens_derivs
from dribem.mesh import build_box_mesh, interior_interpolation_points
from dribem.model import FACES, BilayerScenario, FaceBC, Inclusion, MaterialProps
from dribem.oracle import (FdSolver, bimaterial_steady_flux, build_fd_grid, compare_fields,
                           eshelby_quadrature_oracle, slab_harmonic_1d)
from dribem.postprocess import FieldProbe, layer_average, layer_sample_points
from dribem.solver import GlobalSystem, build_representation, initial_state, run_transient, step_transient

from conftest import Criterion, slab_scenario

AL2O3 = MaterialProps(30.1, 3.96e6)
NI = MaterialProps(90.7, 4.32e6)


def sinusoidal_bilayer(h=1.0, steps=60):
    """Unit-square bilayer, top 10 sin(pi t / 10), bottom 0, adiabatic sides."""
    return slab_scenario(4.0, 10.0, 2.0, 3.0, h=h, top=FaceBC("dirichlet", 0.0, amplitude=10.0, period=20.0),
                         mode="transient", dt=0.1, steps=steps)


def quiet_interior(sc, counts, inclusions=()):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return interior_interpolation_points(sc, counts, inclusions)


# ---------------------------------------------------------------------------


def test_c01_greens_function_suite():
    crit = Criterion(1, "bimaterial Green's function")
    rng = np.random.default_rng(101)
    ku, kl = 4.0, 2.0
    x = rng.uniform(-1, 1, (500, 3))
    xp = rng.uniform(-1, 1, (500, 3))
    keep = (np.linalg.norm(x - xp, axis=1) > 1e-2) & (np.abs(x[:, 2]) > 1e-3) & (np.abs(xp[:, 2]) > 1e-3)
    x, xp = x[keep], xp[keep]
    d = np.linalg.norm(x - xp, axis=1)
    full = np.abs(greens(x, xp, 3.0, 3.0) * 4 * np.pi * 3.0 * d - 1.0).max()
    crit.check("full-space rel", full, 1e-14)
    sym = np.abs(greens(x, xp, ku, kl) / greens(xp, x, ku, kl) - 1.0).max()
    crit.check("symmetry rel", sym, 1e-12)
    ev = greens_derivs(x, xp, ku, kl, max_order=2)
    lap = np.abs(np.einsum("...ii->...", ev.g[2])) * d**2 / np.abs(ev.g[0])
    crit.check("harmonicity", lap.max(), 1e-10)
    on = np.column_stack([rng.uniform(-1, 1, (200, 2)), np.zeros(200)])
    src = rng.uniform(-1, 1, (200, 3))
    src[:, 2] = np.where(np.abs(src[:, 2]) < 0.05, 0.05, src[:, 2])
    up = greens_derivs(on, src, ku, kl, 1, field_upper=True)
    lo = greens_derivs(on, src, ku, kl, 1, field_upper=False)
    crit.check("interface G", np.abs(up.g[0] / lo.g[0] - 1).max(), 1e-8)
    fu, fl = ku * up.g[1][:, 2], kl * lo.g[1][:, 2]
    crit.check("interface K dG/dx3", (np.abs(fu - fl) / np.abs(fu).max()).max(), 1e-8)
    crit.finish()


def test_c02_eshelby_vs_quadrature():
    crit = Criterion(2, "Eshelby D, L vs volume quadrature")
    rng = np.random.default_rng(202)
    ku, kl = 4.0, 2.0
    c = np.array([0.5, 0.5, 0.25])
    worst = {"exterior": 0.0, "interior": 0.0}
    for axes in ([0.1, 0.1, 0.1], [0.2, 0.2, 0.1]):
        a = np.array(axes)
        for side in ("same", "cross"):
            pts = []
            while len(pts) < 20:
                if side == "same" and len(pts) >= 10:
                    u = rng.normal(size=3)
                    pts.append(c + a * u / np.linalg.norm(u) * rng.uniform(0, 0.9))
                    continue
                p = c + rng.uniform(-0.4, 0.4, 3)
                if side == "cross":
                    p[2] = -rng.uniform(0.02, 0.4)
                if np.sum(((p - c) / a) ** 2) > 1.1 and (p[2] > 0.01 or side == "cross"):
                    pts.append(p)
            for p in pts:
                D, L = eshelby_quadrature_oracle(p, c, a, ku, kl)
                ev = eshelby_eval(p[None], c, a, ku, kl, 0)
                e = max(np.abs(ev.D.value[0] - D).max() / np.abs(D).max(),
                        np.abs(ev.L.value[0] - L).max() / np.abs(L).max())
                key = "interior" if np.sum(((p - c) / a) ** 2) < 1 else "exterior"
                worst[key] = max(worst[key], e)
    crit.check("exterior rel", worst["exterior"], 1e-6)
    crit.check("interior rel", worst["interior"], 1e-4)
    crit.finish()


# direct volume quadrature of sum_layers C int G chi dV, frozen from the oracle
# (mesh 6 x 6 x (4 + 4), 2 x 2 x (2 + 2) interior points, rows/columns drawn with seed 11)
DRM_VOLUME_ENTRIES = [
    (131, 276, 0.4895118625758806),
    (209, 175, 0.7792632402352525),
    (159, 244, 0.662156947019566),
    (33, 104, 0.8599423175482427),
    (34, 41, 0.5683363251139933),
    (156, 144, 0.6768007847922889),
    (274, 125, 0.9413880366364453),
    (273, 186, 0.7198469393378785),
    (267, 280, 0.6536305255464955),
    (278, 77, 0.9550875071481866),
]


def test_c03_dual_reciprocity():
    crit = Criterion(3, "dual-reciprocity identity and block")
    rng = np.random.default_rng(303)
    x = rng.uniform(-2, 2, (400, 3))
    xm = rng.uniform(-2, 2, (30, 3))
    for ell in (0.3, 1.0, 4.0):
        lap = np.einsum("nmii->nm", rbf_gamma(x, xm, ell, 2)[2])
        chi = rbf_chi(x, xm, ell)
        crit.check(f"lap Gamma = chi (ell={ell})", np.abs(lap / chi - 1).max(), 1e-12)
    sc = slab_scenario(4.0, 10.0, 2.0, 3.0)
    me = build_box_mesh(sc, 6, 6, 4, 4, interior=interior_interpolation_points(sc, (2, 2, 2, 2)))
    quad = BoundaryQuadrature(build_panels(me, sc), 4.0, 2.0)
    bie = assemble_bie(quad, me)
    rows = np.array([r for r, _, _ in DRM_VOLUME_ENTRIES])
    cols = np.array([m for _, m, _ in DRM_VOLUME_ENTRIES])
    S = assemble_drm_blocks(quad, bie.KG[rows], bie.KF[rows], bie.points[rows], bie.points, sc.length_scale)
    ref = np.array([v for *_, v in DRM_VOLUME_ENTRIES])
    crit.check("S block rel", np.abs(S[np.arange(len(rows)), cols] / ref - 1).max(), 1e-4)
    crit.finish()


def test_c04_bimaterial_steady_limit():
    crit = Criterion(4, "bimaterial steady flux")
    bcs = {f: FaceBC("neumann") for f in FACES}
    bcs["top"] = FaceBC("dirichlet", 400.0)
    bcs["bottom"] = FaceBC("dirichlet", 300.0)
    sc = BilayerScenario(0.0025, 0.0025, 0.005, 0.005, AL2O3, NI, bcs, mode="steady", u0=300.0,
                         origin=(-0.0025, -0.0025))
    me = build_box_mesh(sc, 5, 5, 9, 9, interior=interior_interpolation_points(sc, (2, 2, 2, 2)))
    crit.check("elements", me.n_elements, "~400", ok=350 <= me.n_elements <= 450)
    sys_ = GlobalSystem(sc, me)
    pts, zs, edges = layer_sample_points(sc, 2, (3, 3, 5))
    prof = layer_average(FieldProbe(sys_, pts).sample(sys_.solve_steady()), zs, edges)
    q = prof.q3.mean()
    crit.check("q3 vs -4.52e5 rel", abs(q / -4.52e5 - 1), 0.02)
    crit.check("q3 vs exact rel", abs(q / bimaterial_steady_flux(sc, 100.0) - 1), 0.02)
    crit.finish()


def test_c05_transient_vs_finite_differences():
    crit = Criterion(5, "transient bilayer vs FD")
    sc = sinusoidal_bilayer()
    me = build_box_mesh(sc, 4, 4, 4, 4, interior=interior_interpolation_points(sc, (4, 4, 4, 4)))
    sys_ = GlobalSystem(sc, me)
    z = np.array([0.5, 0.25, 0.0, -0.25, -0.5])
    probes = np.column_stack([np.full(5, 0.5), np.full(5, 0.5), z])
    rep = build_representation(sys_.ctx, probes, 0)
    on_if = np.array([[0.5, 0.5, 0.0], [0.3, 0.6, 0.0], [0.8, 0.1, 0.0]])
    g_up = build_representation(sys_.ctx, on_if, 1, field_upper=True)
    g_lo = build_representation(sys_.ctx, on_if, 1, field_upper=False)
    stations = list(range(10, 61, 10))
    u_bem, jump = {}, 0.0
    ts = initial_state(sys_)
    for _ in range(sc.steps):
        st, ts = step_transient(sys_, ts)
        if ts.n in stations:
            u_bem[ts.n] = rep.apply(st)
            qu, ql = -4.0 * g_up.apply(st)[:, 2], -2.0 * g_lo.apply(st)[:, 2]
            jump = max(jump, np.abs(qu - ql).max() / np.abs(qu).max())
    fd = FdSolver(build_fd_grid(sc, h=(1.0, 1.0, 0.0025)))
    fields = fd.transient(sc.dt, sc.steps, stations=stations)
    u_fd = {n: fd.probe(fields[n], probes, when=n * sc.dt) for n in stations}
    peak = max(np.abs(v).max() for v in u_fd.values())
    err = max(np.abs(u_bem[n] - u_fd[n]).max() for n in stations) / peak
    crit.check("u vs FD (history peak)", err, 0.01)
    crit.check("q3 interface jump rel", jump, 1e-3)
    crit.finish()


@pytest.fixture(scope="module")
def two_inclusion_results():
    sc = sinusoidal_bilayer()
    z = np.linspace(-0.5, 0.5, 41)
    line = np.column_stack([np.full_like(z, 0.5), np.full_like(z, 0.5), z])
    out = {}
    for shape, axes in (("spheres", (0.1, 0.1, 0.1)), ("spheroids", (0.2, 0.2, 0.1))):
        incs = [Inclusion((0.5, 0.5, 0.125), axes, MaterialProps(10.0, 1.0)),
                Inclusion((0.5, 0.5, -0.125), axes, MaterialProps(10.0, 1.0))]
        fine = [(0, 0.5, 0.5 + axes[0] + 0.02, 0.01), (1, 0.5, 0.5 + axes[1] + 0.02, 0.01), (2, -0.25, 0.25, 0.01)]
        grid = build_fd_grid(sc, incs, h=0.1, fine=fine, region=[[0.5, 1.0], [0.5, 1.0], [-1.0, 1.0]])
        fd = FdSolver(grid)
        fields = fd.transient(sc.dt, sc.steps, stations=[30, 60])
        ref = {n: (fd.probe(fields[n], line, when=n * sc.dt), fd.probe_flux3(fields[n], line, when=n * sc.dt))
               for n in (30, 60)}
        res = {}
        for order in ("uniform", "quadratic"):
            incs_o = [i.with_order(order) for i in incs]
            me = build_box_mesh(sc, 4, 4, 4, 4, interior=quiet_interior(sc, (4, 4, 4, 4), incs_o))
            sys_ = GlobalSystem(sc, me, incs_o)
            probe = FieldProbe(sys_, line)
            res[order] = {}
            run_transient(sys_, callback=lambda st, ts: res[order].__setitem__(ts.n, probe.sample(st))
                          if ts.n in (30, 60) else None)
        c = np.abs(np.abs(z) - 0.125)
        out[shape] = (ref, res, np.abs(c - axes[2]) > 0.015)
    return out


def test_c06_two_inclusions(two_inclusion_results):
    crit = Criterion(6, "two inclusions vs FD")
    for shape, (ref, res, away) in two_inclusion_results.items():
        for n in (30, 60):
            u = compare_fields(res["quadratic"][n].u, ref[n][0]).linf_rel
            crit.check(f"{shape} u t={n / 10:g}s", u, 0.01)
            # flux discrepancy away from the surfaces, where the voxel oracle smears the jump
            dq = {o: compare_fields(res[o][n].q[away, 2], ref[n][1][away]).linf_rel for o in res}
            crit.check(f"{shape} q3 quadratic<uniform t={n / 10:g}s", dq["quadratic"], dq["uniform"],
                       ok=dq["quadratic"] < dq["uniform"])
    crit.finish()


def test_c07_dilute_sphere():
    crit = Criterion(7, "dilute sphere gradient ratio")
    sc = slab_scenario(2.0, 1.0, 2.0, 1.0, mode="steady")
    inc = Inclusion((0.5, 0.5, 0.25), (0.05, 0.05, 0.05), MaterialProps(20.0, 1.0), "uniform")
    me = build_box_mesh(sc, 4, 4, 3, 3, interior=quiet_interior(sc, (2, 2, 2, 2), [inc]))
    sys_ = GlobalSystem(sc, me, [inc])
    grad = build_representation(sys_.ctx, np.array([inc.center]), 1).apply(sys_.solve_steady())[0]
    ratio = grad[2] / 1.0
    exact = 3 * 2.0 / (20.0 + 2 * 2.0)
    crit.check("ratio rel", abs(ratio / exact - 1), 0.005)
    crit.finish()


def test_c08_harmonic_slab():
    crit = Criterion(8, "harmonic slab vs complex 1-D solution")
    sc = slab_scenario(top=FaceBC("dirichlet", 10.0, amplitude=10.0), mode="harmonic")
    me = build_box_mesh(sc, 3, 3, 8, 8, interior=interior_interpolation_points(sc, (5, 5, 10, 10)))
    sys_ = GlobalSystem(sc, me)
    z = np.linspace(-0.5, 0.5, 9)
    rep = build_representation(sys_.ctx, np.column_stack([np.full(9, 0.5), np.full(9, 0.5), z]), 0)
    for omega in (0.1, 1.0, 10.0):
        u = rep.apply(sys_.solve_harmonic(omega))
        ref = slab_harmonic_1d(dataclasses.replace(sc, omega=omega), z)
        amp = np.abs(np.abs(u) - np.abs(ref)).max() / np.abs(ref).max()
        big = np.abs(ref) >= 0.01 * np.abs(ref).max()
        phase = np.degrees(np.abs(np.angle(u[big] / ref[big]))).max()
        crit.check(f"amp w={omega:g}", amp, 0.005)
        crit.check(f"phase deg w={omega:g}", phase, 1.0)
    u0 = rep.apply(sys_.solve_harmonic(0.0))
    us = rep.apply(sys_.solve_steady())
    crit.check("w=0 vs steady", np.abs(u0 - us).max() / np.abs(us).max(), 1e-8)
    crit.finish()


def test_c09_fgm_desk_scale(tmp_path):
    import csv

    crit = Criterion(9, "FGM desk scale (div 8)")
    cfg, source = _read_config("fgm_desk")
    spec = build_run_spec(cfg, None, source)
    crit.check("inclusions", len(spec.inclusions), 128, ok=len(spec.inclusions) <= 128)

    sc = dataclasses.replace(spec.scenario, mode="steady")
    incs = spec.inclusions
    m = spec.mesh
    me = build_box_mesh(sc, m["nx"], m["nx"], m["nz_upper"], m["nz_upper"],
                        interior=quiet_interior(sc, tuple(m["interior"]), incs))
    sys_ = GlobalSystem(sc, me, incs)
    st = sys_.solve_steady()
    pts, zs, edges = layer_sample_points(sc, 2, tuple(spec.layers["counts"]))
    prof = layer_average(FieldProbe(sys_, pts).sample(st), zs, edges)
    q_avg = abs(prof.q3.mean())
    crit.check("steady |q3|", q_avg, "(4.52e5, 5.49e5)", ok=4.52e5 < q_avg < 5.49e5)
    crit.check("profile monotone", np.diff(prof.u).min(), "> 0", ok=np.all(np.diff(prof.u) > 0))
    # plane averages on both sides of the interface
    plane = pts[: len(pts) // len(zs)].copy()
    plane[:, 2] = 0.0
    u_up = FieldProbe(sys_, plane, field_upper=True).temperature(st).mean()
    u_lo = FieldProbe(sys_, plane, field_upper=False).temperature(st).mean()
    crit.check("interface jump / 100 K", abs(u_up - u_lo) / 100.0, 1e-4)

    # transient through the command-line runner; layer profiles at six stations
    args = type("Args", (), {"out": str(tmp_path)})()
    spec = build_run_spec(cfg, args, source)
    spec.stations = [16, 24, 32, 40, 50, 60]
    spec.probes = spec.probes[:0]
    execute(spec)
    spread = []
    for n in spec.stations:
        with open(tmp_path / f"profile_{n:05d}.csv") as fh:
            qn = np.array([float(r["q3_avg"]) for r in csv.DictReader(fh)])
        spread.append(qn.max() - qn.min())
    crit.check("q3 range narrows", np.diff(spread).max(), "< 0", ok=np.all(np.diff(spread) < 0))
    crit.finish()


def test_c10_degenerate_limits():
    crit = Criterion(10, "degenerate limits")
    sc = dataclasses.replace(sinusoidal_bilayer(h=0.5, steps=4), upper=MaterialProps(4.0, 0.0),
                             lower=MaterialProps(2.0, 0.0))
    me = build_box_mesh(sc, 3, 3, 2, 2, interior=interior_interpolation_points(sc, (2, 2, 2, 2)))
    sys_ = GlobalSystem(sc, me)
    worst = 0.0
    for st in run_transient(sys_)[1:]:
        ref = sys_.solve(0.0, st.time, "transient")
        worst = max(worst, np.abs(st.z - ref.z).max() / np.abs(ref.z).max())
    crit.check("zero capacity vs steady", worst, 1e-10)

    sc = slab_scenario(4.0, 10.0, 2.0, 3.0, mode="transient", dt=0.1, steps=3)
    incs = [Inclusion((0.5, 0.5, 0.25), (0.1, 0.1, 0.1), sc.upper, "quadratic"),
            Inclusion((0.5, 0.5, -0.25), (0.15, 0.1, 0.05), sc.lower, "linear")]
    sys_ = GlobalSystem(sc, build_box_mesh(sc, 3, 3, 2, 2, interior=quiet_interior(sc, (2, 2, 2, 2), incs)), incs)
    eig = max(np.abs(st.eigen).max() for st in run_transient(sys_))
    crit.check("matched eigen fields", eig, 1e-12)

    rows = sys_.M0[:sys_.ctx.n_nodes, sys_.col["u"]]
    crit.check("constant-field row residual", np.abs(rows @ np.ones(rows.shape[1])).max(), 1e-13)
    crit.finish()
