"""Scenario runner: parse a TOML scenario, solve, export and optionally compare.

Usage::

    dribem run verify_bie --out results/
    dribem run my.toml --mode harmonic --omega 1.0 --oracle
    dribem compare a.csv b.csv --tol 0.01
    dribem scenarios

Exit codes: 0 ok, 2 validation error, 3 numerical failure, 4 tolerance gate.
"""
import argparse
import contextlib
import json
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .drm import SingularInterpolationError
from .mesh import build_box_mesh, interior_interpolation_points
from .model import (FACES, MODES, BilayerScenario, FaceBC, Inclusion, MaterialProps, ValidationError,
                    build_fgm_inclusions, validate_scenario)
from .oracle import FdSolver, OracleResolutionError, build_fd_grid, compare_fields
from .postprocess import (FieldProbe, export_csv, export_profile, export_summary, layer_average,
                          layer_sample_points, read_csv)
from .solver import GlobalSystem, NumericalError, State, initial_state, step_factors, step_transient

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_GATE = 0, 2, 3, 4


@dataclass
class RunSpec:
    """Everything a run needs, after config and flag overrides."""

    scenario: BilayerScenario
    inclusions: list
    mesh: dict
    probes: np.ndarray
    stations: list
    layers: dict | None = None
    oracle: dict | None = None
    run_oracle: bool = False
    quadrature: dict = field(default_factory=dict)
    out: Path = Path("out")
    source: str = ""


def bundled_scenarios():
    root = resources.files("dribem") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _read_config(path):
    p = Path(path)
    if not p.exists() and not p.suffix:
        res = resources.files("dribem") / "scenarios" / f"{path}.toml"
        if res.is_file():
            return tomllib.loads(res.read_text()), str(path)
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh), str(p)
    except FileNotFoundError as exc:
        raise ValidationError(f"scenario file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from exc


def _props(d, where):
    try:
        return MaterialProps(float(d["conductivity"]), float(d.get("capacity", 0.0)))
    except KeyError as exc:
        raise ValidationError(f"{where}: missing {exc.args[0]}") from exc


def _face_bc(name, d):
    kind = d.get("kind")
    if kind not in ("dirichlet", "neumann"):
        raise ValidationError(f"bc.{name}: kind must be 'dirichlet' or 'neumann'")
    amp = d.get("amplitude", 0.0)
    if isinstance(amp, list):
        amp = complex(amp[0], amp[1])
    return FaceBC(kind, float(d.get("constant", 0.0)), amp, float(d.get("period", float("inf"))))


def build_run_spec(config, args=None, source=""):
    """Turn a parsed config (and optional CLI flags) into a :class:`RunSpec`."""
    args = args or argparse.Namespace()
    g = config.get("geometry", {})
    mats = config.get("materials", {})
    run = dict(config.get("run", {}))
    for key in ("mode", "dt", "steps", "omega"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    if run.get("mode", "transient") not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    bc_cfg = config.get("bc", {})
    missing = [f for f in FACES if f not in bc_cfg]
    if missing:
        raise ValidationError(f"no boundary condition for faces {missing}")
    unknown = [f for f in bc_cfg if f not in FACES]
    if unknown:
        raise ValidationError(f"unknown faces {unknown}")
    try:
        sc = BilayerScenario(
            la=float(g["la"]), lb=float(g["lb"]), h1=float(g["h1"]), h2=float(g["h2"]),
            upper=_props(mats["upper"], "materials.upper"), lower=_props(mats["lower"], "materials.lower"),
            bcs={f: _face_bc(f, bc_cfg[f]) for f in FACES},
            mode=run.get("mode", "transient"), dt=float(run.get("dt", 0.1)), steps=int(run.get("steps", 10)),
            t0=float(run.get("t0", 0.0)), omega=float(run.get("omega", 0.0)), u0=float(run.get("u0", 0.0)),
            origin=tuple(float(v) for v in g.get("origin", (0.0, 0.0))))
    except KeyError as exc:
        raise ValidationError(f"missing configuration entry {exc.args[0]}") from exc

    order = getattr(args, "eigen_order", None)
    inclusions = []
    for n, d in enumerate(config.get("inclusions", [])):
        inclusions.append(Inclusion(tuple(map(float, d["center"])), tuple(map(float, d["semi_axes"])),
                                    _props(d, f"inclusions[{n}]"), order or d.get("eigen_order", "uniform")))
    if "fgm" in config:
        f = config["fgm"]
        inclusions += build_fgm_inclusions(int(f["div"]), sc, _props(f["upper_particle"], "fgm.upper_particle"),
                                           _props(f["lower_particle"], "fgm.lower_particle"),
                                           order or f.get("eigen_order", "uniform"),
                                           f.get("elevation", "center"))
    validate_scenario(sc, inclusions)

    out_cfg = config.get("output", {})
    probes = [np.asarray(out_cfg.get("probes", np.zeros((0, 3))), dtype=float).reshape(-1, 3)]
    if "centerline" in out_cfg:
        c = out_cfg["centerline"]
        b = sc.bounds
        z = np.linspace(c.get("z_min", b[2, 0]), c.get("z_max", b[2, 1]), int(c.get("n", 41)))
        probes.append(np.column_stack([np.full_like(z, c["x1"]), np.full_like(z, c["x2"]), z]))
    probes = np.vstack(probes)
    if sc.mode == "transient":
        stations = out_cfg.get("stations", list(range(sc.steps + 1)))
        stations = sorted({int(s) for s in stations if 0 <= int(s) <= sc.steps})
    else:
        stations = [0]
    return RunSpec(
        scenario=sc, inclusions=inclusions, mesh=config.get("mesh", {}), probes=probes, stations=stations,
        layers=out_cfg.get("layers"), oracle=config.get("oracle"), run_oracle=bool(getattr(args, "oracle", False)),
        quadrature=config.get("quadrature", {}), out=Path(getattr(args, "out", None) or "out"), source=source)


def _mesh_for(spec):
    m = spec.mesh
    counts = tuple(m.get("interior", (2, 2, 2, 2)))
    interior = interior_interpolation_points(spec.scenario, counts, spec.inclusions)
    return build_box_mesh(spec.scenario, int(m.get("nx", 4)), int(m.get("ny", m.get("nx", 4))),
                          int(m.get("nz_upper", 4)), int(m.get("nz_lower", m.get("nz_upper", 4))),
                          interior=interior)


def _fd_reference(spec):
    """Oracle probe values per station (transient), or complex/steady values at station 0."""
    o = spec.oracle or {}
    sc = spec.scenario
    fine = [tuple(f) for f in o.get("fine", [])]
    grid = build_fd_grid(sc, spec.inclusions, h=o.get("h"), fine=fine, region=o.get("region"))
    fd = FdSolver(grid)
    if sc.mode == "transient":
        fields = fd.transient(sc.dt, sc.steps, sc.t0, stations=spec.stations)
        return {n: fd.probe(fields[n], spec.probes, when=sc.t0 + n * sc.dt) for n in spec.stations}, grid
    if sc.mode == "harmonic":
        return {0: fd.probe(fd.harmonic(sc.omega), spec.probes, mode="harmonic")}, grid
    return {0: fd.probe(fd.steady(), spec.probes, mode="steady")}, grid


def execute(spec):
    """Build, solve and export; returns the summary dict."""
    sc = spec.scenario
    spec.out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t = time.perf_counter()
    mesh = _mesh_for(spec)
    system = GlobalSystem(sc, mesh, spec.inclusions, order=int(spec.quadrature.get("order", 4)),
                          near_ratio=float(spec.quadrature.get("near_ratio", 0.5)))
    timings["assembly"] = time.perf_counter() - t

    t = time.perf_counter()
    probe = FieldProbe(system, spec.probes) if len(spec.probes) else None
    layer = None
    if spec.layers:
        pts, zs, edges = layer_sample_points(sc, int(spec.layers.get("n_layers", 2)),
                                             tuple(spec.layers.get("counts", (10, 10, 20))))
        layer = (FieldProbe(system, pts), zs, edges)
    timings["probe_setup"] = time.perf_counter() - t

    samples, profiles, residuals = {}, {}, []
    t = time.perf_counter()
    if sc.mode == "transient":
        keep = set(spec.stations)

        def record(state, n):
            if n in keep:
                if probe is not None:
                    samples[n] = probe.sample(state)
                if layer is not None:
                    profiles[n] = layer_average(layer[0].sample(state), layer[1], layer[2])

        ts = initial_state(system)
        p0, f0 = system.loads(ts.t, "transient")
        record(State(ts.z, np.zeros_like(ts.z), p0, f0, system.sizes, time=ts.t), 0)
        for _ in range(sc.steps):
            a, h = step_factors(ts, sc.dt)
            state, ts = step_transient(system, ts)
            residuals.append(float(np.abs(system.residual(state, a, h)).max()))
            record(state, ts.n)
    else:
        state = system.solve_harmonic(sc.omega) if sc.mode == "harmonic" else system.solve_steady()
        a = -1j * sc.omega if sc.mode == "harmonic" else 0.0
        residuals.append(float(np.abs(system.residual(state, a)).max()))
        if probe is not None:
            samples[0] = probe.sample(state)
        if layer is not None:
            profiles[0] = layer_average(layer[0].sample(state), layer[1], layer[2])
    timings["solve"] = time.perf_counter() - t

    ordered = [samples[n] for n in sorted(samples)]
    if ordered:
        export_csv(ordered, spec.out / "probes.csv", omega=sc.omega)
        if sc.mode == "harmonic":
            _export_amplitudes(ordered[0], spec.out / "amplitudes.csv")
    for n, prof in sorted(profiles.items()):
        export_profile(prof, spec.out / f"profile_{n:05d}.csv", t=sc.t0 + n * sc.dt)

    summary = {
        "source": spec.source,
        "mode": sc.mode,
        "scenario": _echo(sc),
        "inclusions": len(spec.inclusions),
        "eigen_orders": sorted({i.eigen_order for i in spec.inclusions}),
        "system": system.summary(),
        "timings": timings,
        "max_residual": max(residuals) if residuals else 0.0,
    }
    if spec.run_oracle:
        if not len(spec.probes):
            raise ValidationError("the oracle comparison needs probes")
        t = time.perf_counter()
        ref, grid = _fd_reference(spec)
        report = {}
        for n in sorted(ref):
            rep = compare_fields(samples[n].u, ref[n])
            report[str(n)] = {"linf_abs": rep.linf_abs, "linf_rel": rep.linf_rel, "l2_rel": rep.l2_rel}
        tol = (spec.oracle or {}).get("tolerance")
        # discrepancy relative to the peak reference magnitude over the whole history
        peak = max(float(np.max(np.abs(v))) for v in ref.values())
        worst = max(r["linf_abs"] for r in report.values()) / peak if peak > 0 else 0.0
        summary["oracle"] = {"grid_shape": list(grid.shape), "stations": report, "worst_linf_rel": worst,
                             "tolerance": tol, "passed": None if tol is None else bool(worst <= tol),
                             "seconds": time.perf_counter() - t}
        _export_reference(spec, ref)
    export_summary(spec.out / "summary.json", summary)
    return summary


def _echo(sc):
    return {
        "la": sc.la, "lb": sc.lb, "h1": sc.h1, "h2": sc.h2, "origin": list(sc.origin),
        "upper": vars(sc.upper), "lower": vars(sc.lower),
        "bcs": {f: {"kind": b.kind, "constant": b.constant, "amplitude": [complex(b.amplitude).real,
                                                                        complex(b.amplitude).imag],
                    "period": b.period} for f, b in sc.bcs.items()},
        "dt": sc.dt, "steps": sc.steps, "t0": sc.t0, "omega": sc.omega, "u0": sc.u0,
    }


def _export_amplitudes(sample, path):
    with open(path, "w") as fh:
        fh.write("x1,x2,x3,re_u,im_u,amplitude,phase_deg\n")
        for p, u in zip(sample.points, sample.u):
            fh.write(",".join(repr(float(v)) for v in (*p, u.real, u.imag, abs(u), np.degrees(np.angle(u)))) + "\n")


def _export_reference(spec, ref):
    sc = spec.scenario
    with open(spec.out / "oracle_probes.csv", "w") as fh:
        fh.write("x1,x2,x3,t,u\n")
        for n in sorted(ref):
            t = sc.t0 + n * sc.dt
            vals = ref[n]
            if np.iscomplexobj(vals):
                vals = np.real(vals * np.exp(-1j * sc.omega * t))
            for p, u in zip(spec.probes, vals):
                fh.write(",".join(repr(float(v)) for v in (*p, t, u)) + "\n")


def compare_files(a, b, tol, column="u"):
    """Compare a column of two probe CSVs; returns (report, passed)."""
    da, db = read_csv(a), read_csv(b)
    for c in ("x1", "x2", "x3", "t"):
        if len(da[c]) != len(db[c]) or not np.allclose(da[c], db[c], rtol=0, atol=1e-12):
            raise ValidationError(f"probe sets differ in column {c}")
    rep = compare_fields(da[column], db[column], da["phase"], db["phase"])
    return rep, rep.linf_rel <= tol


def _parser():
    p = argparse.ArgumentParser(prog="dribem", description="Bilayer heat transfer with ellipsoidal inhomogeneities")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="solve a scenario file or bundled scenario name")
    r.add_argument("scenario")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--eigen-order", choices=("uniform", "linear", "quadratic"))
    r.add_argument("--dt", type=float)
    r.add_argument("--steps", type=int)
    r.add_argument("--omega", type=float)
    r.add_argument("--oracle", action="store_true", help="also run the finite-volume reference")
    r.add_argument("--out", default="out")
    r.add_argument("--threads", type=int, help="BLAS threads for dense algebra")
    c = sub.add_parser("compare", help="gate two probe CSV files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", type=float, default=0.01)
    c.add_argument("--column", default="u")
    sub.add_parser("scenarios", help="list bundled scenarios")
    return p


def _fail(code, exc):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "scenarios":
        print("\n".join(bundled_scenarios()))
        return EXIT_OK
    try:
        if args.command == "compare":
            rep, ok = compare_files(args.a, args.b, args.tol, args.column)
            print(json.dumps({"linf_abs": rep.linf_abs, "linf_rel": rep.linf_rel, "l2_rel": rep.l2_rel,
                              "n": rep.n, "tolerance": args.tol, "passed": bool(ok)}))
            return EXIT_OK if ok else EXIT_GATE
        config, source = _read_config(args.scenario)
        spec = build_run_spec(config, args, source)
        with _thread_limit(args.threads):
            summary = execute(spec)
        print(json.dumps({"out": str(spec.out), "system": summary["system"],
                          "oracle": summary.get("oracle", {}).get("worst_linf_rel")}))
        gate = summary.get("oracle", {}).get("passed")
        return EXIT_GATE if gate is False else EXIT_OK
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, exc)
    except (NumericalError, SingularInterpolationError, OracleResolutionError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail(1, exc)


def _thread_limit(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


if __name__ == "__main__":
    sys.exit(main())
