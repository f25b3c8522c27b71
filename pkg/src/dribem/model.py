"""Domain types, validation, material lookup and FGM microstructure generation.

The box spans x1 in [o1, o1 + la], x2 in [o2, o2 + lb] and x3 in [-h2, h1].
The bonded interface is the plane x3 = 0; points on it belong to the upper
layer. Temperatures are stored as changes from the initial temperature.
"""
from dataclasses import dataclass, field as dc_field, replace
import math

import numpy as np

FACES = ("top", "bottom", "x_min", "x_max", "y_min", "y_max")
EIGEN_ORDERS = ("uniform", "linear", "quadratic")
EIGEN_COUNTS = {"uniform": 4, "linear": 16, "quadratic": 40}
MODES = ("transient", "harmonic", "steady")


class ValidationError(ValueError):
    """Raised when a scenario or inclusion violates an invariant."""


@dataclass(frozen=True)
class MaterialProps:
    """Thermal conductivity [W/(m K)] and volumetric heat capacity [J/(m^3 K)]."""

    conductivity: float
    capacity: float = 0.0

    def __post_init__(self):
        if not self.conductivity > 0:
            raise ValidationError(f"conductivity must be positive, got {self.conductivity}")
        if not self.capacity >= 0:
            raise ValidationError(f"heat capacity must be non-negative, got {self.capacity}")


@dataclass(frozen=True)
class FaceBC:
    """Boundary condition on one box face.

    ``kind`` is ``"dirichlet"`` (temperature, K) or ``"neumann"`` (heat flux
    entering the body, W/m^2). The transient value is ``constant +
    amplitude * sin(2 pi t / period)``; steady solves use ``constant`` and
    harmonic solves use ``amplitude`` as the (complex) load amplitude.
    ``field``, if given, is a callable ``field(points, t)`` returning values
    at an (N, 3) array of points; it replaces the uniform value and is
    called with ``t=None`` for steady and harmonic solves.
    """

    kind: str
    constant: float = 0.0
    amplitude: complex = 0.0
    period: float = math.inf
    field: object = dc_field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValidationError(f"unknown boundary condition kind {self.kind!r}")
        if self.amplitude != 0 and not self.period > 0:
            raise ValidationError("sinusoidal boundary condition needs a positive period")

    def at(self, t):
        if self.amplitude == 0 or math.isinf(self.period):
            return self.constant
        return self.constant + float(np.real(self.amplitude)) * math.sin(2.0 * math.pi * t / self.period)

    def values(self, points, t=None):
        """Values at ``points`` at time ``t`` (``None`` for the steady value)."""
        points = np.atleast_2d(points)
        if self.field is not None:
            return np.broadcast_to(np.asarray(self.field(points, t)), (len(points),)).astype(float)
        return np.full(len(points), self.constant if t is None else self.at(t))

    def phasor(self, points):
        """Complex load amplitude at ``points`` for a harmonic solve."""
        points = np.atleast_2d(points)
        if self.field is not None:
            return np.broadcast_to(np.asarray(self.field(points, None)), (len(points),)).astype(complex)
        return np.full(len(points), complex(self.amplitude))


@dataclass(frozen=True)
class BilayerScenario:
    """Geometry, phases, boundary conditions and time or frequency controls."""

    la: float
    lb: float
    h1: float
    h2: float
    upper: MaterialProps
    lower: MaterialProps
    bcs: dict
    mode: str = "transient"
    dt: float = 0.1
    steps: int = 10
    t0: float = 0.0
    omega: float = 0.0
    u0: float = 0.0
    origin: tuple = (0.0, 0.0)

    @property
    def bounds(self):
        """Array ``[[x1min, x1max], [x2min, x2max], [x3min, x3max]]``."""
        o1, o2 = self.origin
        return np.array([[o1, o1 + self.la], [o2, o2 + self.lb], [-self.h2, self.h1]])

    @property
    def length_scale(self):
        return max(self.la, self.lb, self.h1 + self.h2)

    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def with_mode(self, mode, **kw):
        return replace(self, mode=mode, **kw)


@dataclass(frozen=True)
class Inclusion:
    """Ellipsoidal inhomogeneity with axes aligned to the box."""

    center: tuple
    semi_axes: tuple
    props: MaterialProps
    eigen_order: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(v) for v in self.semi_axes))
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValidationError("inclusion center and semi-axes need three components")
        if min(self.semi_axes) <= 0:
            raise ValidationError(f"semi-axes must be positive, got {self.semi_axes}")
        if self.eigen_order not in EIGEN_ORDERS:
            raise ValidationError(f"eigen order must be one of {EIGEN_ORDERS}")

    @property
    def upper(self):
        return self.center[2] > 0

    @property
    def n_coeffs(self):
        return EIGEN_COUNTS[self.eigen_order]

    def with_order(self, order):
        return replace(self, eigen_order=order)


def material_at(x, scenario, tol=1e-12):
    """Matrix properties at ``x`` (upper for x3 >= 0); inclusions are not consulted."""
    x = np.asarray(x, dtype=float)
    b = scenario.bounds
    slack = tol * scenario.length_scale
    if np.any(x < b[:, 0] - slack) or np.any(x > b[:, 1] + slack):
        raise ValidationError(f"point {x.tolist()} lies outside the box")
    return scenario.upper if x[2] >= 0 else scenario.lower


def _sphere_extent(inc):
    return np.asarray(inc.center), np.asarray(inc.semi_axes)


def _ellipsoids_overlap(a, b):
    """Conservative test on sampled surfaces plus bounding spheres."""
    ca, ra = _sphere_extent(a)
    cb, rb = _sphere_extent(b)
    d = np.linalg.norm(ca - cb)
    if d >= ra.max() + rb.max():
        return False, d - ra.max() - rb.max()
    if d < ra.min() + rb.min():
        return True, d - ra.min() - rb.min()
    # sample the surface of a and test against the interior of b
    u = np.linspace(0, np.pi, 40)
    v = np.linspace(0, 2 * np.pi, 80)
    s = np.stack([np.outer(np.sin(u), np.cos(v)), np.outer(np.sin(u), np.sin(v)),
                  np.outer(np.cos(u), np.ones_like(v))], axis=-1).reshape(-1, 3)
    pa = ca + s * ra
    xi = np.sum(((pa - cb) / rb) ** 2, axis=1)
    return bool(np.any(xi <= 1.0)), float(np.sqrt(xi.min()) - 1.0) * rb.min()


def validate_scenario(scenario, inclusions=()):
    """Check all invariants; return a report of clearances.

    Raises
    ------
    ValidationError
        Naming the offending face, layer or inclusion.
    """
    for name in ("la", "lb", "h1", "h2"):
        if not getattr(scenario, name) > 0:
            raise ValidationError(f"box dimension {name} must be positive")
    if scenario.mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if scenario.mode == "transient" and not scenario.dt > 0:
        raise ValidationError("time step must be positive in transient mode")
    if scenario.mode == "transient" and scenario.steps < 1:
        raise ValidationError("transient mode needs at least one step")
    if scenario.omega < 0:
        raise ValidationError("frequency must be non-negative")
    if set(scenario.bcs) != set(FACES):
        missing = sorted(set(FACES) - set(scenario.bcs))
        extra = sorted(set(scenario.bcs) - set(FACES))
        raise ValidationError(f"every face needs one boundary condition (missing {missing}, unknown {extra})")
    b = scenario.bounds
    report = {"interface_clearance": [], "box_clearance": [], "pair_clearance": math.inf}
    for n, inc in enumerate(inclusions):
        c, a = _sphere_extent(inc)
        if abs(c[2]) <= a[2]:
            raise ValidationError(f"inclusion {n} crosses the interface x3 = 0")
        lo = c - a - b[:, 0]
        hi = b[:, 1] - (c + a)
        if np.any(lo <= 0) or np.any(hi <= 0):
            raise ValidationError(f"inclusion {n} is not strictly inside the box")
        report["interface_clearance"].append(abs(c[2]) - a[2])
        report["box_clearance"].append(float(min(lo.min(), hi.min())))
    centers = np.array([i.center for i in inclusions]) if inclusions else np.zeros((0, 3))
    rmax = np.array([max(i.semi_axes) for i in inclusions]) if inclusions else np.zeros(0)
    for i in range(len(inclusions)):
        d = np.linalg.norm(centers[i + 1:] - centers[i], axis=1)
        near = np.flatnonzero(d < rmax[i + 1:] + rmax[i]) + i + 1
        if len(d):
            report["pair_clearance"] = min(report["pair_clearance"], float((d - rmax[i + 1:] - rmax[i]).min()))
        for j in near:
            hit, gap = _ellipsoids_overlap(inclusions[i], inclusions[j])
            if hit:
                raise ValidationError(f"inclusions {i} and {j} intersect")
            report["pair_clearance"] = min(report["pair_clearance"], gap)
    return report


def fgm_volume_fraction(z, h):
    """Target particle fraction: 0 at the outer face, 0.5 at the interface."""
    return 0.5 * (1.0 - abs(z) / h)


def build_fgm_inclusions(div, scenario, upper_particle, lower_particle, eigen_order="uniform",
                         elevation="center"):
    """Spheres at the centres of cubes of side (h1 + h2)/div tiling the box.

    Particles in the upper layer carry ``upper_particle`` properties and
    vice versa. The radius reproduces the target volume fraction evaluated
    at the cube-centre elevation, or at the cube face nearest the interface
    with ``elevation="inner"`` (largest spheres then sit at f = 0.5 and the
    total fraction exceeds 25% by 0.25/n for n cube layers per side).
    """
    if div < 4 or div % 2:
        raise ValidationError("div must be an even integer >= 4")
    if elevation not in ("center", "inner"):
        raise ValidationError(f"unknown elevation rule {elevation!r}")
    s = (scenario.h1 + scenario.h2) / div
    counts = []
    for length in (scenario.la, scenario.lb, scenario.h1, scenario.h2):
        m = length / s
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise ValidationError(f"box length {length} is not a whole number of cubes of side {s}")
        counts.append(int(round(m)))
    n1, n2, nu, nl = counts
    b = scenario.bounds
    xs = b[0, 0] + s * (np.arange(n1) + 0.5)
    ys = b[1, 0] + s * (np.arange(n2) + 0.5)
    zs = np.concatenate([s * (np.arange(nu) + 0.5), -s * (np.arange(nl) + 0.5)])
    out = []
    for z in zs:
        h = scenario.h1 if z > 0 else scenario.h2
        f = fgm_volume_fraction(z if elevation == "center" else abs(z) - 0.5 * s, h)
        r = s * (3.0 * f / (4.0 * np.pi)) ** (1.0 / 3.0)
        if r > 0.5 * s:
            raise ValidationError(f"particle radius {r:g} exceeds half the cube side {s:g}")
        if r <= 0:
            continue
        props = upper_particle if z > 0 else lower_particle
        for x in xs:
            for y in ys:
                out.append(Inclusion((x, y, z), (r, r, r), props, eigen_order))
    return out


def particle_volume_fraction(inclusions, scenario, upper=True):
    """Volume fraction of particles within the upper or lower layer."""
    vol = sum(4.0 / 3.0 * np.pi * np.prod(i.semi_axes) for i in inclusions if i.upper == upper)
    layer = scenario.la * scenario.lb * (scenario.h1 if upper else scenario.h2)
    return vol / layer
