"""Structured quadrilateral surface mesh of the bi-layer box.

Faces are meshed with bilinear quadrilaterals whose vertex order is
counter-clockwise seen from outside, so the outward normal is
``(v1 - v0) x (v3 - v0)``. The interface trace x3 = 0 is always a mesh
line on the lateral faces and no element lies on the interface itself.
"""
from dataclasses import dataclass
import warnings

import numpy as np

from .model import FACES

# outward normal and the two in-plane axes (u, v) with u x v = normal
_FACE_AXES = {
    "top": ((0, 0, 1), 0, 1),
    "bottom": ((0, 0, -1), 1, 0),
    "x_max": ((1, 0, 0), 1, 2),
    "x_min": ((-1, 0, 0), 2, 1),
    "y_max": ((0, 1, 0), 2, 0),
    "y_min": ((0, -1, 0), 0, 2),
}


@dataclass
class BoundaryMesh:
    """Nodes, elements and interior interpolation points of the box surface."""

    nodes: np.ndarray
    elements: np.ndarray
    element_face: np.ndarray
    normals: np.ndarray
    node_faces: np.ndarray
    interior: np.ndarray
    divisions: tuple

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def element_vertices(self):
        return self.nodes[self.elements]

    def element_areas(self):
        v = self.element_vertices()
        return 0.5 * (np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
                      + np.linalg.norm(np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]), axis=1))

    def face_nodes(self, face):
        return np.flatnonzero(self.node_faces[:, FACES.index(face)])


def _grid(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def build_box_mesh(scenario, nx, ny, nz_upper, nz_lower, interior=None):
    """Mesh the six faces of the box.

    Parameters
    ----------
    scenario : BilayerScenario
    nx, ny : int
        Divisions along x1 and x2.
    nz_upper, nz_lower : int
        Divisions along x3 in the upper and lower layers.
    interior : array_like, optional
        Interior interpolation points to attach.
    """
    if min(nx, ny, nz_upper, nz_lower) < 1:
        raise ValueError("all subdivision counts must be at least 1")
    b = scenario.bounds
    if np.any(b[:, 1] - b[:, 0] <= 0):
        raise ValueError("degenerate box dimensions")
    lines = [
        _grid(b[0, 0], b[0, 1], nx),
        _grid(b[1, 0], b[1, 1], ny),
        np.concatenate([_grid(b[2, 0], 0.0, nz_lower), _grid(0.0, b[2, 1], nz_upper)[1:]]),
    ]
    scale = scenario.length_scale
    index = {}
    nodes, faces_of = [], []
    elements, element_face, normals = [], [], []

    def node_id(p, face):
        key = tuple(np.round(np.asarray(p) / scale, 10))
        if key not in index:
            index[key] = len(nodes)
            nodes.append(p)
            faces_of.append(set())
        faces_of[index[key]].add(face)
        return index[key]

    for f, face in enumerate(FACES):
        normal, iu, iv = _FACE_AXES[face]
        normal = np.array(normal, dtype=float)
        axis = int(np.flatnonzero(normal)[0])
        fixed = b[axis, 1] if normal[axis] > 0 else b[axis, 0]
        gu, gv = lines[iu], lines[iv]
        ids = np.empty((len(gu), len(gv)), dtype=int)
        for i, u in enumerate(gu):
            for j, v in enumerate(gv):
                p = np.zeros(3)
                p[axis] = fixed
                p[iu] = u
                p[iv] = v
                ids[i, j] = node_id(p, f)
        for i in range(len(gu) - 1):
            for j in range(len(gv) - 1):
                elements.append([ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]])
                element_face.append(f)
                normals.append(normal)
    node_faces = np.zeros((len(nodes), len(FACES)), dtype=bool)
    for n, fs in enumerate(faces_of):
        node_faces[n, list(fs)] = True
    pts = np.zeros((0, 3)) if interior is None else np.asarray(interior, dtype=float)
    return BoundaryMesh(
        nodes=np.array(nodes),
        elements=np.array(elements),
        element_face=np.array(element_face),
        normals=np.array(normals),
        node_faces=node_faces,
        interior=pts,
        divisions=(nx, ny, nz_upper, nz_lower),
    )


def _inside_any(p, inclusions, margin):
    for inc in inclusions:
        c = np.asarray(inc.center)
        a = np.asarray(inc.semi_axes) * (1.0 + margin)
        if np.sum(((p - c) / a) ** 2) <= 1.0:
            return True
    return False


def interior_interpolation_points(scenario, counts, inclusions=(), margin=0.05):
    """Regular cell-centred grid of interior points in both layers.

    Parameters
    ----------
    counts : tuple of int
        ``(n1, n2, n3_upper, n3_lower)`` points along each direction.
    inclusions : sequence of Inclusion
        Points falling inside an inclusion (inflated by ``margin``) are
        moved to the nearest free offset on a finer sub-grid, with a warning.
    """
    n1, n2, nu, nl = counts
    b = scenario.bounds
    h = np.array([scenario.la / n1, scenario.lb / n2])
    xs = b[0, 0] + h[0] * (np.arange(n1) + 0.5)
    ys = b[1, 0] + h[1] * (np.arange(n2) + 0.5)
    zs = np.concatenate([-scenario.h2 / nl * (np.arange(nl)[::-1] + 0.5),
                         scenario.h1 / nu * (np.arange(nu) + 0.5)])
    pts = np.array([[x, y, z] for z in zs for y in ys for x in xs])
    if not inclusions:
        return pts
    dz = np.where(pts[:, 2] > 0, scenario.h1 / nu, scenario.h2 / nl)
    steps = np.arange(-4, 5) / 8.0
    offsets = np.array([[i, j, k] for i in steps for j in steps for k in steps])
    offsets = offsets[np.argsort(np.linalg.norm(offsets, axis=1), kind="stable")]
    moved = 0
    for n, p in enumerate(pts):
        if not _inside_any(p, inclusions, margin):
            continue
        cell = np.array([h[0], h[1], dz[n]])
        for o in offsets[1:]:
            q = p + o * cell
            if q[2] * p[2] > 0 and not _inside_any(q, inclusions, margin):
                pts[n] = q
                moved += 1
                break
        else:
            raise ValueError(f"no free position near interpolation point {p.tolist()}")
    if moved:
        warnings.warn(f"{moved} interpolation points moved out of inclusions", stacklevel=2)
    return pts


def export_mesh(mesh, path):
    """Plain-text listing of nodes, elements (with normals) and interior points."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for n, p in enumerate(mesh.nodes):
            fh.write(f"{n} {p[0]!r} {p[1]!r} {p[2]!r}\n")
        fh.write(f"# elements {mesh.n_elements}: id n0 n1 n2 n3 face nx ny nz\n")
        for e, (el, f, nv) in enumerate(zip(mesh.elements, mesh.element_face, mesh.normals)):
            fh.write(f"{e} {el[0]} {el[1]} {el[2]} {el[3]} {FACES[f]} {nv[0]:g} {nv[1]:g} {nv[2]:g}\n")
        fh.write(f"# interior {len(mesh.interior)}\n")
        for n, p in enumerate(mesh.interior):
            fh.write(f"{n} {p[0]!r} {p[1]!r} {p[2]!r}\n")
