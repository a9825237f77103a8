"""
Concentric-ring triangulation of the unit disk with point electrodes.

Ring ``j`` (``j = 1..k``) carries ``4 j`` equally spaced nodes at radius
``j / k``; node 0 sits at the origin.  Consecutive rings are stitched by an
angular sweep, which yields ``4 k**2`` triangles in total (576 for 12 rings)
and a mesh that is invariant under the dihedral group of the square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DomainError, GeometryError

__all__ = [
    "Mesh",
    "build_disk_mesh",
    "validate",
    "element_geometry",
    "write_mesh",
    "read_mesh",
]

RADIUS_EPS = 1e-9
MIN_AREA = 1e-12
AREA_TOLERANCE = 0.02


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D triangulation.

    Parameters
    ----------
    nodes : ndarray, shape (N, 2)
        Node coordinates; the node id is the row index.
    elements : ndarray, shape (M, 3)
        Node indices of each triangle, counter-clockwise.
    boundary_ring : ndarray, shape (B,)
        Boundary nodes as an ordered counter-clockwise cycle.
    electrodes : ndarray, shape (L,)
        Boundary node attached to each electrode, electrode id = row index.
    region_tags : ndarray, shape (M,), optional
        Integer tag per element (default 0).
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_ring: np.ndarray
    electrodes: np.ndarray
    region_tags: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(self.nodes, float).reshape(-1, 2))
        object.__setattr__(self, "elements", _readonly(self.elements, np.int64).reshape(-1, 3))
        object.__setattr__(self, "boundary_ring", _readonly(self.boundary_ring, np.int64))
        object.__setattr__(self, "electrodes", _readonly(self.electrodes, np.int64))
        tags = self.region_tags
        if tags is None:
            tags = np.zeros(len(self.elements), dtype=np.int64)
        object.__setattr__(self, "region_tags", _readonly(tags, np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrodes)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Shape-function gradients, shape (M, 3, 2); rows sum to zero."""
        p = self.nodes[self.elements]
        x, y = p[..., 0], p[..., 1]
        # b_i = y_j - y_k, c_i = x_k - x_j for cyclic (i, j, k)
        b = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)
        c = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
        two_a = 2.0 * self.signed_areas[:, None]
        return np.stack([b / two_a, c / two_a], axis=-1)

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges (E, 2) and the number of elements sharing each."""
        e = self.elements
        all_edges = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        all_edges.sort(axis=1)
        uniq, counts = np.unique(all_edges, axis=0, return_counts=True)
        return uniq, counts

    @cached_property
    def element_adjacency(self) -> np.ndarray:
        """Pairs of elements sharing an interior edge, shape (E_int, 2), sorted."""
        e = self.elements
        m = len(e)
        local = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        local.sort(axis=1)
        owner = np.tile(np.arange(m), 3)
        order = np.lexsort((owner, local[:, 1], local[:, 0]))
        local, owner = local[order], owner[order]
        same = np.all(local[1:] == local[:-1], axis=1)
        pairs = np.stack([owner[:-1][same], owner[1:][same]], axis=1)
        pairs.sort(axis=1)
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    @property
    def electrode_angles(self) -> np.ndarray:
        p = self.nodes[self.electrodes]
        return np.arctan2(p[:, 1], p[:, 0])


def _sweep(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Stitch two concentric node rings (both starting at angle 0)."""
    n_in, n_out = len(inner), len(outer)
    tris = []
    i = o = 0
    while i < n_in or o < n_out:
        # compare (i+1)/n_in with (o+1)/n_out exactly; ties advance the inner ring
        if o == n_out or (i < n_in and (i + 1) * n_out <= (o + 1) * n_in):
            tris.append((inner[i], inner[(i + 1) % n_in], outer[o % n_out]))
            i += 1
        else:
            tris.append((inner[i % n_in], outer[(o + 1) % n_out], outer[o]))
            o += 1
    return tris


def build_disk_mesh(n_rings: int = 12, n_electrodes: int = 16) -> Mesh:
    """Build the concentric-ring disk mesh.

    Parameters
    ----------
    n_rings : int
        Number of node rings ``k``; the mesh has ``4 k**2`` triangles and
        ``4 k`` boundary nodes.
    n_electrodes : int
        Number of equally spaced point electrodes; must divide ``4 k``.

    Raises
    ------
    DomainError
        If ``n_rings < 2``.
    ConfigurationError
        If ``n_electrodes`` does not divide the boundary node count.
    """
    if int(n_rings) != n_rings or n_rings < 2:
        raise DomainError(f"n_rings must be an integer >= 2, got {n_rings}")
    n_rings = int(n_rings)
    n_boundary = 4 * n_rings
    if int(n_electrodes) != n_electrodes or n_electrodes < 1 or n_boundary % n_electrodes:
        raise ConfigurationError(
            f"n_electrodes={n_electrodes} does not divide the {n_boundary} boundary nodes "
            f"produced by n_rings={n_rings}"
        )
    n_electrodes = int(n_electrodes)

    coords = [(0.0, 0.0)]
    rings = [np.array([0])]
    for j in range(1, n_rings + 1):
        count = 4 * j
        start = len(coords)
        r = j / n_rings
        for i in range(count):
            t = 2.0 * math.pi * i / count
            coords.append((r * math.cos(t), r * math.sin(t)))
        rings.append(np.arange(start, start + count))
    nodes = np.array(coords)

    tris = [(0, rings[1][i], rings[1][(i + 1) % 4]) for i in range(4)]
    for j in range(2, n_rings + 1):
        tris.extend(_sweep(rings[j - 1], rings[j]))
    elements = np.array(tris, dtype=np.int64)

    p = nodes[elements]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0
    elements[cw] = elements[cw][:, [0, 2, 1]]

    boundary = rings[-1]
    electrodes = boundary[:: n_boundary // n_electrodes]
    return Mesh(nodes=nodes, elements=elements, boundary_ring=boundary, electrodes=electrodes)


def element_geometry(mesh: Mesh, elem: int) -> tuple[float, np.ndarray]:
    """Area and shape-function gradients (3, 2) of one element."""
    if not 0 <= elem < mesh.n_elements:
        raise DomainError(f"element index {elem} out of range [0, {mesh.n_elements})")
    area = float(mesh.signed_areas[elem])
    if not area > MIN_AREA:
        raise GeometryError(f"element {elem} is degenerate or clockwise (signed area {area:.3e})")
    return area, mesh.gradients[elem].copy()


def _polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def validate(mesh: Mesh) -> list[str]:
    """Check every structural invariant; return human-readable violations."""
    problems: list[str] = []
    n = mesh.n_nodes
    if mesh.nodes.ndim != 2 or mesh.nodes.shape[1] != 2:
        return ["nodes must be an (N, 2) array"]
    if not np.all(np.isfinite(mesh.nodes)):
        problems.append("non-finite node coordinates")
    r2 = np.einsum("ij,ij->i", mesh.nodes, mesh.nodes)
    for i in np.flatnonzero(r2 > 1.0 + RADIUS_EPS):
        problems.append(f"node {i} outside the unit disk")
    dup = cKDTree(mesh.nodes).query_pairs(1e-12)
    for i, j in sorted(dup):
        problems.append(f"nodes {i} and {j} have duplicate coordinates")

    if mesh.elements.size and (mesh.elements.min() < 0 or mesh.elements.max() >= n):
        problems.append("element references a node id outside 0..N-1")
        return problems
    for k, tri in enumerate(mesh.elements):
        if len(set(tri.tolist())) != 3:
            problems.append(f"element {k} repeats a vertex")
    areas = mesh.signed_areas
    for k in np.flatnonzero(areas < 0):
        problems.append(f"element {k} not CCW")
    for k in np.flatnonzero(np.abs(areas) <= MIN_AREA):
        problems.append(f"element {k} degenerate (area {areas[k]:.3e})")
    if len(mesh.region_tags) != mesh.n_elements:
        problems.append("region_tags length differs from element count")

    edges, counts = mesh.edges
    used = np.unique(mesh.elements)
    if len(used) != n:
        problems.append(f"{n - len(used)} nodes belong to no element")
    euler = n - len(edges) + mesh.n_elements
    if euler != 1:
        problems.append(f"Euler characteristic V-E+F = {euler}, expected 1")
    if np.any(counts > 2):
        problems.append(f"{int(np.sum(counts > 2))} edges shared by more than two elements")

    ring = mesh.boundary_ring
    ring_edges = np.sort(np.stack([ring, np.roll(ring, -1)], axis=1), axis=1)
    boundary_edges = edges[counts == 1]
    as_set = lambda a: {tuple(e) for e in a.tolist()}
    if len(ring) < 3 or as_set(ring_edges) != as_set(boundary_edges):
        problems.append("boundary_ring does not match the edges owned by a single element")
    elif len(set(ring.tolist())) != len(ring):
        problems.append("boundary_ring visits a node twice")
    else:
        poly = _polygon_area(mesh.nodes[ring])
        total = float(np.abs(areas).sum())
        if poly <= 0:
            problems.append("boundary_ring is not counter-clockwise")
        elif abs(total - poly) > 1e-9 * poly:
            problems.append(f"element areas sum to {total:.12g}, boundary polygon encloses {poly:.12g}")
        nb = len(ring)
        # an inscribed nb-gon cannot get closer to pi than this
        floor = 1.0 - 0.5 * nb * math.sin(2 * math.pi / nb) / math.pi
        tol = max(AREA_TOLERANCE, floor + 1e-9)
        if abs(total - math.pi) > tol * math.pi:
            problems.append(f"total area {total:.6f} deviates from pi by more than {100 * tol:.2f}%")

    el = mesh.electrodes
    on_ring = set(ring.tolist())
    if len(set(el.tolist())) != len(el):
        problems.append("electrode nodes are not distinct")
    for i, node in enumerate(el.tolist()):
        if node not in on_ring:
            problems.append(f"electrode {i} (node {node}) is not on the boundary ring")
    if len(el) > 1 and not problems:
        pos = {v: i for i, v in enumerate(ring.tolist())}
        steps = np.diff([pos[v] for v in el.tolist()] + [pos[el[0]] + len(ring)])
        steps = np.mod(steps, len(ring))
        if np.any(steps == 0) or steps.sum() != len(ring):
            problems.append("electrodes are not ordered counter-clockwise")
    return problems


def write_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text mesh format (17 significant digits)."""
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements} electrodes {mesh.n_electrodes}"]
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes.tolist())]
    lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(mesh.elements.tolist())]
    lines += [f"{i} {n}" for i, n in enumerate(mesh.electrodes.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def _ring_from_elements(elements: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    # directed boundary edges of CCW triangles traverse the boundary CCW
    directed = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]])
    und = {}
    for a, b in directed.tolist():
        key = (min(a, b), max(a, b))
        und[key] = None if key in und else (a, b)
    nxt = {e[0]: e[1] for e in und.values() if e is not None}
    if not nxt:
        return np.array([], dtype=np.int64)
    # start at the boundary node with angle closest to zero from above
    start = min(nxt, key=lambda v: (math.atan2(nodes[v, 1], nodes[v, 0]) % (2 * math.pi), v))
    ring = [start]
    while len(ring) <= len(nxt):
        v = nxt.get(ring[-1])
        if v is None or v == start:
            break
        ring.append(v)
    return np.array(ring, dtype=np.int64)


def read_mesh(path) -> Mesh:
    """Read a file written by :func:`write_mesh`."""
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    try:
        if head[0::2] != ["nodes", "elements", "electrodes"]:
            raise ValueError("bad header")
        n, m, l = (int(v) for v in head[1::2])
        rows = [line.split() for line in text[1 : 1 + n + m + l]]
        nodes = np.array([[float(r[1]), float(r[2])] for r in rows[:n]])
        elements = np.array([[int(v) for v in r[1:4]] for r in rows[n : n + m]], dtype=np.int64)
        electrodes = np.array([int(r[1]) for r in rows[n + m :]], dtype=np.int64)
        ids = [int(r[0]) for r in rows]
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed mesh file ({exc})") from None
    if ids != list(range(n)) + list(range(m)) + list(range(l)):
        raise ConfigurationError(f"{path}: ids must be contiguous from 0")
    ring = _ring_from_elements(elements, nodes)
    return Mesh(nodes=nodes, elements=elements.reshape(-1, 3), boundary_ring=ring, electrodes=electrodes)
