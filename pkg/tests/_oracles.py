"""
Independent reference computations for the test-suite.

Nothing here calls into the package's assembly or solver code.  Element
matrices come from inverting the 3x3 barycentric system, the reduced
system is grounded at the *last* node (the package grounds node 0) and
solved densely with numpy.
"""

from __future__ import annotations

import numpy as np

from gaeit.mesh import Mesh


def square_two_element(a: float = 0.6) -> Mesh:
    """Square with corners (+-a, +-a) split along one diagonal; one electrode per corner."""
    nodes = [(-a, -a), (a, -a), (a, a), (-a, a)]
    return Mesh(nodes, [[0, 1, 2], [0, 2, 3]], [0, 1, 2, 3], [0, 1, 2, 3])


def square_four_element(a: float = 0.6) -> Mesh:
    """Same square with an interior node, four triangles meeting there.

    The interior node sits off-center: with right angles at a centered node
    the boundary edges carry no conductance and every reading vanishes.
    """
    nodes = [(-a, -a), (a, -a), (a, a), (-a, a), (0.15, -0.1)]
    elements = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return Mesh(nodes, elements, [0, 1, 2, 3], [0, 1, 2, 3])


def local_matrices(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Unit-conductivity P1 stiffness of every element, shape (M, 3, 3)."""
    out = np.empty((len(elements), 3, 3))
    for k, tri in enumerate(elements):
        P = np.column_stack([np.ones(3), nodes[tri]])
        G = np.linalg.inv(P)[1:].T  # row i: gradient of shape function i
        area = 0.5 * abs(np.linalg.det(P))
        out[k] = area * G @ G.T
    return out


def dense_stiffness(nodes, elements, rho, local=None) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    elements = np.asarray(elements)
    if local is None:
        local = local_matrices(nodes, elements)
    K = np.zeros((len(nodes), len(nodes)))
    for tri, L, r in zip(elements, local, rho):
        K[np.ix_(tri, tri)] += L / r
    return K


def injection(mesh: Mesh, protocol) -> np.ndarray:
    B = np.zeros((mesh.n_nodes, len(protocol.patterns)))
    for k, pat in enumerate(protocol.patterns):
        B[mesh.electrodes[pat.source], k] += pat.current
        B[mesh.electrodes[pat.sink], k] -= pat.current
    return B


def grounded_solve(K: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Potentials with the last node held at zero."""
    u = np.zeros(B.shape)
    u[:-1] = np.linalg.solve(K[:-1, :-1], B[:-1])
    return u


def readings(mesh: Mesh, protocol, u: np.ndarray) -> np.ndarray:
    rows = protocol.rows()
    el = mesh.electrodes
    return u[el[rows[:, 1]], rows[:, 0]] - u[el[rows[:, 2]], rows[:, 0]]


def dense_forward(mesh: Mesh, rho, protocol) -> np.ndarray:
    K = dense_stiffness(mesh.nodes, mesh.elements, rho)
    return readings(mesh, protocol, grounded_solve(K, injection(mesh, protocol)))


def dense_objective(mesh, rho, y, protocol, alpha=0.0, rho_ref=None) -> float:
    """``||y - h(rho)|| + alpha * ||rho - rho_ref||**2`` (identity Tikhonov)."""
    rho = np.asarray(rho, dtype=float)
    ref = np.ones_like(rho) if rho_ref is None else rho_ref
    r = np.asarray(y) - dense_forward(mesh, rho, protocol)
    return float(np.sqrt(r @ r)) + alpha * float((rho - ref) @ (rho - ref))


def secant_jacobian(mesh: Mesh, rho, protocol, step: float = 1e-6) -> np.ndarray:
    """Central differences ``(h(rho + d e_k) - h(rho - d e_k)) / 2d`` with ``d = step * rho_k``.

    The difference ``u+ - u-`` is obtained from ``K+ (u+ - u-) = (K- - K+) u-``
    with ``K- - K+`` formed in closed form, so no two nearly equal
    potentials are ever subtracted.  That keeps entries down to ~1e-12
    accurate in double precision.
    """
    rho = np.asarray(rho, dtype=float)
    local = local_matrices(np.asarray(mesh.nodes), np.asarray(mesh.elements))
    K0 = dense_stiffness(mesh.nodes, mesh.elements, rho, local)
    B = injection(mesh, protocol)
    out = np.empty((protocol.n_measurements, mesh.n_elements))
    for e, tri in enumerate(mesh.elements):
        d = step * rho[e]
        ix = np.ix_(tri, tri)
        Kp, Km = K0.copy(), K0.copy()
        Kp[ix] += local[e] * (1.0 / (rho[e] + d) - 1.0 / rho[e])
        Km[ix] += local[e] * (1.0 / (rho[e] - d) - 1.0 / rho[e])
        um = grounded_solve(Km, B)
        dK = np.zeros_like(K0)
        dK[ix] = local[e] * (2.0 * d / ((rho[e] - d) * (rho[e] + d)))
        du = grounded_solve(Kp, dK @ um)
        out[:, e] = readings(mesh, protocol, du) / (2.0 * d)
    return out


def log_kernel_potential(points: np.ndarray, source, sink, current: float = 1.0, rho: float = 1.0) -> np.ndarray:
    """Exact potential in the unit disk for point electrodes on the rim.

    With both poles on the boundary the Neumann Green's function reduces to
    ``(rho I / pi) ln(|x - sink| / |x - source|)`` up to a constant.
    """
    p = np.asarray(points, dtype=float)
    d_src = np.hypot(*(p - np.asarray(source)).T)
    d_snk = np.hypot(*(p - np.asarray(sink)).T)
    return rho * current / np.pi * np.log(d_snk / d_src)


def grid_minimum(mesh: Mesh, protocol, y, alpha: float, levels: np.ndarray, rho_ref=None):
    """Exhaustive search of the identity-Tikhonov objective over ``levels**n_elements``.

    All grid points are solved at once with a batched dense solve.
    Returns ``(f_min, rho_argmin)``.
    """
    m = mesh.n_elements
    local = local_matrices(np.asarray(mesh.nodes), np.asarray(mesh.elements))
    grid = np.stack(np.meshgrid(*[levels] * m, indexing="ij"), axis=-1).reshape(-1, m)
    n = mesh.n_nodes
    K = np.zeros((len(grid), n, n))
    for e, tri in enumerate(mesh.elements):
        ix = np.ix_(tri, tri)
        K[:, ix[0], ix[1]] += local[e][None] / grid[:, e, None, None]
    B = injection(mesh, protocol)
    u = np.zeros((len(grid), n, B.shape[1]))
    u[:, :-1] = np.linalg.solve(K[:, :-1, :-1], np.broadcast_to(B[:-1], (len(grid),) + B[:-1].shape))
    rows = protocol.rows()
    el = mesh.electrodes
    h = u[:, el[rows[:, 1]], rows[:, 0]] - u[:, el[rows[:, 2]], rows[:, 0]]
    ref = np.ones(m) if rho_ref is None else np.asarray(rho_ref)
    f = np.linalg.norm(np.asarray(y)[None] - h, axis=1) + alpha * np.sum((grid - ref) ** 2, axis=1)
    k = int(np.argmin(f))
    return float(f[k]), grid[k]


def square_protocol():
    """Adjacent drives plus both diagonals on the four square corners."""
    from gaeit.forward import Protocol, StimulationPattern

    drives = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)]
    pairs = [[(2, 3)], [(3, 0)], [(0, 1)], [(1, 2)], [(1, 3)], [(0, 2)]]
    return Protocol("square4", [StimulationPattern(*d) for d in drives], pairs)


TOY_ALPHA = 1e-2
TOY_LEVELS = np.linspace(0.5, 2.0, 21)


def toy_problem():
    """Four-element inverse problem with two competing basins.

    Returns ``(mesh, protocol, y)``; the data come from (1.6, 0.7, 1.2, 0.9)
    with a fixed 2% distortion.
    """
    from gaeit.forward import MeasurementSet

    mesh = square_four_element()
    protocol = square_protocol()
    distortion = 1 + 0.02 * np.array([1.0, -1.0, 0.5, -0.3, 0.8, -0.6])
    y = dense_forward(mesh, [1.6, 0.7, 1.2, 0.9], protocol) * distortion
    return mesh, protocol, MeasurementSet(y, protocol.name)
