"""
P1 finite-element forward model with point electrodes.

Conductivity is ``1 / rho`` per element.  The reference node 0 is grounded
by deleting its row and column, which leaves a sparse SPD system that is
factorized once per resistivity field (banded Cholesky after a one-time
bandwidth-reducing reordering) and reused for every pattern.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import ConfigurationError, DomainError, NumericalError
from .mesh import Mesh

__all__ = [
    "StimulationPattern",
    "Protocol",
    "MeasurementSet",
    "adjacent_protocol",
    "check_rho",
    "assemble_stiffness",
    "solve_pattern",
    "forward_solve",
    "jacobian",
    "write_measurements",
    "read_measurements",
]

GROUND = 0


@dataclass(frozen=True)
class StimulationPattern:
    source: int
    sink: int
    current: float = 1.0

    def __post_init__(self):
        if self.source == self.sink:
            raise DomainError(f"source and sink electrode are both {self.source}")


@dataclass(frozen=True)
class Protocol:
    """Ordered drive patterns and, per pattern, ordered (e+, e-) voltage pairs."""

    name: str
    patterns: tuple[StimulationPattern, ...]
    measurement_pairs: tuple[tuple[tuple[int, int], ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        object.__setattr__(
            self, "measurement_pairs", tuple(tuple(tuple(p) for p in ps) for ps in self.measurement_pairs)
        )
        if len(self.patterns) != len(self.measurement_pairs):
            raise ConfigurationError("one list of measurement pairs is required per pattern")
        for pat, pairs in zip(self.patterns, self.measurement_pairs):
            for a, b in pairs:
                if {a, b} & {pat.source, pat.sink}:
                    raise ConfigurationError(
                        f"pair ({a}, {b}) touches driving electrodes ({pat.source}, {pat.sink})"
                    )

    @property
    def n_measurements(self) -> int:
        return sum(len(p) for p in self.measurement_pairs)

    @property
    def max_electrode(self) -> int:
        used = [e for p in self.patterns for e in (p.source, p.sink)]
        used += [e for ps in self.measurement_pairs for pair in ps for e in pair]
        return max(used)

    def rows(self) -> np.ndarray:
        """(n_measurements, 3) array of (pattern index, e+, e-)."""
        out = [(k, a, b) for k, ps in enumerate(self.measurement_pairs) for a, b in ps]
        return np.array(out, dtype=np.int64).reshape(-1, 3)


def adjacent_protocol(n_electrodes: int = 16, current: float = 1.0) -> Protocol:
    """Adjacent drive, adjacent differential measurement.

    Pattern ``p`` drives ``(p, p+1)``; its pairs are ``(q, q+1)`` for ascending
    ``q``, skipping any pair that touches a driven electrode.  For 16
    electrodes this gives 16 x 13 = 208 readings.
    """
    if n_electrodes < 4:
        raise ConfigurationError(f"adjacent protocol needs at least 4 electrodes, got {n_electrodes}")
    n = n_electrodes
    patterns, pairs = [], []
    for p in range(n):
        drive = {p, (p + 1) % n}
        patterns.append(StimulationPattern(p, (p + 1) % n, current))
        pairs.append(tuple((q, (q + 1) % n) for q in range(n) if not {q, (q + 1) % n} & drive))
    return Protocol(f"adjacent{n}", tuple(patterns), tuple(pairs))


@dataclass(frozen=True)
class MeasurementSet:
    values: np.ndarray
    protocol_id: str

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


def check_rho(mesh: Mesh, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (mesh.n_elements,):
        raise DomainError(f"rho has shape {rho.shape}, mesh has {mesh.n_elements} elements")
    bad = np.flatnonzero(~(np.isfinite(rho) & (rho > 0)))
    if bad.size:
        k = int(bad[0])
        raise DomainError(f"rho must be finite and positive; element {k} has rho={rho[k]!r}")
    return rho


class _Pattern:
    """Sparsity pattern of the stiffness matrix and scatter maps for fast assembly.

    The grounded system is reordered once with reverse Cuthill-McKee and
    stored in LAPACK upper band format, so each factorization is a banded
    Cholesky of fixed bandwidth.
    """

    def __init__(self, mesh: Mesh):
        n = mesh.n_nodes
        grads = mesh.gradients
        area = mesh.signed_areas
        self.local = area[:, None, None] * np.einsum("eik,ejk->eij", grads, grads)
        rows = np.repeat(mesh.elements, 3, axis=1).ravel()
        cols = np.tile(mesh.elements, (1, 3)).ravel()
        key = rows * n + cols
        uniq, self.scatter = np.unique(key, return_inverse=True)
        self.full_rows, self.full_cols = uniq // n, uniq % n
        self.n = n

        keep = (self.full_rows != GROUND) & (self.full_cols != GROUND)
        # reduced indices shift down past the grounded node
        r = self.full_rows[keep] - (self.full_rows[keep] > GROUND)
        c = self.full_cols[keep] - (self.full_cols[keep] > GROUND)
        graph = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n - 1, n - 1))
        perm = reverse_cuthill_mckee(graph, symmetric_mode=True)
        self.perm = perm
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        pr, pc = inv[r], inv[c]
        upper = pr <= pc
        self.bandwidth = int(np.max(pc - pr)) if len(pr) else 0
        self.band_src = np.flatnonzero(keep)[upper]
        self.band_row = self.bandwidth + pr[upper] - pc[upper]
        self.band_col = pc[upper]

    def values(self, sigma: np.ndarray) -> np.ndarray:
        w = (sigma[:, None, None] * self.local).ravel()
        return np.bincount(self.scatter, weights=w, minlength=len(self.full_rows))

    def banded(self, sigma: np.ndarray) -> np.ndarray:
        ab = np.zeros((self.bandwidth + 1, self.n - 1))
        ab[self.band_row, self.band_col] = self.values(sigma)[self.band_src]
        return ab


_pattern_lock = threading.Lock()


def _pattern(mesh: Mesh) -> _Pattern:
    pat = mesh.__dict__.get("_fem_pattern")
    if pat is None:
        with _pattern_lock:
            pat = mesh.__dict__.get("_fem_pattern")
            if pat is None:
                pat = _Pattern(mesh)
                mesh.__dict__["_fem_pattern"] = pat
    return pat


def assemble_stiffness(mesh: Mesh, rho) -> sp.csr_matrix:
    """Global (ungrounded) stiffness matrix for conductivity ``1 / rho``."""
    rho = check_rho(mesh, rho)
    pat = _pattern(mesh)
    data = pat.values(1.0 / rho)
    return sp.csr_matrix((data, (pat.full_rows, pat.full_cols)), shape=(pat.n, pat.n))


class _Factorized:
    def __init__(self, mesh: Mesh, rho: np.ndarray):
        self.pat = _pattern(mesh)
        try:
            self.factor = cholesky_banded(self.pat.banded(1.0 / rho), check_finite=False)
        except LinAlgError as exc:
            raise NumericalError(f"grounded stiffness matrix is not positive definite: {exc}") from None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for full nodal fields; ``rhs`` is (n_nodes, k)."""
        perm = self.pat.perm
        out = np.zeros_like(rhs, dtype=float)
        x = cho_solve_banded((self.factor, False), rhs[1:][perm], check_finite=False)
        out[1:][perm] = x
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite potentials returned by the banded solver")
        return out


def _injection(mesh: Mesh, drives: Sequence[tuple[int, int, float]]) -> np.ndarray:
    b = np.zeros((mesh.n_nodes, len(drives)))
    for k, (src, snk, cur) in enumerate(drives):
        b[mesh.electrodes[src], k] += cur
        b[mesh.electrodes[snk], k] -= cur
    return b


def _check_protocol(mesh: Mesh, protocol: Protocol) -> None:
    if protocol.max_electrode >= mesh.n_electrodes:
        raise ConfigurationError(
            f"protocol {protocol.name} uses electrode {protocol.max_electrode} "
            f"but the mesh has {mesh.n_electrodes}"
        )


def solve_pattern(mesh: Mesh, rho, pattern: StimulationPattern) -> np.ndarray:
    """Nodal potential for a single drive pattern, node 0 grounded to zero."""
    rho = check_rho(mesh, rho)
    for e in (pattern.source, pattern.sink):
        if not 0 <= e < mesh.n_electrodes:
            raise ConfigurationError(f"electrode {e} does not exist (mesh has {mesh.n_electrodes})")
    fac = _Factorized(mesh, rho)
    b = _injection(mesh, [(pattern.source, pattern.sink, pattern.current)])
    return fac.solve(b)[:, 0]


def _drive_fields(mesh, rho, protocol):
    fac = _Factorized(mesh, rho)
    drives = [(p.source, p.sink, p.current) for p in protocol.patterns]
    return fac, fac.solve(_injection(mesh, drives))


def _readings(mesh, protocol, phi) -> np.ndarray:
    rows = protocol.rows()
    plus = mesh.electrodes[rows[:, 1]]
    minus = mesh.electrodes[rows[:, 2]]
    return phi[plus, rows[:, 0]] - phi[minus, rows[:, 0]]


def forward_solve(mesh: Mesh, rho, protocol: Protocol) -> MeasurementSet:
    """Surface voltages ``h(rho)`` in canonical protocol order.

    One banded Cholesky factorization is shared by all patterns.  Safe to call from
    several threads on a shared mesh.
    """
    rho = check_rho(mesh, rho)
    _check_protocol(mesh, protocol)
    _, phi = _drive_fields(mesh, rho, protocol)
    return MeasurementSet(_readings(mesh, protocol, phi), protocol.name)


def jacobian(mesh: Mesh, rho, protocol: Protocol, return_measurements: bool = False):
    """Sensitivity of every reading to every element resistivity.

    Uses the adjoint identity ``dV/dsigma_e = -A_e grad(u_meas) . grad(u_drive)``
    with unit-current adjoint fields on the measurement pairs, then the chain
    rule ``dV/drho_e = -dV/dsigma_e / rho_e**2``.

    Returns
    -------
    J : ndarray, shape (n_measurements, n_elements)
    h : MeasurementSet
        Only when ``return_measurements`` is true; shares the factorization.
    """
    rho = check_rho(mesh, rho)
    _check_protocol(mesh, protocol)
    fac, phi = _drive_fields(mesh, rho, protocol)

    rows = protocol.rows()
    pairs = sorted({(int(a), int(b)) for _, a, b in rows})
    index = {p: k for k, p in enumerate(pairs)}
    adj = fac.solve(_injection(mesh, [(a, b, 1.0) for a, b in pairs]))

    grads = mesh.gradients
    el = mesh.elements
    # element gradients of each field, shape (fields, M, 2)
    g_drive = np.einsum("eik,eif->fek", grads, phi[el])
    g_adj = np.einsum("eik,eif->fek", grads, adj[el])
    meas = np.array([index[(int(a), int(b))] for _, a, b in rows], dtype=np.int64)
    dot = np.einsum("mek,mek->me", g_adj[meas], g_drive[rows[:, 0]])
    jac = dot * (mesh.signed_areas / rho**2)[None, :]
    if return_measurements:
        return jac, MeasurementSet(_readings(mesh, protocol, phi), protocol.name)
    return jac


def write_measurements(meas: MeasurementSet, path) -> None:
    lines = [f"protocol {meas.protocol_id} n {len(meas)}"]
    lines += [f"{v:.17g}" for v in meas.values.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurements(path) -> MeasurementSet:
    lines = Path(path).read_text().split()
    try:
        if lines[0] != "protocol" or lines[2] != "n":
            raise ValueError("bad header")
        name, n = lines[1], int(lines[3])
        values = [float(v) for v in lines[4:]]
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed measurement file ({exc})") from None
    if len(values) != n:
        raise ConfigurationError(f"{path}: header announces {n} values, found {len(values)}")
    return MeasurementSet(np.array(values), name)
