"""
Regularized misfit ``f = ||y - h(rho)|| + alpha * Psi(rho)``.

The data norm is the plain (unsquared) l2 norm by default, which is the
fitness the genetic algorithm minimizes.  The Gauss-Newton baseline uses the
``l2-squared`` variant.  Regularizers are looked up by name in
:data:`REGULARIZERS` so further penalties can be registered without touching
the evaluation path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DomainError
from .forward import MeasurementSet, Protocol, check_rho, forward_solve
from .mesh import Mesh

__all__ = [
    "ObjectiveSpec",
    "ObjectiveValue",
    "REGULARIZERS",
    "difference_operator",
    "tikhonov",
    "evaluate",
    "Fitness",
]

DATA_NORMS = ("l2", "l2-squared")


@dataclass(frozen=True)
class ObjectiveSpec:
    """What to minimize.

    ``rho_ref`` of ``None`` means the homogeneous field of ones.
    """

    alpha: float = 1e-3
    regularizer: str = "tikhonov-smoothness"
    rho_ref: Optional[np.ndarray] = None
    data_norm: str = "l2"

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise DomainError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.regularizer not in REGULARIZERS:
            raise DomainError(
                f"unknown regularizer {self.regularizer!r}; known: {', '.join(sorted(REGULARIZERS))}"
            )
        if self.data_norm not in DATA_NORMS:
            raise DomainError(f"data_norm must be one of {DATA_NORMS}, got {self.data_norm!r}")
        if self.rho_ref is not None:
            ref = np.array(self.rho_ref, dtype=float)
            ref.setflags(write=False)
            object.__setattr__(self, "rho_ref", ref)

    def reference(self, n: int) -> np.ndarray:
        if self.rho_ref is None:
            return np.ones(n)
        if len(self.rho_ref) != n:
            raise DomainError(f"rho_ref has length {len(self.rho_ref)}, expected {n}")
        return self.rho_ref

    def replace(self, **changes) -> "ObjectiveSpec":
        return replace(self, **changes)


class ObjectiveValue(NamedTuple):
    total: float
    data_term: float
    reg_term: float


def difference_operator(mesh: Mesh) -> sp.csr_matrix:
    """One row per interior edge: +1 and -1 on the two elements sharing it."""
    cached = mesh.__dict__.get("_difference_operator")
    if cached is not None:
        return cached
    pairs = mesh.element_adjacency
    k = len(pairs)
    rows = np.repeat(np.arange(k), 2)
    data = np.tile([1.0, -1.0], k)
    op = sp.csr_matrix((data, (rows, pairs.ravel())), shape=(k, mesh.n_elements))
    mesh.__dict__["_difference_operator"] = op
    return op


def _identity(delta: np.ndarray, mesh: Optional[Mesh]) -> float:
    return float(delta @ delta)


def _smoothness(delta: np.ndarray, mesh: Optional[Mesh]) -> float:
    if mesh is None:
        raise DomainError("the smoothness regularizer needs the mesh adjacency")
    d = difference_operator(mesh) @ delta
    return float(d @ d)


REGULARIZERS: dict[str, Callable[[np.ndarray, Optional[Mesh]], float]] = {
    "tikhonov-identity": _identity,
    "tikhonov-smoothness": _smoothness,
}


def regularizer_matrix(spec: ObjectiveSpec, mesh: Mesh) -> sp.csr_matrix:
    """Operator ``L`` with ``Psi = ||L (rho - rho_ref)||**2``."""
    if spec.regularizer == "tikhonov-identity":
        return sp.identity(mesh.n_elements, format="csr")
    if spec.regularizer == "tikhonov-smoothness":
        return difference_operator(mesh)
    raise DomainError(f"no quadratic operator for regularizer {spec.regularizer!r}")


def tikhonov(rho, spec: ObjectiveSpec, mesh: Optional[Mesh] = None) -> float:
    """Squared-norm Tikhonov penalty of ``rho - rho_ref``."""
    rho = np.asarray(rho, dtype=float)
    if mesh is not None and len(rho) != mesh.n_elements:
        raise DomainError(f"rho has length {len(rho)}, mesh has {mesh.n_elements} elements")
    return REGULARIZERS[spec.regularizer](rho - spec.reference(len(rho)), mesh)


def evaluate(
    rho,
    y: MeasurementSet,
    spec: ObjectiveSpec,
    mesh: Mesh,
    protocol: Protocol,
    prediction: Optional[MeasurementSet] = None,
) -> ObjectiveValue:
    """Evaluate the objective at ``rho``.

    ``prediction`` may carry an already computed ``h(rho)`` to avoid a
    second forward solve.
    """
    if y.protocol_id != protocol.name or len(y) != protocol.n_measurements:
        raise DomainError(
            f"measurements ({y.protocol_id}, n={len(y)}) were not produced under protocol "
            f"{protocol.name} (n={protocol.n_measurements})"
        )
    rho = check_rho(mesh, rho)
    h = prediction if prediction is not None else forward_solve(mesh, rho, protocol)
    r = y.values - h.values
    misfit = float(np.sqrt(r @ r))
    data = misfit**2 if spec.data_norm == "l2-squared" else misfit
    reg = tikhonov(rho, spec, mesh)
    return ObjectiveValue(data + spec.alpha * reg, data, reg)


class Fitness:
    """Objective bound to a problem instance; callable on a genome."""

    def __init__(self, mesh: Mesh, protocol: Protocol, y: MeasurementSet, spec: ObjectiveSpec):
        self.mesh, self.protocol, self.y, self.spec = mesh, protocol, y, spec

    def __call__(self, rho) -> ObjectiveValue:
        return evaluate(rho, self.y, self.spec, self.mesh, self.protocol)
