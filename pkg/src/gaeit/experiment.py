"""
Phantoms, measurement noise and image-quality metrics for simulated runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .forward import MeasurementSet
from .mesh import Mesh

__all__ = [
    "Anomaly",
    "Phantom",
    "NoiseSpec",
    "ImageMetrics",
    "REFERENCE_ANOMALIES",
    "TWO_ANOMALIES",
    "make_phantom",
    "reference_phantom",
    "add_noise",
    "image_metrics",
    "write_phantom_spec",
    "read_phantom_spec",
    "write_field",
    "read_field",
]


class Anomaly(NamedTuple):
    cx: float
    cy: float
    radius: float
    value: float


REFERENCE_ANOMALIES = (Anomaly(0.4, 0.0, 0.3, 2.0),)
TWO_ANOMALIES = (Anomaly(0.4, 0.0, 0.3, 2.0), Anomaly(-0.35, -0.2, 0.25, 0.5))


@dataclass(frozen=True)
class Phantom:
    rho_true: np.ndarray
    anomalies: tuple[Anomaly, ...]
    background: float


@dataclass(frozen=True)
class NoiseSpec:
    """``level`` is relative to the RMS of the whole measurement vector."""

    level: float = 0.01
    seed: int = 0
    per_channel: bool = False

    def __post_init__(self):
        if not self.level >= 0:
            raise DomainError(f"noise level must be >= 0, got {self.level}")


def make_phantom(mesh: Mesh, background: float = 1.0, anomalies: Sequence = ()) -> Phantom:
    """Assign each element the value of the last anomaly containing its centroid."""
    if not background > 0:
        raise ConfigurationError(f"background resistivity must be > 0, got {background}")
    anomalies = tuple(Anomaly(*map(float, a)) for a in anomalies)
    rho = np.full(mesh.n_elements, float(background))
    cen = mesh.centroids
    for k, a in enumerate(anomalies):
        if not (a.value > 0 and a.radius > 0):
            raise ConfigurationError(f"anomaly {k} needs positive radius and value, got {a}")
        if math.hypot(a.cx, a.cy) - a.radius >= 1.0:
            raise ConfigurationError(f"anomaly {k} at ({a.cx}, {a.cy}) lies entirely outside the domain")
        inside = (cen[:, 0] - a.cx) ** 2 + (cen[:, 1] - a.cy) ** 2 <= a.radius**2
        rho[inside] = a.value
    rho.setflags(write=False)
    return Phantom(rho, anomalies, float(background))


def reference_phantom(mesh: Mesh, two_anomalies: bool = False) -> Phantom:
    return make_phantom(mesh, 1.0, TWO_ANOMALIES if two_anomalies else REFERENCE_ANOMALIES)


def add_noise(y: MeasurementSet, spec: NoiseSpec) -> MeasurementSet:
    """Additive white Gaussian noise; exact copy when ``level`` is zero."""
    if spec.level == 0:
        return MeasurementSet(y.values.copy(), y.protocol_id)
    g = np.random.default_rng(spec.seed).standard_normal(len(y))
    if spec.per_channel:
        scale = np.abs(y.values)
    else:
        scale = np.sqrt(np.mean(y.values**2))
    return MeasurementSet(y.values + spec.level * scale * g, y.protocol_id)


class ImageMetrics(NamedTuple):
    relative_l2_error: float
    pearson_correlation: Optional[float]
    anomaly_localization_error: Optional[float]

    def as_dict(self) -> dict:
        return self._asdict()


def image_metrics(
    rho_est,
    rho_true,
    mesh: Optional[Mesh] = None,
    anomaly_center: Optional[tuple[float, float]] = None,
) -> ImageMetrics:
    """Relative l2 error, Pearson correlation and anomaly localization error.

    Correlation is ``None`` when either field is constant.  Localization
    (needs ``mesh`` and ``anomaly_center``) is the distance from the true
    center to the area-weighted centroid of the 10% of elements deviating
    most from the estimate's median; ``None`` when not requested or when the
    estimate is constant.
    """
    est = np.asarray(rho_est, dtype=float)
    true = np.asarray(rho_true, dtype=float)
    if est.shape != true.shape:
        raise DomainError(f"field lengths differ: {est.shape} vs {true.shape}")
    rel = float(np.linalg.norm(est - true) / np.linalg.norm(true))

    de, dt = est - est.mean(), true - true.mean()
    denom = float(np.sqrt((de @ de) * (dt @ dt)))
    corr = None if denom == 0.0 else float(np.clip((de @ dt) / denom, -1.0, 1.0))

    loc = None
    if mesh is not None and anomaly_center is not None:
        dev = np.abs(est - np.median(est))
        if np.ptp(est) > 0:
            k = max(1, int(math.ceil(0.1 * len(est))))
            top = np.argsort(-dev, kind="stable")[:k]
            w = mesh.signed_areas[top]
            c = (mesh.centroids[top] * w[:, None]).sum(axis=0) / w.sum()
            loc = float(math.hypot(c[0] - anomaly_center[0], c[1] - anomaly_center[1]))
    return ImageMetrics(rel, corr, loc)


def write_phantom_spec(path, background: float, anomalies: Sequence) -> None:
    lines = [f"background {float(background)!r}"]
    lines += ["anomaly " + " ".join(repr(float(v)) for v in a) for a in anomalies]
    Path(path).write_text("\n".join(lines) + "\n")


def read_phantom_spec(path) -> tuple[float, list[Anomaly]]:
    background = None
    anomalies = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "background" and len(parts) == 2:
                background = float(parts[1])
            elif parts[0] == "anomaly" and len(parts) == 5:
                anomalies.append(Anomaly(*(float(v) for v in parts[1:])))
            else:
                raise ValueError(line)
        except ValueError:
            raise ConfigurationError(f"{path}:{n}: cannot parse {line!r}") from None
    if background is None:
        raise ConfigurationError(f"{path}: missing 'background' line")
    return background, anomalies


def write_field(path, values) -> None:
    values = np.asarray(values, dtype=float)
    lines = [f"field n {len(values)}"] + [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    try:
        if tokens[:2] != ["field", "n"]:
            raise ValueError("bad header")
        n = int(tokens[2])
        values = np.array([float(v) for v in tokens[3:]])
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed field file ({exc})") from None
    if len(values) != n:
        raise ConfigurationError(f"{path}: header announces {n} values, found {len(values)}")
    return values
