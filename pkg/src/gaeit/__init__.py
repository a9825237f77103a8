"""Electrical impedance tomography on a 2D disk: FEM forward model,
genetic-algorithm and Gauss-Newton reconstruction."""

__version__ = "0.1.0"

from .baseline import Disturbance, NRConfig, run_hybrid, run_nr
from .errors import ConfigurationError, DomainError, EITError, GeometryError, NumericalError
from .experiment import NoiseSpec, add_noise, image_metrics, make_phantom, reference_phantom
from .forward import MeasurementSet, Protocol, StimulationPattern, adjacent_protocol, forward_solve, jacobian
from .ga import GAConfig, run_ga
from .mesh import Mesh, build_disk_mesh, validate
from .objective import ObjectiveSpec, ObjectiveValue, evaluate
from .results import ReconResult

__all__ = [
    "Disturbance", "NRConfig", "run_hybrid", "run_nr",
    "ConfigurationError", "DomainError", "EITError", "GeometryError", "NumericalError",
    "NoiseSpec", "add_noise", "image_metrics", "make_phantom", "reference_phantom",
    "MeasurementSet", "Protocol", "StimulationPattern", "adjacent_protocol", "forward_solve", "jacobian",
    "GAConfig", "run_ga",
    "Mesh", "build_disk_mesh", "validate",
    "ObjectiveSpec", "ObjectiveValue", "evaluate",
    "ReconResult",
]
