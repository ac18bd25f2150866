"""echo4d: semi-automated 4D left-ventricle segmentation for temporal 3D
echocardiography, built on diffeomorphic slice-to-slice registration."""

from .errors import (
    CompositionDegeneracyError,
    RegistrationDegeneracyError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "ValidationError",
    "RegistrationDegeneracyError",
    "CompositionDegeneracyError",
    "__version__",
]
