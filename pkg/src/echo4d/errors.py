"""Exception types shared across the package.

Every input-validation failure carries the name of the violated rule so
that callers (CLI, HTTP service, tests) can surface a stable diagnostic
instead of a free-form message.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """An input file or request violated a named validation rule.

    Attributes
    ----------
    rule : str
        Stable identifier of the violated rule, e.g. ``"contour_planarity"``.
    detail : str
        Human-readable description of what failed.
    """

    def __init__(self, rule: str, detail: str):
        self.rule = rule
        self.detail = detail
        super().__init__(f"{rule}: {detail}")


class RegistrationDegeneracyError(RuntimeError):
    """A registration step produced or required a non-invertible mapping."""


class CompositionDegeneracyError(RegistrationDegeneracyError):
    """Composition of two deformation fields lost Jacobian positivity."""
