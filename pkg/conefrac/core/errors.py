"""Error hierarchy for conefrac."""

from typing import Any, Dict, Optional


class ConeFracError(Exception):
    """Base exception for conefrac."""

    def __init__(
        self,
        message: str,
        code: str = "INTERNAL_ERROR",
        exit_code: int = 1,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.code = code
        self.exit_code = exit_code
        self.details = details or {}


class ConfigurationError(ConeFracError):
    """Run configuration is missing or invalid."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "CONFIG_ERROR", 2, details)


class MeshFormatError(ConeFracError):
    """Mesh file does not parse."""

    def __init__(self, message: str, line: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, "MESH_FORMAT_ERROR", 2, details)
        self.line = line


class InvertedElementError(ConeFracError):
    """A bulk element has non-positive Jacobian."""

    def __init__(self, element: Optional[int], details: Optional[Dict[str, Any]] = None):
        label = "unknown" if element is None else str(element)
        super().__init__(f"element {label} is inverted", "INVERTED_ELEMENT", 1, details)
        self.element = element


class DegenerateInterfaceError(ConeFracError):
    """Interface mid-surface tangent collapsed in the current configuration."""

    def __init__(self, interface: int, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"interface {interface} is degenerate", "DEGENERATE_INTERFACE", 1, details)
        self.interface = interface


class UnknownNodeSetError(ConeFracError):
    """A boundary or contact block names a node set the mesh lacks."""

    def __init__(self, name: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"unknown node set '{name}'", "UNKNOWN_NODESET", 2, details)
        self.name = name


class ContactPairError(ConeFracError):
    """Contact pair does not join two opposing surfaces."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "CONTACT_PAIR_ERROR", 2, details)


class InfeasiblePointError(ConeFracError):
    """A point lies outside the cone an operation requires it to be inside."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "INFEASIBLE_POINT", 1, details)


class NotPositiveDefiniteError(ConeFracError):
    """Cholesky factorization failed where a matrix must be SPD."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "NOT_POSITIVE_DEFINITE", 1, details)


class BracketError(ConeFracError):
    """Univariate search could not bracket a minimizer."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "BRACKET_ERROR", 1, details)


class TrustRegionError(ConeFracError):
    """Trust-region minimization failed to converge."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "TRUST_REGION_ERROR", 1, details)


class PhaseOneError(ConeFracError):
    """Phase I could not produce a feasible starting point."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "PHASE_ONE_ERROR", 1, details)


class StepFailure(ConeFracError):
    """A time step aborted; details carry the diagnostic snapshot."""

    def __init__(self, message: str, step: int, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "STEP_FAILURE", 1, details)
        self.step = step


def error_to_dict(error: ConeFracError) -> Dict[str, Any]:
    """Convert a ConeFracError to a dictionary for reporting."""
    return {
        "error": {
            "code": error.code,
            "message": error.message,
            "details": error.details,
        }
    }


def handle_error(error: Exception) -> Dict[str, Any]:
    """Handle and format any exception."""
    if isinstance(error, ConeFracError):
        return error_to_dict(error)

    return {
        "error": {
            "code": "INTERNAL_ERROR",
            "message": "An unexpected error occurred",
            "details": {"original_error": str(error)},
        }
    }
