"""
Custom exception classes for escapedim.

Every failure the numerical modules can report is a subclass of EscapeDimError,
carrying a message plus a details dictionary with the offending parameters.
"""

from typing import Any


class EscapeDimError(Exception):
    """Base exception class for all escapedim errors."""

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        """
        Initialize the exception.

        Args:
            message: Error message
            details: Optional dictionary with additional error details
        """
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def __str__(self) -> str:
        """Return string representation of the error."""
        if self.details:
            details_str = ", ".join(f"{k}={v}" for k, v in self.details.items())
            return f"{self.message} ({details_str})"
        return self.message


class ConfigurationError(EscapeDimError):
    """Exception raised for invalid run, elliptic or comb configuration."""

    def __init__(
        self,
        message: str,
        parameter: str | None = None,
        value: Any = None,
        validation_errors: list[str] | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        """
        Initialize configuration error.

        Args:
            message: Error message
            parameter: Name of the offending parameter
            value: Offending value
            validation_errors: Messages collected by the validator
            details: Additional error details
        """
        error_details = details or {}
        if parameter:
            error_details["parameter"] = parameter
            error_details["value"] = value
        if validation_errors:
            error_details["validation_errors"] = validation_errors
        super().__init__(message, error_details)


class LatticePointSingularity(EscapeDimError):
    """Raised when the Weierstrass function is evaluated at a lattice point."""

    def __init__(self, z: complex, distance: float) -> None:
        super().__init__(
            "Point lies within the exclusion radius of a lattice point",
            {"z": z, "distance": distance},
        )


class PoleError(EscapeDimError):
    """Base class for evaluations that hit a pole."""

    function_name = "f"

    def __init__(self, z: complex, pole: complex | None = None) -> None:
        details: dict[str, Any] = {"z": z}
        if pole is not None:
            details["pole"] = pole
        super().__init__(f"{self.function_name} has a pole at the requested point", details)


class PoleOfG(PoleError):
    """Pole of G = L(wp^2)."""

    function_name = "G"


class PoleOfH(PoleError):
    """Pole of H = G^M."""

    function_name = "H"


class PoleOfF(PoleError):
    """Pole of F = H o arcsin."""

    function_name = "F"


class PoleOfFunction(PoleError):
    """Pole of a composite construction."""

    function_name = "function"


class RegionTooLarge(EscapeDimError):
    """Raised when a pole enumeration would exceed the configured cap."""

    def __init__(self, estimated: int, cap: int) -> None:
        super().__init__(
            "Pole enumeration exceeds the configured cap",
            {"estimated": estimated, "cap": cap},
        )


class OutOfDomain(EscapeDimError):
    """Raised when the comb map is evaluated outside the lower half-plane."""

    def __init__(self, z: complex) -> None:
        super().__init__("Conformal map requires Im z < 0", {"z": z})


class AccuracyNotMet(EscapeDimError):
    """Raised when a self-test of the comb map exceeds its target."""

    def __init__(
        self,
        message: str,
        achieved: float,
        target: float,
        truncation_N: int | None = None,
    ) -> None:
        details: dict[str, Any] = {"achieved": achieved, "target": target}
        if truncation_N is not None:
            details["truncation_N"] = truncation_N
        super().__init__(message, details)


class InjectivityCheckFailed(EscapeDimError):
    """Raised when the modified exponential fails the derivative half-plane test."""


class HypothesisFailed(EscapeDimError):
    """Raised when the strip-width integrability hypothesis fails numerically."""


class RootPolishFailed(EscapeDimError):
    """Raised when Newton iteration for a pole preimage does not converge."""

    def __init__(self, message: str, failures: int, sample: complex | None = None) -> None:
        details: dict[str, Any] = {"failures": failures}
        if sample is not None:
            details["sample_target"] = sample
        super().__init__(message, details)


class ModulusOnePole(EscapeDimError):
    """Raised when H has a pole too close to the unit circle."""

    def __init__(self, pole: complex, gap: float) -> None:
        super().__init__("H has a pole within the unit-circle margin", {"pole": pole, "gap": gap})


class PoleAtOrigin(EscapeDimError):
    """Raised when the power trick receives an atlas with a pole at 0."""


class InsufficientBlocks(EscapeDimError):
    """Raised when too few dyadic blocks are populated for a decay fit."""

    def __init__(self, nonempty: int, required: int) -> None:
        super().__init__(
            "Not enough nonempty dyadic blocks",
            {"nonempty": nonempty, "required": required},
        )


class NonMonotone(EscapeDimError):
    """Raised when the fitted decay exponent decreases along the t-scan."""

    def __init__(self, t_left: float, t_right: float, drop: float) -> None:
        super().__init__(
            "Fitted decay exponent is not nondecreasing in t",
            {"t_left": t_left, "t_right": t_right, "drop": drop},
        )


class EvaluationRangeExceeded(EscapeDimError):
    """Raised when growth samples leave the certified evaluation range."""

    def __init__(self, r: float, limit: float) -> None:
        super().__init__("Sample radius outside certified range", {"r": r, "limit": limit})


class IncompatibleRanges(EscapeDimError):
    """Raised when growth curves cannot be compared on overlapping samples."""


class HypothesisViolated(EscapeDimError):
    """Raised when the log-power exponent p is too small for the block estimate."""

    def __init__(self, p: float, required: float) -> None:
        super().__init__(
            "Log-power exponent below the required bound",
            {"p": p, "required": required},
        )


class PreconditionRadius(EscapeDimError):
    """Raised when the covering-sum radius precondition fails."""


class CompletenessError(EscapeDimError):
    """Raised when a brute-force search finds a pole absent from an atlas."""

    def __init__(self, missing: int, sample: complex | None = None) -> None:
        details: dict[str, Any] = {"missing": missing}
        if sample is not None:
            details["sample"] = sample
        super().__init__("Atlas is incomplete within its radius", details)


class ArtifactError(EscapeDimError):
    """Raised for missing or malformed artifact files."""

    def __init__(self, message: str, path: str | None = None) -> None:
        super().__init__(message, {"path": path} if path else None)
