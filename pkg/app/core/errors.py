from typing import Any, Dict, Optional


class WishartError(Exception):
    """Base error; carries a machine-parseable code and the CLI exit code."""

    code = "internal"
    exit_code = 1

    def __init__(self, detail: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(detail)
        self.detail = detail
        self.diagnostics = diagnostics or {}

    def one_line(self) -> str:
        return f"error code={self.code} exit={self.exit_code}: {self.detail}"


class UsageError(WishartError):
    code = "usage"
    exit_code = 2


class ModelError(WishartError):
    """Invalid spectrum, antenna counts or SNR parameters."""

    code = "invalid-model"
    exit_code = 3


class NumericalError(WishartError):
    code = "numerical-failure"
    exit_code = 4


class ConvergenceError(NumericalError):
    code = "no-convergence"

    def __init__(self, detail: str, partial: Any = None, terms_used: int = 0,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(detail, diagnostics)
        self.partial = partial
        self.terms_used = terms_used


class SingularPointError(NumericalError):
    code = "singular-point"


class DomainError(NumericalError):
    code = "domain"


class IntegrationError(NumericalError):
    code = "integration"

    def __init__(self, detail: str, trajectory: Any = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(detail, diagnostics)
        self.trajectory = trajectory


class HandoffError(NumericalError):
    code = "gauge-handoff"


class AssemblyError(NumericalError):
    code = "assembly"

    def __init__(self, detail: str, entry: Optional[tuple] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(detail, diagnostics)
        self.entry = entry


class MismatchError(NumericalError):
    """Analytic value and Monte-Carlo estimate disagree beyond three standard deviations."""

    code = "mc-mismatch"
