"""Exception hierarchy.

Errors fall in three families that the CLI maps to exit codes: input and
precondition problems, numerical-quality failures, and everything else.
"""


class ConjflowError(Exception):
    """Base class for all package errors."""


class PreconditionError(ConjflowError, ValueError):
    """An operation was called outside its documented domain."""


class NonPositiveSystemError(PreconditionError):
    """The B component of a symplectic system is not positive definite."""


class ChartDomainError(PreconditionError):
    """A Lagrangian is not transversal to the chart's companion."""

    def __init__(self, message, singular_value):
        super().__init__(f"{message} (smallest singular value {singular_value:.3e})")
        self.singular_value = singular_value


class AmbiguousSplitError(ConjflowError):
    """Eigenvalues fall between the kernel and gap thresholds."""

    def __init__(self, eigenvalues, kernel_tol, gap_tol):
        ev = ", ".join(f"{x:.3e}" for x in eigenvalues)
        super().__init__(
            f"eigenvalues in dead zone ({kernel_tol:.1e}, {gap_tol:.1e}) by magnitude: [{ev}]"
        )
        self.eigenvalues = list(eigenvalues)


class EigenSolverError(ConjflowError):
    """The symmetric eigensolver did not converge."""


class SearchExhaustedError(ConjflowError):
    """No common transversal was found on the search grid."""


class BudgetError(PreconditionError):
    """A prescription needs more dimensions than the truncation budget."""

    def __init__(self, required, available):
        super().__init__(f"prescription needs dimension {required}, budget is {available}")
        self.required = required
        self.available = available


class QualityError(ConjflowError):
    """A numerical quality metric exceeded its bound."""

    def __init__(self, message, metric=None, value=None):
        super().__init__(message)
        self.metric = metric
        self.value = value


class IntegrationQualityError(QualityError):
    """Symplecticity drift of a fundamental solution is too large."""

    def __init__(self, drift, bound, profile=None):
        super().__init__(
            f"symplectic drift {drift:.3e} exceeds bound {bound:.1e}",
            metric="symplectic_drift",
            value=drift,
        )
        self.profile = profile


class LiftingDriftError(QualityError):
    """A lifted curve no longer spans the target Lagrangian curve."""


class VerificationError(QualityError):
    """A verified postcondition of a construction failed."""


class ScenarioError(ConjflowError):
    """Scenario file violates the schema."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
