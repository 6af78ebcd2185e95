"""Exception hierarchy shared across the package."""


class ReluOptError(Exception):
    """Base class for all package errors."""


class ShapeError(ReluOptError, ValueError):
    """Inconsistent dimensions: layer chains, vector lengths, matrix shapes."""


class NonFiniteError(ReluOptError, ValueError):
    """NaN or Inf encountered where finite values are required."""


class SchemaError(ReluOptError, ValueError):
    """Malformed file content: missing fields, wrong types, unknown keys."""


class DomainError(ReluOptError, ValueError):
    """Empty or inconsistent input domain (bounds crossed, total out of range)."""


class DegenerateNetworkError(ReluOptError):
    """No non-degenerate feasible point found; some neuron has zero input and
    zero output on the whole sampled domain.  Such networks are candidates for
    pruning before optimization."""


class RelaxationError(ReluOptError):
    """The index-set relaxation LP failed (infeasible or unbounded)."""


class StationarityError(ReluOptError):
    """The multiplier feasibility system is infeasible at the given primal
    point; the point is not stationary."""


class FineTuneError(ReluOptError):
    """Penalty fine-tuning exhausted its schedule without a complementary
    solution.  Carries the per-candidate log."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


class SizeCapError(ReluOptError, ValueError):
    """Problem exceeds the enumeration size cap."""


class InfeasibleError(ReluOptError):
    """The optimization problem has no feasible point."""


class DataGenerationError(ReluOptError):
    """Dataset generation rejected too many infeasible samples."""


class NumericalError(ReluOptError):
    """A solver backend failed for numerical reasons."""
