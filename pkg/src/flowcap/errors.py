"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage-type problems exit 2,
violated mathematical preconditions exit 3, numerical failures exit 4.
"""


class FlowcapError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ContractViolation(FlowcapError, ValueError):
    """Malformed input: wrong shape, out-of-range parameter, bad schema."""

    exit_code = 2


class UnsupportedOperation(FlowcapError, NotImplementedError):
    exit_code = 2


class WrongFamilyError(ContractViolation):
    """A routine received a flow or distribution of the wrong family."""


class HypothesisViolation(FlowcapError):
    """A mathematical precondition of a construction does not hold."""

    exit_code = 3


class InvertibilityError(HypothesisViolation):
    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class SingularMatrixError(HypothesisViolation):
    pass


class DomainError(HypothesisViolation):
    """A function was evaluated outside the set where it is positive/defined."""


class NumericError(FlowcapError):
    exit_code = 4


class NonSmoothPointError(NumericError):
    """Gradient requested at a kink, seam or activation hyperplane."""


class NumericInversionError(NumericError):
    pass


class CapacityError(NumericError):
    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class CoverageError(NumericError):
    def __init__(self, message, tail_mass=None):
        super().__init__(message)
        self.tail_mass = tail_mass


class ProposalCoverageError(CoverageError):
    pass


class NumericRangeError(NumericError):
    pass


class UnboundedDepthError(NumericError):
    """Depth bound requested with a non-positive per-layer progress bound."""
