"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage 2, contract 3, resource/learner 4.
"""


class MmwError(Exception):
    """Base class for all package errors."""


class UsageError(MmwError, ValueError):
    """Bad arguments: dimension mismatch, out-of-range parameters, bad files."""


class ContractViolation(MmwError, ValueError):
    """An input broke a documented type invariant or operation precondition."""


class NumericFailure(MmwError, RuntimeError):
    """A numerical kernel (eigensolver) did not converge."""


class ResourceError(MmwError, RuntimeError):
    """A budget was exhausted (copies of a state, attempts, simulator size)."""


class LearnerFailure(MmwError, RuntimeError):
    """The state learner hit its round cap without a consistent hypothesis."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
