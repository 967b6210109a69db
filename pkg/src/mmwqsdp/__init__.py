"""Classical simulation of matrix-multiplicative-weights SDP solvers.

Modules: ``core`` (Hermitian algebra, Gibbs states, RNG), ``mmw`` (update
rule and feasibility loop), ``oracle`` (violation oracles), ``orsim``
(fast quantum OR test), ``gibbs`` (low-rank Gibbs sampling), ``learn``
(shadow tomography) and ``cli``.
"""

__version__ = "0.1.0"

from .core import DensityMatrix, HermitianMatrix, Rng, gibbs_of, trace_distance  # noqa: E402
from .errors import (  # noqa: E402
    ContractViolation,
    LearnerFailure,
    MmwError,
    NumericFailure,
    ResourceError,
    UsageError,
)
from .mmw import SdpInstance, mw_round, regret_audit, solve_feasibility  # noqa: E402
