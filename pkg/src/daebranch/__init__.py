"""Degree, reduction and periodic-branch tools for semi-explicit delay DAEs."""
from .config import load_config, problem_from_config
from .continuation import (Branch, ContinuationConfig, continue_branch, find_periodic,
                           scan_trivial_origins)
from .degree import Box, DegreeResult, degree_on_manifold, degree_sign_sum, find_zeros, winding_number_2d
from .errors import (ConfigError, ConvergenceError, DaeBranchError, DegreeError, EvalDomainError,
                     IndexAssumptionError, ManifoldDriftError, ParseError, PreconditionError)
from .model import HistorySegment, ImplicitRFDAE, PeriodicPair, ProblemDims, SemiExplicitRFDAE
from .problems import BUILTIN_NAMES, builtin
from .solver import SolverConfig, Trajectory, convergence_order, integrate
from .transform import (block_decompose, build_JE, kernel_equal, semi_explicit_from_implicit, svd_align,
                        verify_alignment)

__version__ = "0.1.0"
