"""Stochastic SQP for equality-constrained problems with noisy estimates."""

from .core import (ComplexityBeta, ConstantBeta, DiminishingBeta, IterateRecord, SqpParams,
                   SolverState, StepInterval, alpha_phi, iterate, parse_beta, run)
from .errors import (BatchTooLarge, DegenerateSamples, EmptyRun, InvariantViolated,
                     MalformedLine, NonBinaryLabel, NonConvergent, NonFinite, NotSpd,
                     RankDeficient, SchemaMismatch, SolverError, UnknownProblem)
from .kkt import KktSolution, KktSystem, least_squares_multiplier, min_singular_value, solve_kkt
from .metrics import BestIterate, ErrorPair, best_iterate, error_pair, summarize
from .oracles import ExactOracle, GaussianOracle, MinibatchOracle, NoiseConfig, StochasticEstimate
from .problems import (BUILTIN_NAMES, LogisticProblemConfig, ProblemOracle, build_logistic_problem,
                       builtin_problem, estimate_lipschitz)
from .subgradient import SubgradConfig, run_subgradient

__version__ = "0.1.0"
