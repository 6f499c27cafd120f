"""Continuous-time jump Markov decision processes on finite models.

Simulation under history-dependent policies, exact marginal distributions via
Kolmogorov's forward equation, derivation of the equivalent Markov policy, and
discounted / average cost criteria.
"""

from .errors import CostError, CtjmdpError, GridMismatchError, ModelError, PolicyError, SolverError
from .grid import TimeGrid
from .model import (
    ModelSpec,
    RelaxedAction,
    extend_with_initial_distribution,
    load_model,
    max_exit_rate,
    mixed_exit_rate,
    mixed_rate,
    validate_model,
)
from .policies import (
    FiniteMemoryPolicy,
    GeneralPolicy,
    MarkovPolicyGrid,
    augment,
    decision_at,
    fallback_action,
    load_policy,
    save_policy,
)

__version__ = "0.1.0"
