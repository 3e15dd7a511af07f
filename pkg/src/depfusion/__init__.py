"""Unsupervised ensemble label fusion with sequential and networked label dependencies."""
from .core import (
    DataGraph,
    DegenerateInputError,
    FusionError,
    FusionResult,
    NumericalError,
    ResponseMatrix,
    SequencePartition,
    ValidationError,
)
from .iid import ds_em, fuse_iid, majority_vote, map_labels, moment_match
from .moments import estimate_lagged_moments, estimate_moments
from .networked import MrfConfig, fuse_networked, icm, mrf_em
from .optim import MomentFitConfig, fit_moment_match, fit_transition, resolve_permutation
from .sequential import HmmParams, baum_welch, forward_backward, fuse_sequential, viterbi

__version__ = "0.1.0"

__all__ = [
    "DataGraph",
    "DegenerateInputError",
    "FusionError",
    "FusionResult",
    "HmmParams",
    "MomentFitConfig",
    "MrfConfig",
    "NumericalError",
    "ResponseMatrix",
    "SequencePartition",
    "ValidationError",
    "baum_welch",
    "ds_em",
    "estimate_lagged_moments",
    "estimate_moments",
    "fit_moment_match",
    "fit_transition",
    "forward_backward",
    "fuse_iid",
    "fuse_networked",
    "fuse_sequential",
    "icm",
    "majority_vote",
    "map_labels",
    "moment_match",
    "mrf_em",
    "resolve_permutation",
    "viterbi",
]
