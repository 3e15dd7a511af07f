"""Shared data model and log-domain helpers.

Conventions used throughout the package:

* class labels are 1-based at every public interface, ``0`` means "no response";
* confusion matrices are column-stochastic, ``gamma[k_answer, k_true]``;
* transition matrices are column-stochastic, ``T[k_next, k_prev]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

PROB_FLOOR = 1e-12
STOCHASTIC_TOL = 1e-9


class FusionError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FusionError, ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DegenerateInputError(FusionError, ValueError):
    pass


class NumericalError(FusionError, ArithmeticError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Response matrix
# ---------------------------------------------------------------------------

def validate(entries, k_classes: int) -> list[str]:
    """Return the list of violated response-matrix invariants (empty if valid).

    ``entries`` is an M x N integer grid with values in ``{0, ..., K}``.
    """
    problems: list[str] = []
    arr = np.asarray(entries)
    if k_classes < 2:
        problems.append(f"k_classes must be >= 2, got {k_classes}")
    if arr.ndim != 2:
        problems.append(f"response matrix must be 2-D, got {arr.ndim}-D")
        return problems
    m, n = arr.shape
    if m < 1:
        problems.append("no learners (M = 0)")
    if n < 1:
        problems.append("no items (N = 0)")
    if m < 1 or n < 1:
        return problems
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
            problems.append("entries must be integers")
            return problems
        arr = arr.astype(np.int64)
    bad = (arr < 0) | (arr > k_classes)
    if bad.any():
        mm, nn = np.argwhere(bad)[0]
        problems.append(
            f"entry out of range: {int(bad.sum())} entries outside 0..{k_classes} "
            f"(first at learner {mm + 1}, item {nn + 1}, value {arr[mm, nn]})"
        )
    answered = arr != 0
    empty_items = np.flatnonzero(~answered.any(axis=0))
    if empty_items.size:
        problems.append(
            f"item with no responses: {empty_items.size} items "
            f"(first is item {empty_items[0] + 1})"
        )
    empty_learners = np.flatnonzero(~answered.any(axis=1))
    if empty_learners.size:
        problems.append(
            f"learner with no responses: {empty_learners.size} learners "
            f"(first is learner {empty_learners[0] + 1})"
        )
    return problems


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Learner answers, one row per learner and one column per item."""

    entries: np.ndarray
    k_classes: int

    def __post_init__(self):
        problems = validate(self.entries, self.k_classes)
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "entries", _frozen(np.asarray(self.entries, dtype=np.int64)))

    @property
    def m_learners(self) -> int:
        return self.entries.shape[0]

    @property
    def n_items(self) -> int:
        return self.entries.shape[1]

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean M x N array, True where the learner responded."""
        return _frozen(self.entries != 0)

    @cached_property
    def one_hot(self) -> np.ndarray:
        """M x N x K float array; all-zero rows for missing responses."""
        eye = np.vstack([np.zeros(self.k_classes), np.eye(self.k_classes)])
        return _frozen(eye[self.entries])

    def responders_per_item(self) -> np.ndarray:
        return self.mask.sum(axis=0)

    def subset_items(self, idx) -> "ResponseMatrix":
        return ResponseMatrix(self.entries[:, idx], self.k_classes)


# ---------------------------------------------------------------------------
# Stochastic matrices and vectors
# ---------------------------------------------------------------------------

def is_column_stochastic(a, tol: float = STOCHASTIC_TOL) -> bool:
    a = np.asarray(a, dtype=float)
    return bool(
        np.all(np.isfinite(a))
        and np.all(a >= -tol)
        and np.allclose(a.sum(axis=-2), 1.0, rtol=0, atol=tol)
    )


def is_simplex_vector(v, tol: float = STOCHASTIC_TOL) -> bool:
    v = np.asarray(v, dtype=float)
    return bool(np.all(np.isfinite(v)) and np.all(v >= -tol) and abs(v.sum() - 1.0) <= tol)


def check_confusions(confusions, k_classes: Optional[int] = None) -> np.ndarray:
    """Coerce to an (M, K, K) float array and check every column is a distribution."""
    arr = np.asarray(confusions, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValidationError([f"confusions must have shape (M, K, K), got {arr.shape}"])
    if k_classes is not None and arr.shape[1] != k_classes:
        raise ValidationError([f"confusions are {arr.shape[1]}x{arr.shape[1]}, expected K={k_classes}"])
    if not is_column_stochastic(arr):
        raise ValidationError(["confusion matrix columns must be nonnegative and sum to 1"])
    return arr


def check_transition(t, k_classes: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError([f"transition matrix must be square, got {arr.shape}"])
    if k_classes is not None and arr.shape[0] != k_classes:
        raise ValidationError([f"transition matrix is {arr.shape[0]}x{arr.shape[0]}, expected K={k_classes}"])
    if not is_column_stochastic(arr):
        raise ValidationError(["transition matrix columns must be nonnegative and sum to 1"])
    return arr


def check_prior(p, k_classes: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or (k_classes is not None and arr.size != k_classes):
        raise ValidationError([f"prior must be a vector of length {k_classes}, got shape {arr.shape}"])
    if not is_simplex_vector(arr):
        raise ValidationError(["prior must be nonnegative and sum to 1"])
    return arr


def normalize_columns(a: np.ndarray) -> np.ndarray:
    """Rescale columns to sum to one; all-zero columns become uniform."""
    a = np.clip(np.asarray(a, dtype=float), 0.0, None)
    sums = a.sum(axis=-2, keepdims=True)
    k = a.shape[-2]
    out = np.where(sums > 0, a / np.where(sums > 0, sums, 1.0), 1.0 / k)
    return out


# ---------------------------------------------------------------------------
# Sequence partition and data graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SequencePartition:
    """Contiguous segments tiling items ``0..N-1`` in order."""

    lengths: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.int64).ravel()
        if lengths.size == 0:
            raise ValidationError(["partition has no segments"])
        if np.any(lengths < 1):
            raise ValidationError(["every segment length must be >= 1"])
        object.__setattr__(self, "lengths", _frozen(lengths))

    @classmethod
    def single(cls, n_items: int) -> "SequencePartition":
        return cls(np.array([n_items]))

    @classmethod
    def uniform(cls, n_items: int, segment_length: int) -> "SequencePartition":
        full, rest = divmod(n_items, segment_length)
        lengths = [segment_length] * full + ([rest] if rest else [])
        return cls(np.array(lengths))

    @property
    def n_items(self) -> int:
        return int(self.lengths.sum())

    @property
    def n_segments(self) -> int:
        return int(self.lengths.size)

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lengths)[:-1]])

    def slices(self) -> list[slice]:
        return [slice(int(s), int(s + l)) for s, l in zip(self.starts, self.lengths)]

    def consecutive_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices ``(prev, next)`` of every within-segment consecutive pair."""
        nxt = np.arange(1, self.n_items)
        boundary = np.zeros(self.n_items, dtype=bool)
        boundary[self.starts] = True
        nxt = nxt[~boundary[1:]]
        return nxt - 1, nxt

    def check_items(self, n_items: int) -> None:
        if self.n_items != n_items:
            raise ValidationError(
                [f"partition covers {self.n_items} items but the response matrix has {n_items}"]
            )


@dataclass(frozen=True, eq=False)
class DataGraph:
    """Undirected graph over items with a positive trust weight per edge.

    ``edges`` holds 0-based node pairs with ``u < v``.
    """

    n_nodes: int
    edges: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        delta = np.broadcast_to(np.asarray(self.delta, dtype=float), (edges.shape[0],)).copy()
        problems = []
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                problems.append(f"edge endpoint outside 1..{self.n_nodes}")
            if np.any(edges[:, 0] == edges[:, 1]):
                problems.append("self-loop")
        edges = np.sort(edges, axis=1)
        if edges.size and np.unique(edges, axis=0).shape[0] != edges.shape[0]:
            problems.append("duplicate edge")
        if np.any(~(delta > 0)):
            problems.append("edge weights (delta) must be > 0")
        if problems:
            raise ValidationError(problems)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        object.__setattr__(self, "edges", _frozen(edges[order]))
        object.__setattr__(self, "delta", _frozen(delta[order]))

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def mean_degree(self) -> float:
        return 2.0 * self.n_edges / self.n_nodes if self.n_nodes else 0.0

    def with_delta(self, delta) -> "DataGraph":
        return DataGraph(self.n_nodes, self.edges, delta)

    def adjacency(self, node_delta: Optional[np.ndarray] = None):
        """Sparse N x N matrix of trust weights.

        With ``node_delta`` every edge seen from node ``n`` carries ``node_delta[n]``
        instead of the per-edge weight (row scaling, generally asymmetric).
        """
        from scipy import sparse

        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        if node_delta is None:
            vals = np.concatenate([self.delta, self.delta])
        else:
            vals = np.asarray(node_delta, dtype=float)[rows]
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))


# ---------------------------------------------------------------------------
# Result container
# ---------------------------------------------------------------------------

@dataclass
class FusionResult:
    labels: np.ndarray
    posteriors: np.ndarray
    confusions: np.ndarray
    prior: np.ndarray
    transition: Optional[np.ndarray] = None
    loglik_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_posteriors(cls, q: np.ndarray, **kw) -> "FusionResult":
        return cls(labels=argmax_labels(q), posteriors=q, **kw)


def argmax_labels(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax as 1-based labels; ties go to the lowest class."""
    return np.argmax(scores, axis=1).astype(np.int64) + 1


# ---------------------------------------------------------------------------
# Log-domain helpers
# ---------------------------------------------------------------------------

def safe_log(p, floor: float = PROB_FLOOR):
    """``log(max(p, floor))`` for probabilities ``p`` in [0, 1]."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr >= 0) & (arr <= 1))):
        raise ValueError("safe_log expects probabilities in [0, 1]")
    out = np.log(np.maximum(arr, floor))
    return float(out) if out.ndim == 0 else out


def log_normalize(v, axis: int = -1) -> np.ndarray:
    """Normalize log-weights into probabilities with a max shift."""
    v = np.asarray(v, dtype=float)
    vmax = np.max(v, axis=axis, keepdims=True)
    if np.any(~np.isfinite(vmax)):
        raise DegenerateInputError("log_normalize needs at least one finite log-weight per row")
    w = np.exp(v - vmax)
    return w / w.sum(axis=axis, keepdims=True)


def logsumexp(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    vmax = np.max(v, axis=axis, keepdims=True)
    return (vmax + np.log(np.exp(v - vmax).sum(axis=axis, keepdims=True))).squeeze(axis)


def response_loglik_matrix(responses: ResponseMatrix, confusions: np.ndarray) -> np.ndarray:
    """N x K matrix of ``sum_m log Gamma_m(f_m(x_n), k)`` over responders."""
    log_g = safe_log(np.clip(confusions, 0.0, 1.0))
    out = np.zeros((responses.n_items, responses.k_classes))
    for m in range(responses.m_learners):
        answered = responses.mask[m]
        out[answered] += log_g[m, responses.entries[m, answered] - 1, :]
    return out
