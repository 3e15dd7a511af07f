"""Hidden-Markov fusion of learner responses over item sequences.

Segments of a :class:`SequencePartition` are processed together by padding
them to a common length; padded steps carry unit emissions, which leaves the
scaled recursions and the Viterbi scores unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PROB_FLOOR,
    FusionResult,
    NumericalError,
    ResponseMatrix,
    SequencePartition,
    check_confusions,
    check_prior,
    check_transition,
    normalize_columns,
    response_loglik_matrix,
)
from .iid import ds_m_step, majority_vote, moment_match
from .moments import estimate_lagged_moments
from .optim import MomentFitConfig, fit_transition

log = logging.getLogger(__name__)


@dataclass
class HmmParams:
    transition: np.ndarray
    initial: np.ndarray
    confusions: np.ndarray

    def __post_init__(self):
        self.confusions = check_confusions(self.confusions)
        k = self.confusions.shape[-1]
        self.transition = check_transition(self.transition, k)
        self.initial = check_prior(self.initial, k)

    @property
    def k_classes(self) -> int:
        return self.transition.shape[0]


@dataclass
class SmoothedStats:
    """Posterior marginals of a fitted HMM.

    ``xi[p, k, k2] = P(y_n = k, y_{n+1} = k2 | F)`` for the within-segment
    pair starting at item ``pair_start[p]``.
    """

    q: np.ndarray
    xi: np.ndarray
    pair_start: np.ndarray
    loglik: float


def emission_logprobs(responses: ResponseMatrix, confusions) -> np.ndarray:
    """``log b[n, k] = sum over responders of log Gamma_m(f_m(x_n), k)``."""
    gam = check_confusions(confusions, responses.k_classes)
    return response_loglik_matrix(responses, gam)


def floored_transition(t: np.ndarray) -> np.ndarray:
    return normalize_columns(np.maximum(t, PROB_FLOOR))


def _padded(values: np.ndarray, partition: SequencePartition, fill: float):
    """Arrange per-item rows into an (S, L, ...) array plus validity mask."""
    lengths = partition.lengths
    s, l_max = lengths.size, int(lengths.max())
    valid = np.arange(l_max)[None, :] < lengths[:, None]
    out = np.full((s, l_max) + values.shape[1:], fill, dtype=float)
    out[valid] = values
    return out, valid


def forward_backward(log_b: np.ndarray, params: HmmParams, partition: SequencePartition) -> SmoothedStats:
    log_b = np.asarray(log_b, dtype=float)
    partition.check_items(log_b.shape[0])
    t_mat = floored_transition(params.transition)
    shift = log_b.max(axis=1, keepdims=True)
    lb, valid = _padded(log_b - shift, partition, 0.0)
    b = np.exp(lb)
    s, l_max, k = b.shape

    alpha = np.empty_like(b)
    c = np.ones((s, l_max))
    a = params.initial[None, :] * b[:, 0]
    for t in range(l_max):
        if t > 0:
            a = (alpha[:, t - 1] @ t_mat.T) * b[:, t]
        c_t = a.sum(axis=1)
        if np.any(~(c_t > 0) & valid[:, t]):
            raise NumericalError("forward recursion underflowed to zero probability")
        c_t = np.where(valid[:, t], c_t, 1.0)
        alpha[:, t] = a / c_t[:, None]
        c[:, t] = c_t

    beta = np.ones_like(b)
    for t in range(l_max - 2, -1, -1):
        nxt = (beta[:, t + 1] * b[:, t + 1]) @ t_mat / c[:, t + 1][:, None]
        beta[:, t] = np.where(valid[:, t + 1][:, None], nxt, 1.0)

    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    q = gamma[valid]

    if l_max > 1:
        # xi[s, t, k, k2] ~ alpha_t(k) T(k2, k) b_{t+1}(k2) beta_{t+1}(k2)
        xi = alpha[:, :-1, :, None] * (t_mat.T)[None, None] * (b[:, 1:] * beta[:, 1:])[:, :, None, :]
        xi /= xi.sum(axis=(2, 3), keepdims=True)
        pair_valid = valid[:, 1:]
        xi = xi[pair_valid]
    else:
        xi = np.zeros((0, k, k))
    pair_start, _ = partition.consecutive_pairs()
    loglik = float(np.log(c[valid]).sum() + shift.sum())
    return SmoothedStats(q=q, xi=xi, pair_start=pair_start, loglik=loglik)


def viterbi(log_b: np.ndarray, params: HmmParams, partition: SequencePartition) -> np.ndarray:
    """Most probable label path per segment (1-based labels)."""
    log_b = np.asarray(log_b, dtype=float)
    partition.check_items(log_b.shape[0])
    log_t = np.log(floored_transition(params.transition))
    log_init = np.log(np.maximum(params.initial, PROB_FLOOR))
    lb, valid = _padded(log_b, partition, 0.0)
    s, l_max, k = lb.shape
    back = np.empty((s, l_max, k), dtype=np.int64)
    back[:, 0] = np.arange(k)
    delta = log_init[None, :] + lb[:, 0]
    for t in range(1, l_max):
        scores = delta[:, None, :] + log_t[None, :, :]
        best = np.argmax(scores, axis=2)
        new = np.take_along_axis(scores, best[:, :, None], axis=2)[:, :, 0] + lb[:, t]
        live = valid[:, t]
        delta = np.where(live[:, None], new, delta)
        back[:, t] = np.where(live[:, None], best, np.arange(k)[None, :])
    path = np.empty((s, l_max), dtype=np.int64)
    path[:, -1] = np.argmax(delta, axis=1)
    for t in range(l_max - 1, 0, -1):
        path[:, t - 1] = back[np.arange(s), t, path[:, t]]
    return path[valid] + 1


def path_log_joint(labels, log_b: np.ndarray, params: HmmParams, partition: SequencePartition) -> float:
    """Log joint probability of a label path and the responses, summed over segments."""
    y = np.asarray(labels) - 1
    log_t = np.log(floored_transition(params.transition))
    log_init = np.log(np.maximum(params.initial, PROB_FLOOR))
    total = float(log_b[np.arange(y.size), y].sum())
    total += float(log_init[y[partition.starts]].sum())
    prev, nxt = partition.consecutive_pairs()
    total += float(log_t[y[nxt], y[prev]].sum())
    return total


@dataclass
class BaumWelchResult:
    params: HmmParams
    stats: SmoothedStats
    loglik_trace: list
    iterations: int
    warnings: list = field(default_factory=list)


def _m_step(responses, partition, stats):
    k = responses.k_classes
    warnings = []
    counts = stats.xi.sum(axis=0)  # counts[k_prev, k_next]
    from_mass = counts.sum(axis=1)
    trans = np.empty((k, k))
    for kp in range(k):
        if from_mass[kp] > 0:
            trans[:, kp] = counts[kp] / from_mass[kp]
        else:
            trans[:, kp] = 1.0 / k
            warnings.append(f"no expected transitions out of class {kp + 1}; uniform column used")
    trans = normalize_columns(trans)
    gam, _ = ds_m_step(responses, stats.q)
    initial = stats.q[partition.starts].mean(axis=0)
    initial = initial / initial.sum()
    return HmmParams(trans, initial, gam), warnings


def baum_welch(
    responses: ResponseMatrix,
    partition: SequencePartition,
    init: HmmParams,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> BaumWelchResult:
    """EM for the ensemble HMM; all segments share one parameter set."""
    partition.check_items(responses.n_items)
    params = init
    stats = forward_backward(emission_logprobs(responses, params.confusions), params, partition)
    trace = [stats.loglik]
    warnings: list[str] = []
    it = 0
    for it in range(1, max_iters + 1):
        params, w = _m_step(responses, partition, stats)
        for msg in w:
            if msg not in warnings:
                warnings.append(msg)
        stats = forward_backward(emission_logprobs(responses, params.confusions), params, partition)
        trace.append(stats.loglik)
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    return BaumWelchResult(params=params, stats=stats, loglik_trace=trace, iterations=it, warnings=warnings)


def transition_counts(labels, partition: SequencePartition, k: int) -> np.ndarray:
    """Column-stochastic transition estimate from hard labels (uniform fallback)."""
    y = np.asarray(labels) - 1
    prev, nxt = partition.consecutive_pairs()
    counts = np.zeros((k, k))
    np.add.at(counts, (y[nxt], y[prev]), 1.0)
    return normalize_columns(counts)


def mm_hmm_params(responses, partition, config: MomentFitConfig | None = None):
    """Moment-based HMM parameters: confusions/prior from pooled moments, then T."""
    fit = moment_match(responses, config)
    lagged = estimate_lagged_moments(responses, partition)
    tfit = fit_transition(lagged, fit.confusions)
    params = HmmParams(tfit.transition, fit.prior, fit.confusions)
    return params, fit, tfit


def mv_hmm_params(responses, partition):
    mv = majority_vote(responses)
    trans = transition_counts(mv.labels, partition, responses.k_classes)
    return HmmParams(trans, mv.prior, mv.confusions)


def fuse_sequential(
    responses: ResponseMatrix,
    partition: SequencePartition,
    init: str = "mm",
    refine: str = "em",
    config: MomentFitConfig | None = None,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> FusionResult:
    """Moment (or MV) initialization, Viterbi decoding, optional Baum-Welch.

    Labels are the Viterbi path; ``posteriors`` are smoothed marginals under
    the final parameters, so a label can differ from its row argmax.
    """
    partition.check_items(responses.n_items)
    warnings: list[str] = []
    diag = {"mode": "seq", "init": init, "refine": refine, "label_rule": "viterbi"}
    if init == "mm":
        params, fit, tfit = mm_hmm_params(responses, partition, config)
        warnings += fit.warnings + tfit.warnings
        diag["moment_objective"] = fit.objective
        diag["transition_objective"] = tfit.objective
        diag["stationary_prior"] = tfit.prior.tolist()
    elif init == "mv":
        params = mv_hmm_params(responses, partition)
    else:
        raise ValueError(f"unknown init {init!r}")
    trace: list[float] = []
    iterations = 0
    if refine == "em":
        bw = baum_welch(responses, partition, params, max_iters=max_iters, tol=tol)
        params, stats = bw.params, bw.stats
        trace, iterations = bw.loglik_trace, bw.iterations
        warnings += bw.warnings
        diag["initial_distribution"] = "re-estimated from segment-initial posteriors"
    elif refine == "none":
        stats = forward_backward(emission_logprobs(responses, params.confusions), params, partition)
        trace = [stats.loglik]
    else:
        raise ValueError(f"unknown refine {refine!r}")
    log_b = emission_logprobs(responses, params.confusions)
    labels = viterbi(log_b, params, partition)
    return FusionResult(
        labels=labels,
        posteriors=stats.q,
        confusions=params.confusions,
        prior=params.initial,
        transition=params.transition,
        loglik_trace=trace,
        iterations=iterations,
        warnings=warnings,
        diagnostics=diag,
    )
