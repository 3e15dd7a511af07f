"""Label fusion for independent items: majority voting, Dawid-Skene EM, MAP rule."""
from __future__ import annotations

import numpy as np

from .core import (
    FusionResult,
    ResponseMatrix,
    argmax_labels,
    check_confusions,
    check_prior,
    log_normalize,
    logsumexp,
    response_loglik_matrix,
    safe_log,
)
from .moments import estimate_moments
from .optim import MomentFitConfig, fit_moment_match


def vote_counts(responses: ResponseMatrix) -> np.ndarray:
    """N x K matrix of how many learners chose each class."""
    return np.asarray(responses.one_hot).sum(axis=0)


def ds_m_step(responses: ResponseMatrix, q: np.ndarray):
    """Closed-form confusion and prior updates from item posteriors ``q``.

    Columns with no posterior mass among a learner's answered items fall back
    to uniform.
    """
    q = np.asarray(q, dtype=float)
    k = responses.k_classes
    e = np.asarray(responses.one_hot)
    # counts[m, k', k] = sum_n q[n, k] * 1[f_m(x_n) = k']
    counts = np.einsum("mnj,nk->mjk", e, q)
    denom = counts.sum(axis=1, keepdims=True)
    gam = np.where(denom > 0, counts / np.where(denom > 0, denom, 1.0), 1.0 / k)
    prior = q.mean(axis=0)
    return gam, prior / prior.sum()


def majority_vote(responses: ResponseMatrix) -> FusionResult:
    votes = vote_counts(responses)
    q = votes / votes.sum(axis=1, keepdims=True)
    labels = argmax_labels(votes)
    hard = np.eye(responses.k_classes)[labels - 1]
    gam, prior = ds_m_step(responses, hard)
    return FusionResult(labels=labels, posteriors=q, confusions=gam, prior=prior)


def _log_joint(responses, confusions, prior):
    return response_loglik_matrix(responses, confusions) + safe_log(np.clip(prior, 0.0, 1.0))[None, :]


def ds_e_step(responses: ResponseMatrix, confusions, prior) -> np.ndarray:
    """Item posteriors ``q[n, k]`` proportional to ``pi_k prod_m Gamma_m(f_m, k)``."""
    gam = check_confusions(confusions, responses.k_classes)
    pi = check_prior(prior, responses.k_classes)
    return log_normalize(_log_joint(responses, gam, pi), axis=1)


def observed_loglik(responses: ResponseMatrix, confusions, prior) -> float:
    return float(logsumexp(_log_joint(responses, confusions, prior), axis=1).sum())


def map_labels(responses: ResponseMatrix, confusions, prior) -> np.ndarray:
    gam = check_confusions(confusions, responses.k_classes)
    pi = check_prior(prior, responses.k_classes)
    return argmax_labels(_log_joint(responses, gam, pi))


def ds_em(
    responses: ResponseMatrix,
    init_confusions,
    init_prior,
    max_iters: int = 100,
    tol: float = 1e-6,
    fix_prior: bool = False,
) -> FusionResult:
    """Dawid-Skene EM from the given starting parameters.

    ``loglik_trace[i]`` is the observed-data log-likelihood of the parameters
    entering iteration ``i``; the final entry belongs to the returned ones.
    """
    k = responses.k_classes
    gam = check_confusions(init_confusions, k).copy()
    pi = np.full(k, 1.0 / k) if fix_prior else check_prior(init_prior, k).copy()
    trace = []
    it = 0
    lj = _log_joint(responses, gam, pi)
    trace.append(float(logsumexp(lj, axis=1).sum()))
    for it in range(1, max_iters + 1):
        q = log_normalize(lj, axis=1)
        gam, new_pi = ds_m_step(responses, q)
        if not fix_prior:
            pi = new_pi
        lj = _log_joint(responses, gam, pi)
        trace.append(float(logsumexp(lj, axis=1).sum()))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    q = log_normalize(lj, axis=1)
    return FusionResult(
        labels=argmax_labels(q),
        posteriors=q,
        confusions=gam,
        prior=pi,
        loglik_trace=trace,
        iterations=it,
    )


def mv_init(responses: ResponseMatrix):
    """Confusions and prior from hard majority-vote labels."""
    mv = majority_vote(responses)
    return mv.confusions, mv.prior


def moment_match(responses: ResponseMatrix, config: MomentFitConfig | None = None):
    """Moment-matching estimates started from majority-vote pseudo-counts."""
    moments = estimate_moments(responses)
    return fit_moment_match(moments, config, init=mv_init(responses))


def fuse_iid(
    responses: ResponseMatrix,
    init: str = "mm",
    refine: str = "em",
    config: MomentFitConfig | None = None,
    max_iters: int = 100,
    tol: float = 1e-6,
    fix_prior: bool = False,
) -> FusionResult:
    """I.i.d. pipeline: moment matching (or MV) then optional Dawid-Skene EM."""
    warnings = []
    if init == "mm":
        fit = moment_match(responses, config)
        gam, pi = fit.confusions, fit.prior
        warnings.extend(fit.warnings)
    elif init == "mv":
        gam, pi = mv_init(responses)
    else:
        raise ValueError(f"unknown init {init!r}")
    if fix_prior:
        pi = np.full(responses.k_classes, 1.0 / responses.k_classes)
    if refine == "em":
        res = ds_em(responses, gam, pi, max_iters=max_iters, tol=tol, fix_prior=fix_prior)
    elif refine == "none":
        q = ds_e_step(responses, gam, pi)
        res = FusionResult(labels=argmax_labels(q), posteriors=q, confusions=gam, prior=pi)
    else:
        raise ValueError(f"unknown refine {refine!r}")
    res.warnings = warnings + res.warnings
    res.diagnostics.update({"mode": "iid", "init": init, "refine": refine, "fix_prior": fix_prior})
    return res
