"""Fusion over a data graph with a Potts-style label prior.

Labels are refined by iterated conditional modes with synchronous (Jacobi)
sweeps: every node is updated from the previous sweep's neighbour labels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    DataGraph,
    FusionResult,
    ResponseMatrix,
    argmax_labels,
    check_confusions,
    log_normalize,
    response_loglik_matrix,
)
from .iid import ds_m_step, map_labels, majority_vote, moment_match
from .optim import MomentFitConfig


@dataclass
class MrfConfig:
    """``delta``: ``"edge"`` keeps the graph's per-edge weights, ``"auto"``
    uses ``M_n / 2`` for node ``n``, a number sets one global weight."""

    delta: Union[str, float] = "edge"
    t_max: int = 20
    em_max_iters: int = 50
    em_tol: float = 1e-6

    def __post_init__(self):
        if self.t_max < 1 or self.em_max_iters < 1:
            raise ValueError("t_max and em_max_iters must be >= 1")
        if not isinstance(self.delta, str) and not float(self.delta) > 0:
            raise ValueError("delta must be positive")
        if isinstance(self.delta, str) and self.delta not in ("edge", "auto"):
            raise ValueError(f"unknown delta mode {self.delta!r}")


def trust_matrix(graph: DataGraph, responses: Optional[ResponseMatrix] = None, delta="edge"):
    """Sparse matrix ``W[n, n2]`` of the weight node ``n`` puts on neighbour ``n2``."""
    if isinstance(delta, str):
        if delta == "edge":
            return graph.adjacency()
        if delta == "auto":
            if responses is None:
                raise ValueError("delta='auto' needs the responses")
            return graph.adjacency(node_delta=responses.responders_per_item() / 2.0)
        raise ValueError(f"unknown delta mode {delta!r}")
    return graph.with_delta(float(delta)).adjacency()


def energies(labels, w, k: int) -> np.ndarray:
    """N x K local energies ``U_n(k) = 1/2 sum_n2 W[n, n2] 1[k != y_n2]``."""
    y = np.asarray(labels) - 1
    onehot = np.zeros((y.size, k))
    onehot[np.arange(y.size), y] = 1.0
    agree = np.asarray(w @ onehot)
    total = np.asarray(w.sum(axis=1)).reshape(-1, 1)
    return 0.5 * (total - agree)


def local_energy(n: int, k: int, labels, graph: DataGraph) -> float:
    """Local energy of 0-based node ``n`` taking 1-based class ``k``."""
    y = np.asarray(labels)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    total = 0.0
    for other, d in ((v[u == n], graph.delta[u == n]), (u[v == n], graph.delta[v == n])):
        total += float(np.sum(d * (y[other] != k)))
    return 0.5 * total


def icm(
    responses: ResponseMatrix,
    confusions,
    graph: DataGraph,
    init_labels,
    config: Optional[MrfConfig] = None,
    w=None,
    return_sweeps: bool = False,
):
    """Jacobi ICM; returns 1-based labels (and the number of sweeps if asked)."""
    cfg = config or MrfConfig()
    k = responses.k_classes
    gam = check_confusions(confusions, k)
    w = trust_matrix(graph, responses, cfg.delta) if w is None else w
    loglik = response_loglik_matrix(responses, gam)
    y = np.asarray(init_labels, dtype=np.int64).copy()
    sweeps = 0
    for sweeps in range(1, cfg.t_max + 1):
        new = argmax_labels(loglik - energies(y, w, k))
        changed = np.any(new != y)
        y = new
        if not changed:
            break
    return (y, sweeps) if return_sweeps else y


def mrf_posteriors(responses: ResponseMatrix, confusions, graph: DataGraph, labels, w=None, delta="edge") -> np.ndarray:
    k = responses.k_classes
    gam = check_confusions(confusions, k)
    w = trust_matrix(graph, responses, delta) if w is None else w
    return log_normalize(response_loglik_matrix(responses, gam) - energies(labels, w, k), axis=1)


def mrf_em(
    responses: ResponseMatrix,
    graph: DataGraph,
    init_labels,
    init_confusions,
    config: Optional[MrfConfig] = None,
) -> FusionResult:
    """Alternate ICM labelling, MRF posteriors and the confusion M-step.

    Stops once an outer pass leaves the ICM labels unchanged and moves no
    confusion entry by more than ``em_tol``.
    """
    cfg = config or MrfConfig()
    k = responses.k_classes
    w = trust_matrix(graph, responses, cfg.delta)
    gam = check_confusions(init_confusions, k).copy()
    y = np.asarray(init_labels, dtype=np.int64).copy()
    sweeps = []
    changes = []
    q = None
    it = 0
    for it in range(1, cfg.em_max_iters + 1):
        y_new, n_sweeps = icm(responses, gam, graph, y, cfg, w=w, return_sweeps=True)
        sweeps.append(n_sweeps)
        q = mrf_posteriors(responses, gam, graph, y_new, w=w)
        gam_new, _ = ds_m_step(responses, q)
        change = float(np.max(np.abs(gam_new - gam)))
        changes.append(change)
        stable = np.array_equal(y_new, y)
        y, gam = y_new, gam_new
        if stable and change < cfg.em_tol:
            break
    prior = q.mean(axis=0)
    delta_desc = cfg.delta if isinstance(cfg.delta, str) else float(cfg.delta)
    diag = {
        "mode": "net",
        "icm_sweeps": sweeps,
        "param_change": changes,
        "delta": delta_desc,
        "icm_labels": y.tolist(),
    }
    if cfg.delta == "auto":
        diag["node_delta"] = (responses.responders_per_item() / 2.0).tolist()
    return FusionResult(
        labels=argmax_labels(q),
        posteriors=q,
        confusions=gam,
        prior=prior / prior.sum(),
        iterations=it,
        diagnostics=diag,
    )


def fuse_networked(
    responses: ResponseMatrix,
    graph: DataGraph,
    init: str = "mm",
    config: Optional[MrfConfig] = None,
    mm_config: Optional[MomentFitConfig] = None,
) -> FusionResult:
    """Moment-matching (or majority-vote) initialization refined by MRF-EM."""
    if graph.n_nodes != responses.n_items:
        raise ValueError(f"graph has {graph.n_nodes} nodes but there are {responses.n_items} items")
    warnings = []
    if init == "mm":
        fit = moment_match(responses, mm_config)
        warnings += fit.warnings
        gam0 = fit.confusions
        y0 = map_labels(responses, fit.confusions, fit.prior)
    elif init == "mv":
        mv = majority_vote(responses)
        gam0, y0 = mv.confusions, mv.labels
    else:
        raise ValueError(f"unknown init {init!r}")
    res = mrf_em(responses, graph, y0, gam0, config)
    res.warnings = warnings + res.warnings
    res.diagnostics["init"] = init
    return res
