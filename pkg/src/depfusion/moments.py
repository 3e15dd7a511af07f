"""Empirical moments of one-hot learner responses.

Every statistic is normalized by its own co-response count, so items where one
of the involved learners is silent simply drop out of that statistic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import DegenerateInputError, ResponseMatrix, SequencePartition

# Triple tensors are only formed among this many most active learners by default.
DEFAULT_MAX_TRIPLE_LEARNERS = 25


@dataclass(frozen=True, eq=False)
class MomentSet:
    """First, second and third order response statistics.

    ``pair_index[p] = (m, m2)`` with ``m < m2`` and ``pairs[p]`` the K x K
    average of ``e_{f_m} e_{f_m2}^T``; triples are analogous with K x K x K
    tensors. Pairs/triples without co-responses are omitted and listed in
    ``omitted_pairs`` / ``omitted_triples``.
    """

    k_classes: int
    means: np.ndarray
    mean_counts: np.ndarray
    pair_index: np.ndarray
    pairs: np.ndarray
    pair_counts: np.ndarray
    triple_index: np.ndarray
    triples: np.ndarray
    triple_counts: np.ndarray
    omitted_pairs: list = field(default_factory=list)
    omitted_triples: int = 0
    triple_learners: np.ndarray | None = None

    @property
    def m_learners(self) -> int:
        return self.means.shape[0]

    def pair(self, m: int, m2: int) -> np.ndarray:
        """S_{m,m2} for any ordering of the two learners (0-based)."""
        a, b = (m, m2) if m < m2 else (m2, m)
        hit = np.flatnonzero((self.pair_index[:, 0] == a) & (self.pair_index[:, 1] == b))
        if hit.size == 0:
            raise KeyError((m, m2))
        s = self.pairs[hit[0]]
        return s if m < m2 else s.T

    def triple(self, m: int, m2: int, m3: int) -> np.ndarray:
        key = (m, m2, m3)
        order = np.argsort(key)
        srt = tuple(int(key[i]) for i in order)
        hit = np.flatnonzero(np.all(self.triple_index == np.array(srt), axis=1))
        if hit.size == 0:
            raise KeyError(key)
        # axis i of the stored tensor belongs to learner srt[i]
        return np.transpose(self.triples[hit[0]], np.argsort(order))


@dataclass(frozen=True, eq=False)
class LaggedMomentSet:
    """Averages of ``e_{f_m(x_n)} e_{f_m2(x_{n-1})}^T`` over consecutive items.

    ``lag[m, m2]`` is the K x K matrix for the ordered pair (m, m2) and
    ``counts[m, m2]`` the number of consecutive pairs it averages; matrices
    with zero count are all-zero and must be skipped by consumers.
    """

    lag: np.ndarray
    counts: np.ndarray

    @property
    def m_learners(self) -> int:
        return self.lag.shape[0]

    def usable(self, include_same: bool = False) -> np.ndarray:
        ok = self.counts > 0
        if not include_same:
            ok &= ~np.eye(self.m_learners, dtype=bool)
        return ok


def _pairwise_sums(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """(M, N, K) x (M, N, K) -> (M, M, K, K) sums over items via one matmul."""
    m, n, k = left.shape
    a = left.transpose(0, 2, 1).reshape(m * k, n)
    b = right.transpose(1, 0, 2).reshape(n, m * k)
    return (a @ b).reshape(m, k, m, k).transpose(0, 2, 1, 3)


def estimate_moments(responses: ResponseMatrix, max_triple_learners: int | None = DEFAULT_MAX_TRIPLE_LEARNERS) -> MomentSet:
    e = np.asarray(responses.one_hot, dtype=float)
    mask = responses.mask.astype(float)
    m_count, n, k = e.shape

    mean_counts = mask.sum(axis=1)
    means = e.sum(axis=1) / mean_counts[:, None]

    sums = _pairwise_sums(e, e)
    counts = mask @ mask.T
    pair_index, pairs, pair_counts, omitted = [], [], [], []
    for a, b in combinations(range(m_count), 2):
        if counts[a, b] > 0:
            pair_index.append((a, b))
            pairs.append(sums[a, b] / counts[a, b])
            pair_counts.append(counts[a, b])
        else:
            omitted.append((a, b))

    if max_triple_learners is not None and m_count > max_triple_learners:
        chosen = np.sort(np.argsort(-mean_counts, kind="stable")[:max_triple_learners])
    else:
        chosen = np.arange(m_count)
    triple_index, triples, triple_counts = [], [], []
    omitted_triples = 0
    for j, (b, c) in enumerate(combinations(chosen.tolist(), 2)):
        lows = chosen[chosen < b]
        if lows.size == 0:
            continue
        z = (e[b][:, :, None] * e[c][:, None, :]).reshape(n, k * k)
        zc = mask[b] * mask[c]
        tens = np.einsum("ank,nj->akj", e[lows], z).reshape(lows.size, k, k, k)
        cnt = mask[lows] @ zc
        for i, a in enumerate(lows.tolist()):
            if cnt[i] > 0:
                triple_index.append((a, b, c))
                triples.append(tens[i] / cnt[i])
                triple_counts.append(cnt[i])
            else:
                omitted_triples += 1
    if triple_index:
        order = np.lexsort(np.array(triple_index).T[::-1])
        triple_index = [triple_index[i] for i in order]
        triples = [triples[i] for i in order]
        triple_counts = [triple_counts[i] for i in order]

    return MomentSet(
        k_classes=k,
        means=means,
        mean_counts=mean_counts,
        pair_index=np.array(pair_index, dtype=np.int64).reshape(-1, 2),
        pairs=np.array(pairs, dtype=float).reshape(-1, k, k),
        pair_counts=np.array(pair_counts, dtype=float),
        triple_index=np.array(triple_index, dtype=np.int64).reshape(-1, 3),
        triples=np.array(triples, dtype=float).reshape(-1, k, k, k),
        triple_counts=np.array(triple_counts, dtype=float),
        omitted_pairs=omitted,
        omitted_triples=omitted_triples,
        triple_learners=chosen,
    )


def estimate_lagged_moments(responses: ResponseMatrix, partition: SequencePartition) -> LaggedMomentSet:
    partition.check_items(responses.n_items)
    prev, nxt = partition.consecutive_pairs()
    if prev.size == 0:
        raise DegenerateInputError("zero usable consecutive pairs: every segment has length 1")
    e = np.asarray(responses.one_hot, dtype=float)
    mask = responses.mask.astype(float)
    sums = _pairwise_sums(e[:, nxt], e[:, prev])
    counts = mask[:, nxt] @ mask[:, prev].T
    if not np.any(counts > 0):
        raise DegenerateInputError("zero usable consecutive pairs with co-observed responses")
    safe = np.where(counts > 0, counts, 1.0)
    lag = sums / safe[:, :, None, None]
    return LaggedMomentSet(lag=lag, counts=counts)
