"""Seeded generators for synthetic sequential and networked ensembles."""
from __future__ import annotations

import numpy as np

from .core import DataGraph, ResponseMatrix, SequencePartition, ValidationError, check_transition

SBM_RATIO = 9.0


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def is_diagonally_dominant(gamma: np.ndarray) -> bool:
    """True if every diagonal entry is the strict maximum of its column."""
    g = np.asarray(gamma)
    diag = np.diag(g)
    off = g - np.diag(np.full(g.shape[0], np.inf))
    return bool(np.all(diag > off.max(axis=0)))


def gen_confusions(m: int, k: int, seed=None, better_count: int | None = None) -> np.ndarray:
    """Random column-stochastic confusions; the first ``better_count`` learners
    are better than random, the others are not.

    Columns are Dirichlet(1); a better learner's column is mixed 10% at a time
    toward its identity column until the diagonal is the strict maximum. A
    non-better learner that happens to be diagonally dominant is redrawn.
    """
    rng = _rng(seed)
    if better_count is None:
        better_count = m // 2 + 1
    if not 1 <= better_count <= m:
        raise ValueError(f"better_count must be in 1..{m}, got {better_count}")
    out = np.empty((m, k, k))
    eye = np.eye(k)
    for i in range(m):
        while True:
            g = rng.dirichlet(np.ones(k), size=k).T
            if i < better_count or not is_diagonally_dominant(g):
                break
        if i < better_count:
            for col in range(k):
                c = g[:, col]
                while np.argmax(c) != col or np.sum(c == c[col]) > 1:
                    c = 0.9 * c + 0.1 * eye[:, col]
                g[:, col] = c / c.sum()
        out[i] = g
    return out


def gen_transition(k: int, seed=None) -> np.ndarray:
    """Transition matrix with independent Dirichlet(1) columns."""
    return _rng(seed).dirichlet(np.ones(k), size=k).T


def is_irreducible(t: np.ndarray) -> bool:
    k = t.shape[0]
    reach = np.linalg.matrix_power(np.eye(k) + (np.asarray(t) > 0), k)
    return bool(np.all(reach > 0))


def stationary_distribution(t: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Fixed point of ``T pi = pi`` by power iteration on the lazy chain."""
    k = t.shape[0]
    lazy = 0.5 * (np.eye(k) + t)
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = lazy @ pi
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    return pi


def gen_markov_labels(t, segments, seed=None):
    """Markov label sequences; each segment starts from the stationary law.

    Returns ``(labels, partition)`` with 1-based labels.
    """
    t = check_transition(t)
    if not is_irreducible(t):
        raise ValidationError(["transition matrix must be irreducible"])
    rng = _rng(seed)
    partition = SequencePartition(np.asarray(segments))
    k = t.shape[0]
    pi = stationary_distribution(t)
    cdf = np.cumsum(t, axis=0)
    cdf[-1] = 1.0
    cpi = np.cumsum(pi)
    cpi[-1] = 1.0
    lengths = partition.lengths
    u = rng.random((lengths.size, int(lengths.max())))
    # all segments advance together; steps past a segment's end are discarded
    y = np.empty(u.shape, dtype=np.int64)
    y[:, 0] = np.searchsorted(cpi, u[:, 0], side="right")
    for j in range(1, u.shape[1]):
        cols = cdf[:, y[:, j - 1]]
        y[:, j] = (u[:, j][None, :] >= cols).sum(axis=0)
    y = np.minimum(y, k - 1)
    valid = np.arange(u.shape[1])[None, :] < lengths[:, None]
    labels = y[valid]
    return labels + 1, partition


def community_sizes(n: int, k: int) -> np.ndarray:
    base, rest = divmod(n, k)
    return np.array([base + (1 if i < rest else 0) for i in range(k)], dtype=np.int64)


def sbm_probabilities(n: int, k: int, mean_degree: float, ratio: float = SBM_RATIO) -> tuple[float, float]:
    """Edge probabilities with ``p_in = ratio * p_out`` giving the target mean degree."""
    sizes = community_sizes(n, k)
    intra_pairs = float(np.sum(sizes * (sizes - 1) / 2))
    inter_pairs = n * (n - 1) / 2 - intra_pairs
    p_out = mean_degree * n / 2 / (ratio * intra_pairs + inter_pairs)
    p_in = ratio * p_out
    if p_in > 1:
        raise ValueError(f"mean degree {mean_degree} unreachable with ratio {ratio}")
    return p_in, p_out


def _triangle_decode(idx: np.ndarray, size: int):
    """Map linear indices to pairs ``i < j`` enumerated row by row."""
    # row i holds size-1-i pairs and starts at i*size - i*(i+1)/2
    i = np.floor((2 * size - 1 - np.sqrt((2 * size - 1) ** 2 - 8 * idx.astype(float))) / 2).astype(np.int64)
    start = i * size - i * (i + 1) // 2
    i = np.where(start > idx, i - 1, i)
    start = i * size - i * (i + 1) // 2
    nxt_start = (i + 1) * size - (i + 1) * (i + 2) // 2
    i = np.where(nxt_start <= idx, i + 1, i)
    start = i * size - i * (i + 1) // 2
    j = idx - start + i + 1
    return i, j


def gen_sbm_graph(n: int, k: int, p_in: float, p_out: float, seed=None, delta: float = 1.0):
    """Stochastic block model graph; returns ``(graph, community labels)``.

    Community sizes differ by at most one and members are placed at random
    positions; labels are 1-based community ids.
    """
    if not 0 <= p_out <= p_in <= 1:
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    rng = _rng(seed)
    sizes = community_sizes(n, k)
    labels = rng.permutation(np.repeat(np.arange(1, k + 1), sizes))
    members = [np.flatnonzero(labels == c + 1) for c in range(k)]
    edges = []
    for a in range(k):
        for b in range(a, k):
            if a == b:
                total = int(sizes[a] * (sizes[a] - 1) // 2)
                p = p_in
            else:
                total = int(sizes[a] * sizes[b])
                p = p_out
            if total == 0 or p == 0:
                continue
            count = int(rng.binomial(total, p))
            if count == 0:
                continue
            idx = np.sort(rng.choice(total, size=count, replace=False))
            if a == b:
                i, j = _triangle_decode(idx, int(sizes[a]))
                u, v = members[a][i], members[a][j]
            else:
                u, v = members[a][idx // sizes[b]], members[b][idx % sizes[b]]
            edges.append(np.stack([u, v], axis=1))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    return DataGraph(n, edges, np.full(edges.shape[0], float(delta))), labels


def gen_responses(labels, confusions, missing_rate: float = 0.0, seed=None) -> ResponseMatrix:
    """Draw ``f_m(x_n)`` from column ``y_n`` of each confusion matrix.

    Entries are blanked independently with ``missing_rate``; an item left with
    no response gets its blanking pattern redrawn.
    """
    if not 0 <= missing_rate < 1:
        raise ValueError("missing_rate must be in [0, 1)")
    rng = _rng(seed)
    y = np.asarray(labels, dtype=np.int64) - 1
    gam = np.asarray(confusions, dtype=float)
    m, k, _ = gam.shape
    n = y.size
    cdf = np.cumsum(gam, axis=1)
    cdf[:, -1, :] = 1.0
    u = rng.random((m, n))
    cols = cdf[:, :, y]  # (m, k, n)
    answers = (u[:, None, :] >= cols).sum(axis=1)
    answers = np.minimum(answers, k - 1) + 1
    if missing_rate > 0:
        keep = rng.random((m, n)) >= missing_rate
        empty = np.flatnonzero(~keep.any(axis=0))
        while empty.size:
            keep[:, empty] = rng.random((m, empty.size)) >= missing_rate
            empty = empty[~keep[:, empty].any(axis=0)]
        answers = np.where(keep, answers, 0)
    return ResponseMatrix(answers, k)
