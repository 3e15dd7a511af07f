"""Simplex-constrained least squares used by the moment-matching estimators.

``fit_moment_match`` fits confusion matrices and class priors to first, second
and third order response moments by block-coordinate descent; each block is a
convex quadratic over a product of simplices solved by projected gradient with
Armijo backtracking. ``fit_transition`` solves the convex lagged-moment fit for
``A = T diag(pi)`` over the scaled simplex and splits it into ``T`` and ``pi``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import permutations

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import NumericalError, is_column_stochastic
from .moments import LaggedMomentSet, MomentSet

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

def _project_rows(v: np.ndarray) -> np.ndarray:
    """Project every row of a 2-D array onto the unit simplex (sort based)."""
    n, d = v.shape
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, d + 1)
    cond = u - css / ind > 0
    rho = d - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(n), rho - 1] / rho
    return np.maximum(v - theta[:, None], 0.0)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of a vector onto ``{u >= 0, sum(u) = 1}``."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("project_simplex needs finite entries")
    return _project_rows(v.reshape(1, -1)).reshape(v.shape)


def project_columns(x: np.ndarray) -> np.ndarray:
    """Project each column of ``x`` (last two axes) onto the simplex."""
    x = np.asarray(x, dtype=float)
    flat = np.swapaxes(x, -1, -2).reshape(-1, x.shape[-2])
    out = _project_rows(flat).reshape(np.swapaxes(x, -1, -2).shape)
    return np.swapaxes(out, -1, -2)


def project_scaled_simplex(x) -> np.ndarray:
    """Project a matrix onto nonnegative matrices whose entries sum to one."""
    x = np.asarray(x, dtype=float)
    return project_simplex(x.ravel()).reshape(x.shape)


# ---------------------------------------------------------------------------
# Projected gradient for quadratics over simplices
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _quad(x, g, h):
    # f(X) = tr(X G X^T) - 2 tr(X H^T)
    r, k = x.shape
    val = 0.0
    for i in range(r):
        for a in range(k):
            xa = x[i, a]
            if xa == 0.0:
                continue
            acc = 0.0
            for b in range(k):
                acc += g[a, b] * x[i, b]
            val += xa * (acc - 2.0 * h[i, a])
    return val


@numba.njit(cache=True)
def _project_into(y, out, whole, buf):
    """Simplex projection of the columns of ``y`` (or of all of ``y``) into ``out``."""
    r, k = y.shape
    if whole:
        groups, size = 1, r * k
    else:
        groups, size = k, r
    for gi in range(groups):
        for i in range(size):
            buf[i] = y.flat[i] if whole else y[i, gi]
        # insertion sort, descending
        for i in range(1, size):
            v = buf[i]
            j = i - 1
            while j >= 0 and buf[j] < v:
                buf[j + 1] = buf[j]
                j -= 1
            buf[j + 1] = v
        css = 0.0
        theta = 0.0
        for i in range(size):
            css += buf[i]
            t = (css - 1.0) / (i + 1)
            if buf[i] - t > 0:
                theta = t
        for i in range(size):
            if whole:
                out.flat[i] = max(y.flat[i] - theta, 0.0)
            else:
                out[i, gi] = max(y[i, gi] - theta, 0.0)


@numba.njit(cache=True)
def _pg_quadratic(x, g, h, step, iters, armijo, shrink, tol, whole):
    """Projected gradient with Armijo backtracking; never increases f."""
    r, k = x.shape
    x = x.copy()
    grad = np.empty_like(x)
    y = np.empty_like(x)
    x_new = np.empty_like(x)
    buf = np.empty(r * k)
    f = _quad(x, g, h)
    for _ in range(iters):
        for i in range(r):
            for a in range(k):
                acc = 0.0
                for b in range(k):
                    acc += x[i, b] * g[b, a]
                grad[i, a] = 2.0 * (acc - h[i, a])
        t = step
        while True:
            for i in range(r):
                for a in range(k):
                    y[i, a] = x[i, a] - t * grad[i, a]
            _project_into(y, x_new, whole, buf)
            f_new = _quad(x_new, g, h)
            lin = 0.0
            for i in range(r):
                for a in range(k):
                    lin += grad[i, a] * (x_new[i, a] - x[i, a])
            if f_new <= f + armijo * lin or t < 1e-20:
                break
            t *= shrink
        if f_new > f:
            break
        change = 0.0
        for i in range(r):
            for a in range(k):
                change = max(change, abs(x_new[i, a] - x[i, a]))
                x[i, a] = x_new[i, a]
        f = f_new
        if change < tol:
            break
    return x


def _solve_block(x, g, h, cfg, whole=False):
    lmax = float(np.linalg.eigvalsh(g)[-1])
    step = 1.0 / max(2.0 * lmax, 1e-12)
    return _pg_quadratic(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(g), np.ascontiguousarray(h),
                         step, cfg.block_solver_iters, cfg.armijo, cfg.shrink, cfg.block_tol, whole)


# ---------------------------------------------------------------------------
# Moment matching
# ---------------------------------------------------------------------------

@dataclass
class MomentFitConfig:
    max_outer_iters: int = 200
    block_solver_iters: int = 100
    armijo: float = 1e-4
    shrink: float = 0.5
    rel_tol: float = 1e-7
    block_tol: float = 1e-12
    restarts: int = 3
    restart_concentration: float = 10.0
    restart_mix: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.max_outer_iters, self.block_solver_iters, self.restarts) < 1:
            raise ValueError("iteration counts and restarts must be >= 1")
        if not (self.rel_tol > 0 and self.armijo > 0 and 0 < self.shrink < 1):
            raise ValueError("tolerances must be positive and shrink in (0, 1)")


@dataclass
class MomentFit:
    confusions: np.ndarray
    prior: np.ndarray
    objective: float
    degraded: bool = False
    objective_trace: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)
    permutation: np.ndarray | None = None
    warnings: list = field(default_factory=list)


class _MomentProblem:
    """Pre-arranged moments so each block's quadratic is assembled by einsum."""

    def __init__(self, moments: MomentSet, use_triples: bool = True):
        self.k = moments.k_classes
        self.m = moments.m_learners
        self.means = moments.means
        self.pair_index = moments.pair_index
        self.pairs = moments.pairs
        self.triple_index = moments.triple_index if use_triples else np.zeros((0, 3), dtype=np.int64)
        self.triples = moments.triples if use_triples else np.zeros((0,) + (self.k,) * 3)
        self.by_learner = []
        for j in range(self.m):
            first = self.pair_index[:, 0] == j
            second = self.pair_index[:, 1] == j
            s_j = np.concatenate([self.pairs[first], np.swapaxes(self.pairs[second], 1, 2)])
            o_j = np.concatenate([self.pair_index[first, 1], self.pair_index[second, 0]])
            t_list, o_list = [], []
            for pos in range(3):
                hit = self.triple_index[:, pos] == j
                if not hit.any():
                    continue
                axes = [pos] + [a for a in range(3) if a != pos]
                t_list.append(np.transpose(self.triples[hit], [0] + [a + 1 for a in axes]))
                o_list.append(self.triple_index[hit][:, axes[1:]])
            if t_list:
                t_j = np.concatenate(t_list)
                ot_j = np.concatenate(o_list)
            else:
                t_j = np.zeros((0,) + (self.k,) * 3)
                ot_j = np.zeros((0, 2), dtype=np.int64)
            self.by_learner.append((s_j, o_j, t_j, ot_j))

    def objective(self, gam: np.ndarray, pi: np.ndarray) -> float:
        r = self.means - gam @ pi
        val = float(np.sum(r * r))
        if self.pairs.shape[0]:
            a, b = self.pair_index.T
            model = np.einsum("pik,k,pjk->pij", gam[a], pi, gam[b])
            val += float(np.sum((self.pairs - model) ** 2))
        if self.triples.shape[0]:
            a, b, c = self.triple_index.T
            model = np.einsum("tik,tjk,tlk,k->tijl", gam[a], gam[b], gam[c], pi, optimize=True)
            val += float(np.sum((self.triples - model) ** 2))
        return val

    def confusion_block(self, j, gam, pi, gram):
        s_j, o_j, t_j, ot_j = self.by_learner[j]
        pp = np.outer(pi, pi)
        g = pp.copy()
        h = np.outer(self.means[j], pi)
        if o_j.size:
            g += pp * gram[o_j].sum(axis=0)
            h += np.einsum("pij,pjk->ik", s_j, gam[o_j]) * pi
        if ot_j.size:
            o1, o2 = ot_j.T
            g += pp * np.einsum("tij,tij->ij", gram[o1], gram[o2])
            tmp = np.einsum("tibc,tck->tibk", t_j, gam[o2])
            h += np.einsum("tibk,tbk->ik", tmp, gam[o1]) * pi
        return g, h

    def prior_block(self, gam, gram):
        g = gram.sum(axis=0)
        h = np.einsum("mik,mi->k", gam, self.means)
        if self.pairs.shape[0]:
            a, b = self.pair_index.T
            g = g + np.einsum("pij,pij->ij", gram[a], gram[b])
            h = h + np.einsum("pik,pij,pjk->k", gam[a], self.pairs, gam[b], optimize=True)
        if self.triples.shape[0]:
            a, b, c = self.triple_index.T
            g = g + np.einsum("tij,tij,tij->ij", gram[a], gram[b], gram[c])
            tmp = np.einsum("tabc,tck->tabk", self.triples, gam[c])
            tmp = np.einsum("tabk,tbk->tak", tmp, gam[b])
            h = h + np.einsum("tak,tak->k", tmp, gam[a])
        return g, h


@numba.njit(cache=True)
def _nb_objective(means, pair_index, pairs, triple_index, triples, gam, pi):
    m, k = means.shape
    val = 0.0
    for a in range(m):
        for i in range(k):
            r = means[a, i]
            for c in range(k):
                r -= gam[a, i, c] * pi[c]
            val += r * r
    for p in range(pair_index.shape[0]):
        a, b = pair_index[p, 0], pair_index[p, 1]
        for i in range(k):
            for j in range(k):
                r = pairs[p, i, j]
                for c in range(k):
                    r -= gam[a, i, c] * pi[c] * gam[b, j, c]
                val += r * r
    for t in range(triple_index.shape[0]):
        a, b, d = triple_index[t, 0], triple_index[t, 1], triple_index[t, 2]
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    r = triples[t, i, j, l]
                    for c in range(k):
                        r -= gam[a, i, c] * gam[b, j, c] * gam[d, l, c] * pi[c]
                    val += r * r
    return val


@numba.njit(cache=True)
def _nb_confusion_block(j, means, pair_index, pairs, triple_index, triples, gam, pi, gram):
    k = means.shape[1]
    g = np.outer(pi, pi)
    h = np.outer(means[j], pi)
    pp = np.outer(pi, pi)
    for p in range(pair_index.shape[0]):
        a, b = pair_index[p, 0], pair_index[p, 1]
        if a == j:
            o = b
        elif b == j:
            o = a
        else:
            continue
        g += pp * gram[o]
        for i in range(k):
            for c in range(k):
                acc = 0.0
                for q in range(k):
                    s = pairs[p, i, q] if a == j else pairs[p, q, i]
                    acc += s * gam[o, q, c]
                h[i, c] += acc * pi[c]
    for t in range(triple_index.shape[0]):
        a, b, d = triple_index[t, 0], triple_index[t, 1], triple_index[t, 2]
        if a == j:
            pos, o1, o2 = 0, b, d
        elif b == j:
            pos, o1, o2 = 1, a, d
        elif d == j:
            pos, o1, o2 = 2, a, b
        else:
            continue
        g += pp * gram[o1] * gram[o2]
        for i in range(k):
            for q in range(k):
                for r in range(k):
                    if pos == 0:
                        s = triples[t, i, q, r]
                    elif pos == 1:
                        s = triples[t, q, i, r]
                    else:
                        s = triples[t, q, r, i]
                    if s == 0.0:
                        continue
                    for c in range(k):
                        h[i, c] += s * gam[o1, q, c] * gam[o2, r, c] * pi[c]
    return g, h


@numba.njit(cache=True)
def _nb_prior_block(means, pair_index, pairs, triple_index, triples, gam, gram):
    m, k = means.shape
    g = np.zeros((k, k))
    h = np.zeros(k)
    for a in range(m):
        g += gram[a]
        for c in range(k):
            for i in range(k):
                h[c] += gam[a, i, c] * means[a, i]
    for p in range(pair_index.shape[0]):
        a, b = pair_index[p, 0], pair_index[p, 1]
        g += gram[a] * gram[b]
        for i in range(k):
            for q in range(k):
                s = pairs[p, i, q]
                for c in range(k):
                    h[c] += gam[a, i, c] * s * gam[b, q, c]
    for t in range(triple_index.shape[0]):
        a, b, d = triple_index[t, 0], triple_index[t, 1], triple_index[t, 2]
        g += gram[a] * gram[b] * gram[d]
        for i in range(k):
            for q in range(k):
                for r in range(k):
                    s = triples[t, i, q, r]
                    if s == 0.0:
                        continue
                    for c in range(k):
                        h[c] += s * gam[a, i, c] * gam[b, q, c] * gam[d, r, c]
    return g, h


@numba.njit(cache=True)
def _max_eig(g):
    return np.linalg.eigvalsh(g)[-1]


@numba.njit(cache=True)
def _nb_bcd(means, pair_index, pairs, triple_index, triples, gam, pi,
            max_outer, inner_iters, armijo, shrink, rel_tol, block_tol):
    m, k = means.shape
    trace = np.empty(max_outer + 1)
    obj = _nb_objective(means, pair_index, pairs, triple_index, triples, gam, pi)
    trace[0] = obj
    n = 1
    gram = np.empty((m, k, k))
    for _ in range(max_outer):
        for a in range(m):
            gram[a] = np.ascontiguousarray(gam[a].T) @ np.ascontiguousarray(gam[a])
        for j in range(m):
            g, h = _nb_confusion_block(j, means, pair_index, pairs, triple_index, triples, gam, pi, gram)
            step = 1.0 / max(2.0 * _max_eig(g), 1e-12)
            gam[j] = _pg_quadratic(gam[j].copy(), g, h, step, inner_iters, armijo, shrink, block_tol, False)
            gram[j] = np.ascontiguousarray(gam[j].T) @ np.ascontiguousarray(gam[j])
        g, h = _nb_prior_block(means, pair_index, pairs, triple_index, triples, gam, gram)
        step = 1.0 / max(2.0 * _max_eig(g), 1e-12)
        x = _pg_quadratic(pi.reshape(1, k).copy(), g, h.reshape(1, k), step, inner_iters, armijo, shrink,
                          block_tol, True)
        pi = x[0].copy()
        new = _nb_objective(means, pair_index, pairs, triple_index, triples, gam, pi)
        trace[n] = new
        n += 1
        if not np.isfinite(new):
            break
        done = obj - new <= rel_tol * max(abs(obj), 1e-300)
        obj = new
        if done:
            break
    return gam, pi, obj, trace[:n]


def _run_bcd(problem: _MomentProblem, gam, pi, cfg: MomentFitConfig):
    k = problem.k
    triples = np.ascontiguousarray(problem.triples, dtype=float).reshape(-1, k, k, k)
    tidx = np.ascontiguousarray(problem.triple_index, dtype=np.int64).reshape(-1, 3)
    gam, pi, obj, trace = _nb_bcd(
        np.ascontiguousarray(problem.means, dtype=float),
        np.ascontiguousarray(problem.pair_index, dtype=np.int64).reshape(-1, 2),
        np.ascontiguousarray(problem.pairs, dtype=float).reshape(-1, k, k),
        tidx, triples,
        np.array(gam, dtype=float), np.array(pi, dtype=float),
        cfg.max_outer_iters, cfg.block_solver_iters, cfg.armijo, cfg.shrink, cfg.rel_tol, cfg.block_tol,
    )
    if not np.isfinite(obj):
        raise NumericalError("moment-matching objective became non-finite")
    return gam, pi, float(obj), trace.tolist()


def fit_moment_match(moments: MomentSet, config: MomentFitConfig | None = None, init=None) -> MomentFit:
    """Fit ``{Gamma_m}`` and ``pi`` to the response moments.

    ``init`` is an optional ``(confusions, prior)`` starting point; without it
    the first run starts from diagonally dominant confusions and uniform prior.
    The returned estimates have their class permutation resolved.
    """
    cfg = config or MomentFitConfig()
    k, m = moments.k_classes, moments.m_learners
    degraded = m < 3 or moments.triples.shape[0] == 0
    warnings = []
    if degraded:
        warnings.append(
            "degraded moment fit: fewer than three co-responding learners, only mean/pair terms used"
        )
    for arr in (moments.means, moments.pairs, moments.triples):
        if not np.all(np.isfinite(arr)):
            raise NumericalError("moment-matching objective became non-finite: moments contain NaN or inf")
    problem = _MomentProblem(moments)
    if init is None:
        gam0 = np.tile(0.5 * np.eye(k) + 0.5 / k, (m, 1, 1))
        pi0 = np.full(k, 1.0 / k)
    else:
        gam0 = project_columns(np.asarray(init[0], dtype=float))
        pi0 = project_simplex(np.asarray(init[1], dtype=float))
    rng = np.random.default_rng(cfg.seed)
    best = None
    restart_objs = []
    for r in range(cfg.restarts):
        if r == 0:
            g_init, p_init = gam0, pi0
        else:
            noise = rng.dirichlet(np.full(k, cfg.restart_concentration), size=(m, k))
            g_init = (1 - cfg.restart_mix) * gam0 + cfg.restart_mix * np.swapaxes(noise, 1, 2)
            p_init = (1 - cfg.restart_mix) * pi0 + cfg.restart_mix * rng.dirichlet(np.full(k, cfg.restart_concentration))
        gam, pi, obj, trace = _run_bcd(problem, g_init, p_init, cfg)
        restart_objs.append(obj)
        if best is None or obj < best[2]:
            best = (gam, pi, obj, trace)
    gam, pi, obj, trace = best
    gam, pi, perm = resolve_permutation(gam, pi)
    return MomentFit(
        confusions=gam,
        prior=pi,
        objective=obj,
        degraded=degraded,
        objective_trace=trace,
        restart_objectives=restart_objs,
        permutation=perm,
        warnings=warnings,
    )


def moment_objective(moments: MomentSet, confusions, prior) -> float:
    """Value of the moment-matching objective at the given parameters."""
    return _MomentProblem(moments).objective(np.asarray(confusions, float), np.asarray(prior, float))


def resolve_permutation(confusions, prior):
    """Relabel latent classes so the learner-averaged confusion is diagonal-heavy.

    Returns ``(confusions, prior, perm)`` where old column ``k`` moved to
    column ``perm[k]``. Rows (observed answers) keep their meaning.
    """
    gam = np.asarray(confusions, dtype=float)
    pi = np.asarray(prior, dtype=float)
    avg = gam.mean(axis=0)
    # cost[k, j]: old column k placed at class j scores avg[j, k]
    rows, cols = linear_sum_assignment(-avg.T)
    perm = np.empty(avg.shape[0], dtype=np.int64)
    perm[rows] = cols
    new_gam = np.empty_like(gam)
    new_gam[:, :, perm] = gam
    new_pi = np.empty_like(pi)
    new_pi[perm] = pi
    return new_gam, new_pi, perm


def best_permutation_bruteforce(confusions) -> tuple[int, ...]:
    """Exhaustive counterpart of ``resolve_permutation`` for small K."""
    avg = np.asarray(confusions, float).mean(axis=0)
    k = avg.shape[0]
    return max(permutations(range(k)), key=lambda p: sum(avg[p[i], i] for i in range(k)))


# ---------------------------------------------------------------------------
# Transition matrix
# ---------------------------------------------------------------------------

@dataclass
class TransitionFit:
    transition: np.ndarray
    prior: np.ndarray
    joint: np.ndarray
    objective: float
    iterations: int
    warnings: list = field(default_factory=list)


def transition_objective(lagged: LaggedMomentSet, confusions, joint, include_same: bool = False) -> float:
    gam = np.asarray(confusions, float)
    use = lagged.usable(include_same)
    a, b = np.nonzero(use)
    model = np.einsum("pik,kl,pjl->pij", gam[a], joint, gam[b])
    return float(np.sum((lagged.lag[a, b] - model) ** 2))


def fit_transition(
    lagged: LaggedMomentSet,
    confusions,
    max_iters: int = 2000,
    rel_tol: float = 1e-9,
    init=None,
    include_same: bool = False,
    rank_floor: float = 1e-8,
) -> TransitionFit:
    """Fit ``A = T diag(pi)`` to lagged moments and recover ``T`` and ``pi``.

    All usable ordered learner pairs ``m != m2`` enter the least-squares fit.
    """
    gam = np.asarray(confusions, dtype=float)
    if not is_column_stochastic(gam):
        raise ValueError("confusions must be column-stochastic")
    k = gam.shape[-1]
    a, b = np.nonzero(lagged.usable(include_same))
    if a.size == 0:
        raise ValueError("no usable lagged moment matrices")
    s = lagged.lag[a, b]
    gram = np.einsum("mij,mik->mjk", gam, gam)
    # vec(A) row-major: grad = 2 (Q vec(A) - c)
    q = np.einsum("pij,pkl->ikjl", gram[a], gram[b]).reshape(k * k, k * k)
    c = np.einsum("pik,pij,pjl->kl", gam[a], s, gam[b]).reshape(-1)
    const = float(np.sum(s * s))
    lmax = float(np.linalg.eigvalsh(q)[-1])
    step = 1.0 / max(2.0 * lmax, 1e-12)

    def f(x):
        return float(x @ q @ x - 2.0 * c @ x + const)

    x = np.full(k * k, 1.0 / (k * k)) if init is None else project_simplex(np.asarray(init, float).ravel())
    fx = f(x)
    it = 0
    for it in range(1, max_iters + 1):
        grad = 2.0 * (q @ x - c)
        t = step
        while True:
            x_new = project_simplex(x - t * grad)
            f_new = f(x_new)
            if f_new <= fx + 1e-4 * float(grad @ (x_new - x)) or t < 1e-20:
                break
            t *= 0.5
        if f_new > fx:
            break
        decrease = fx - f_new
        x, fx = x_new, f_new
        if decrease <= rel_tol * max(abs(fx), 1e-300):
            break
    joint = x.reshape(k, k)
    pi = joint.sum(axis=0)
    warnings = []
    trans = np.empty_like(joint)
    for col in range(k):
        if pi[col] < rank_floor:
            trans[:, col] = 1.0 / k
            warnings.append(f"rank-deficient transition estimate: class {col + 1} has prior mass {pi[col]:.3g}")
        else:
            trans[:, col] = project_simplex(joint[:, col] / pi[col])
    return TransitionFit(transition=trans, prior=pi, joint=joint, objective=fx, iterations=it, warnings=warnings)
