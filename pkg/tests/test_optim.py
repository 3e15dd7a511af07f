from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depfusion import metrics, synth
from depfusion.core import NumericalError, is_column_stochastic, is_simplex_vector
from depfusion.iid import moment_match
from depfusion.moments import LaggedMomentSet, MomentSet, estimate_moments
from depfusion.optim import (
    MomentFitConfig,
    fit_moment_match,
    fit_transition,
    moment_objective,
    project_columns,
    project_scaled_simplex,
    project_simplex,
    resolve_permutation,
    transition_objective,
)
from oracles import best_permutation, random_stochastic


def exact_moments(gam, pi):
    """Population moments of the i.i.d. model."""
    m, k, _ = gam.shape
    pairs = list(combinations(range(m), 2))
    triples = list(combinations(range(m), 3))
    return MomentSet(
        k_classes=k,
        means=np.einsum("mik,k->mi", gam, pi),
        mean_counts=np.ones(m, dtype=np.int64),
        pair_index=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        pairs=np.array([gam[a] @ np.diag(pi) @ gam[b].T for a, b in pairs]).reshape(-1, k, k),
        pair_counts=np.ones(len(pairs), dtype=np.int64),
        triple_index=np.array(triples, dtype=np.int64).reshape(-1, 3),
        triples=np.array([np.einsum("ik,jk,lk,k->ijl", gam[a], gam[b], gam[c], pi) for a, b, c in triples]).reshape(
            -1, k, k, k
        ),
        triple_counts=np.ones(len(triples), dtype=np.int64),
    )


def exact_lagged(gam, joint):
    m = gam.shape[0]
    lag = np.einsum("aik,kl,bjl->abij", gam, joint, gam)
    return LaggedMomentSet(lag=lag, counts=np.ones((m, m), dtype=np.int64))


# --- projections -----------------------------------------------------------

def test_project_simplex_examples():
    np.testing.assert_allclose(project_simplex([0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex([0.4, 0.4, 0.4]), [1 / 3] * 3)


def test_project_simplex_rejects_nonfinite():
    with pytest.raises(ValueError):
        project_simplex([np.nan, 1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=7))
def test_project_simplex_is_closest_feasible_point(v):
    v = np.array(v)
    p = project_simplex(v)
    assert is_simplex_vector(p)
    # optimality: (v - p) . (u - p) <= 0 for the simplex vertices u
    for i in range(v.size):
        u = np.zeros(v.size)
        u[i] = 1.0
        assert (v - p) @ (u - p) <= 1e-9


def test_project_scaled_simplex_examples():
    k = 3
    flat = np.full((k, k), 1 / k**2)
    np.testing.assert_allclose(project_scaled_simplex(flat), flat)
    np.testing.assert_allclose(project_scaled_simplex(np.ones((2, 2))), np.full((2, 2), 0.25))
    x = np.array([[0.9, 0.0], [0.0, 0.3]])
    np.testing.assert_allclose(project_scaled_simplex(x), project_simplex([0.9, 0, 0, 0.3]).reshape(2, 2))


def test_project_columns(rng):
    x = rng.normal(size=(3, 4, 4))
    assert is_column_stochastic(project_columns(x))


# --- moment matching ---------------------------------------------------------

def test_zero_residual_instance():
    k, m = 3, 4
    gam = np.tile(np.eye(k), (m, 1, 1))
    pi = np.full(k, 1 / k)
    mo = exact_moments(gam, pi)
    assert moment_objective(mo, gam, pi) == pytest.approx(0.0, abs=1e-15)
    fit = fit_moment_match(mo)
    assert metrics.confusion_error(gam, fit.confusions) <= 0.05
    assert not fit.degraded


def test_exact_moments_recover_random_parameters(rng):
    k, m = 3, 5
    gam = synth.gen_confusions(m, k, rng, better_count=m)
    pi = rng.dirichlet(5 * np.ones(k))
    init = (np.tile(0.6 * np.eye(k) + 0.4 / k, (m, 1, 1)), np.full(k, 1 / k))
    # block descent converges slowly near the optimum; allow a longer run
    fit = fit_moment_match(exact_moments(gam, pi), MomentFitConfig(max_outer_iters=2000), init=init)
    assert fit.objective < 1e-8
    assert metrics.confusion_error(gam, fit.confusions) < 1e-2


def test_degraded_flag_with_two_learners(rng):
    y = rng.integers(1, 4, 200)
    gam = synth.gen_confusions(2, 3, rng)
    fit = moment_match(synth.gen_responses(y, gam, 0.0, rng))
    assert fit.degraded and fit.warnings


def test_fit_outputs_feasible_and_trace_monotone(rng):
    k, m, n = 4, 6, 2000
    gam = synth.gen_confusions(m, k, rng)
    y = rng.integers(1, k + 1, n)
    fit = moment_match(synth.gen_responses(y, gam, 0.2, rng))
    assert is_column_stochastic(fit.confusions) and is_simplex_vector(fit.prior)
    trace = np.array(fit.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * trace[:-1])
    assert fit.objective == pytest.approx(min(fit.restart_objectives))


def test_objective_matches_reported(rng):
    k, m, n = 3, 4, 500
    gam = synth.gen_confusions(m, k, rng)
    r = synth.gen_responses(rng.integers(1, k + 1, n), gam, 0.0, rng)
    mo = estimate_moments(r)
    fit = fit_moment_match(mo)
    assert moment_objective(mo, fit.confusions, fit.prior) == pytest.approx(fit.objective, rel=1e-9)


def test_confusion_error_shrinks_with_n():
    k, m = 4, 10
    med = {}
    for n in (1000, 10_000):
        errs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            gam = synth.gen_confusions(m, k, rng)
            y = rng.integers(1, k + 1, n)
            fit = moment_match(synth.gen_responses(y, gam, 0.0, rng))
            errs.append(metrics.confusion_error(gam, fit.confusions))
        med[n] = np.median(errs)
    assert med[10_000] < med[1000]


def test_config_validation():
    with pytest.raises(ValueError):
        MomentFitConfig(restarts=0)
    with pytest.raises(ValueError):
        MomentFitConfig(shrink=1.5)


def test_nonfinite_moments_raise():
    k, m = 2, 3
    mo = exact_moments(np.tile(np.eye(k), (m, 1, 1)), np.full(k, 0.5))
    bad = MomentSet(**{**mo.__dict__, "means": np.full((m, k), np.inf)})
    with pytest.raises(NumericalError):
        fit_moment_match(bad)


# --- permutation -------------------------------------------------------------

def test_permutation_identity_when_dominant(rng):
    gam = synth.gen_confusions(3, 4, rng, better_count=3)
    out, pi, perm = resolve_permutation(gam, np.full(4, 0.25))
    np.testing.assert_array_equal(perm, np.arange(4))
    np.testing.assert_array_equal(out, gam)


def test_permutation_swapped_identity():
    swapped = np.tile(np.array([[0.0, 1.0], [1.0, 0.0]]), (3, 1, 1))
    out, pi, perm = resolve_permutation(swapped, np.array([0.3, 0.7]))
    np.testing.assert_array_equal(out, np.tile(np.eye(2), (3, 1, 1)))
    np.testing.assert_allclose(pi, [0.7, 0.3])


def test_permutation_hand_example():
    avg = np.array([[0.2, 0.7], [0.8, 0.3]])
    _, _, perm = resolve_permutation(avg[None], np.array([0.5, 0.5]))
    np.testing.assert_array_equal(perm, [1, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_permutation_matches_enumeration(k, m, seed):
    rng = np.random.default_rng(seed)
    gam = random_stochastic(rng, k, m)
    pi = rng.dirichlet(np.ones(k))
    out, new_pi, perm = resolve_permutation(gam, pi)
    p = best_permutation(gam.mean(axis=0))
    # enumeration optimum and the assignment reach the same diagonal mass
    best = sum(gam.mean(axis=0)[p[i], i] for i in range(k))
    assert np.trace(out.mean(axis=0)) == pytest.approx(best, abs=1e-12)
    assert np.trace(out.sum(axis=0)) >= np.trace(gam.sum(axis=0)) - 1e-12
    # columns are only rearranged
    np.testing.assert_array_equal(out, gam[:, :, np.argsort(perm)])
    np.testing.assert_array_equal(new_pi, pi[np.argsort(perm)])


# --- transition fit ----------------------------------------------------------

def test_transition_identity_confusions_exact(rng):
    k, m = 3, 3
    t = synth.gen_transition(k, rng)
    pi = synth.stationary_distribution(t)
    fit = fit_transition(exact_lagged(np.tile(np.eye(k), (m, 1, 1)), t @ np.diag(pi)), np.tile(np.eye(k), (m, 1, 1)))
    np.testing.assert_allclose(fit.transition, t, atol=1e-6)
    np.testing.assert_allclose(fit.prior, pi, atol=1e-6)


def test_transition_hand_example():
    a = np.array([[0.3, 0.2], [0.1, 0.4]])
    gam = np.tile(np.eye(2), (2, 1, 1))
    fit = fit_transition(exact_lagged(gam, a), gam)
    np.testing.assert_allclose(fit.prior, [0.4, 0.6], atol=1e-6)
    np.testing.assert_allclose(fit.transition, [[0.75, 1 / 3], [0.25, 2 / 3]], atol=1e-6)


def test_transition_rank_deficiency_warning():
    a = np.array([[0.6, 0.0], [0.4, 0.0]])
    gam = np.tile(np.eye(2), (2, 1, 1))
    fit = fit_transition(exact_lagged(gam, a), gam)
    np.testing.assert_allclose(fit.transition[:, 1], [0.5, 0.5])
    assert any("rank-deficient" in w for w in fit.warnings)


def test_transition_fit_convexity(rng):
    k, m = 3, 4
    gam = synth.gen_confusions(m, k, rng)
    t = synth.gen_transition(k, rng)
    y, part = synth.gen_markov_labels(t, [50] * 20, rng)
    from depfusion.moments import estimate_lagged_moments

    lag = estimate_lagged_moments(synth.gen_responses(y, gam, 0.0, rng), part)
    short = fit_transition(lag, gam, max_iters=200)
    long = fit_transition(lag, gam, max_iters=400)
    assert long.objective <= short.objective + 1e-15
    starts = [project_scaled_simplex(rng.random((k, k))) for _ in range(2)]
    objs = [fit_transition(lag, gam, init=s).objective for s in starts]
    assert abs(objs[0] - objs[1]) <= 1e-6
    assert transition_objective(lag, gam, long.joint) == pytest.approx(long.objective, rel=1e-9)
    assert is_column_stochastic(long.transition) and is_simplex_vector(long.joint.ravel())
