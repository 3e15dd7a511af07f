import numpy as np
import pytest

from depfusion import metrics, synth
from depfusion.core import ResponseMatrix
from depfusion.iid import (
    ds_e_step,
    ds_em,
    ds_m_step,
    fuse_iid,
    majority_vote,
    map_labels,
    moment_match,
    observed_loglik,
)
from oracles import iid_posterior, random_stochastic


def _random_instance(rng, k=3, m=4, n=60, missing=0.2):
    gam = synth.gen_confusions(m, k, rng)
    y = rng.integers(1, k + 1, n)
    return synth.gen_responses(y, gam, missing, rng), y, gam


def test_majority_vote_unanimous():
    r = ResponseMatrix(np.array([[2, 1], [2, 1], [2, 1]]), 3)
    np.testing.assert_array_equal(majority_vote(r).labels, [2, 1])


def test_majority_vote_counts_and_ties():
    r = ResponseMatrix(np.array([[1, 2], [1, 1], [2, 2]]), 2)
    np.testing.assert_array_equal(majority_vote(r).labels, [1, 2])
    tie = ResponseMatrix(np.array([[1], [2]]), 2)
    res = majority_vote(tie)
    np.testing.assert_array_equal(res.labels, [1])
    np.testing.assert_allclose(res.posteriors, [[0.5, 0.5]])


def test_majority_vote_invariances(rng):
    r, _, _ = _random_instance(rng)
    base = majority_vote(r).labels
    perm_m = rng.permutation(r.m_learners)
    np.testing.assert_array_equal(majority_vote(ResponseMatrix(r.entries[perm_m], 3)).labels, base)
    perm_n = rng.permutation(r.n_items)
    np.testing.assert_array_equal(majority_vote(r.subset_items(perm_n)).labels, base[perm_n])


def test_e_step_uniform():
    r = ResponseMatrix(np.array([[1, 2, 3], [3, 3, 1]]), 3)
    q = ds_e_step(r, np.full((2, 3, 3), 1 / 3), np.full(3, 1 / 3))
    np.testing.assert_allclose(q, 1 / 3)


def test_e_step_perfect_learners():
    r = ResponseMatrix(np.array([[2, 1], [2, 1]]), 2)
    q = ds_e_step(r, np.tile(np.eye(2), (2, 1, 1)), np.array([0.5, 0.5]))
    assert q[0, 1] >= 1 - 1e-6 and q[1, 0] >= 1 - 1e-6


def test_e_step_hand_bayes():
    r = ResponseMatrix(np.array([[1]]), 2)
    g = np.array([[[0.8, 0.3], [0.2, 0.7]]])
    np.testing.assert_allclose(ds_e_step(r, g, [0.5, 0.5]), [[0.8 / 1.1, 0.3 / 1.1]])


def test_e_step_matches_enumeration(rng):
    for _ in range(20):
        r, _, _ = _random_instance(rng, n=15)
        gam = random_stochastic(rng, 3, r.m_learners)
        pi = rng.dirichlet(np.ones(3))
        np.testing.assert_allclose(ds_e_step(r, gam, pi), iid_posterior(r.entries, gam, pi), atol=1e-12)


def test_m_step_hard_truth_perfect():
    y = np.array([1, 2, 3, 2])
    r = ResponseMatrix(np.tile(y, (2, 1)), 3)
    gam, pi = ds_m_step(r, np.eye(3)[y - 1])
    np.testing.assert_allclose(gam, np.tile(np.eye(3), (2, 1, 1)))
    np.testing.assert_allclose(pi, [0.25, 0.5, 0.25])


def test_m_step_uniform_q_gives_answer_frequencies(rng):
    r, _, _ = _random_instance(rng)
    gam, _ = ds_m_step(r, np.full((r.n_items, 3), 1 / 3))
    for m in range(r.m_learners):
        ans = r.entries[m][r.entries[m] > 0]
        freq = np.bincount(ans - 1, minlength=3) / ans.size
        for k in range(3):
            np.testing.assert_allclose(gam[m, :, k], freq)


def test_m_step_empty_column_uniform():
    # every item is certainly class 1, so no mass reaches column 2
    r = ResponseMatrix(np.array([[1, 2, 1]]), 2)
    gam, _ = ds_m_step(r, np.array([[1.0, 0.0]] * 3))
    np.testing.assert_allclose(gam[0, :, 1], [0.5, 0.5])


def test_em_fixed_point_terminates_quickly(rng):
    r, _, _ = _random_instance(rng, n=300)
    first = ds_em(r, np.tile(0.5 * np.eye(3) + 0.5 / 3, (4, 1, 1)), np.full(3, 1 / 3), max_iters=2000, tol=1e-14)
    again = ds_em(r, first.confusions, first.prior, tol=1e-6)
    assert again.iterations <= 2
    np.testing.assert_allclose(again.confusions, first.confusions, atol=1e-6)


def test_em_loglik_monotone_on_random_runs():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        r, _, _ = _random_instance(rng, n=200)
        gam0 = random_stochastic(rng, 3, r.m_learners)
        res = ds_em(r, gam0, rng.dirichlet(np.ones(3)), max_iters=50, tol=0)
        trace = np.array(res.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-9)
        assert res.loglik_trace[-1] == pytest.approx(observed_loglik(r, res.confusions, res.prior))


def test_map_labels_perfect_single_learner():
    y = np.array([3, 1, 2])
    r = ResponseMatrix(y[None, :], 3)
    np.testing.assert_array_equal(map_labels(r, np.eye(3)[None], np.full(3, 1 / 3)), y)


def test_map_labels_prior_dominance(rng):
    y = rng.integers(1, 3, 40)
    r = ResponseMatrix(y[None, :], 2)
    weak = np.array([[[0.51, 0.49], [0.49, 0.51]]])
    np.testing.assert_array_equal(map_labels(r, weak, [1 - 1e-9, 1e-9]), np.ones(40))


def test_map_labels_equals_argmax_of_e_step(rng):
    for _ in range(30):
        r, _, _ = _random_instance(rng, n=40)
        gam = random_stochastic(rng, 3, r.m_learners)
        pi = rng.dirichlet(np.ones(3))
        np.testing.assert_array_equal(map_labels(r, gam, pi), np.argmax(ds_e_step(r, gam, pi), axis=1) + 1)


def test_fuse_iid_perfect_learners():
    y = np.array([1, 2, 3, 3, 2, 1, 1])
    res = fuse_iid(ResponseMatrix(np.tile(y, (4, 1)), 3))
    np.testing.assert_array_equal(res.labels, y)
    np.testing.assert_allclose(res.posteriors.sum(axis=1), 1.0, atol=1e-8)


def test_fuse_iid_fix_prior(rng):
    r, _, _ = _random_instance(rng, n=100)
    res = fuse_iid(r, init="mv", fix_prior=True)
    np.testing.assert_allclose(res.prior, 1 / 3)


def test_em_with_mm_init_beats_mv_and_improves_with_n():
    k, m = 4, 10
    f_em, f_mv, err = [], [], {1000: [], 10_000: []}
    for n in (1000, 10_000):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            gam = synth.gen_confusions(m, k, rng)
            y = rng.integers(1, k + 1, n)
            r = synth.gen_responses(y, gam, 0.0, rng)
            fit = moment_match(r)
            res = ds_em(r, fit.confusions, fit.prior)
            err[n].append(metrics.confusion_error(gam, res.confusions))
            if n == 10_000:
                f_em.append(metrics.fscore(y, res.labels, k))
                f_mv.append(metrics.fscore(y, majority_vote(r).labels, k))
    assert np.median(f_em) >= np.median(f_mv)
    assert np.median(err[10_000]) <= np.median(err[1000])
