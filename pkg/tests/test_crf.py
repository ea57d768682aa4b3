import math

import numpy as np
import pytest

from parachain import tensor as T
from parachain import crf
from parachain.encoder import PotentialSet
from oracles import (
    enum_log_partition,
    enum_marginals,
    enum_sequence_probability,
    enum_scores,
    enum_viterbi,
    grad_by_fd,
    rel_err,
)


def _pot(unary, trans):
    return PotentialSet(np.asarray(unary, float), np.asarray(trans, float))


def _random_pot(rng, n, L, scale=2.0):
    return _pot(rng.uniform(-scale, scale, (n, L)), rng.uniform(-scale, scale, (L, L)))


def test_single_position_uniform_is_log2():
    z = T.scalar_value(crf.log_partition(_pot([[0.0, 0.0]], np.zeros((2, 2)))))
    assert abs(z - math.log(2)) < 1e-12


def test_two_position_partition_matches_enumeration():
    pot = _pot([[1.0, 0.0], [0.0, 1.0]], np.zeros((2, 2)))
    expected = math.log(math.e + math.e**2 + 1 + math.e)
    assert abs(T.scalar_value(crf.log_partition(pot)) - expected) < 1e-9
    assert abs(enum_log_partition(pot.unary_values, pot.trans_values) - expected) < 1e-12


def test_partition_matches_enumeration_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n, L = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        pot = _random_pot(rng, n, L)
        mine = T.scalar_value(crf.log_partition(pot))
        truth = enum_log_partition(pot.unary_values, pot.trans_values)
        assert abs(mine - truth) < 1e-9


def test_viterbi_decouples_when_transitions_are_zero():
    rng = np.random.default_rng(1)
    unary = rng.uniform(-2, 2, (6, 4))
    res = crf.viterbi(_pot(unary, np.zeros((4, 4))))
    assert res.path == [int(y) for y in unary.argmax(axis=1)]


def test_viterbi_two_positions():
    res = crf.viterbi(_pot([[1.0, 0.0], [0.0, 1.0]], np.zeros((2, 2))))
    assert res.path == [0, 1]
    assert abs(res.score - 2.0) < 1e-12


def test_viterbi_matches_enumeration_and_rescores():
    rng = np.random.default_rng(2)
    for _ in range(60):
        n, L = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        pot = _random_pot(rng, n, L)
        res = crf.viterbi(pot)
        best, _ = enum_viterbi(pot.unary_values, pot.trans_values)
        assert abs(res.score - best) < 1e-9
        assert abs(crf.path_score(pot, res.path) - res.score) < 1e-9


def test_viterbi_tie_break_prefers_smaller_labels():
    # all-zero potentials: every path ties; the result must be all label 0
    res = crf.viterbi(_pot(np.zeros((5, 3)), np.zeros((3, 3))))
    assert res.path == [0] * 5


def test_marginals_decoupled_and_single_position():
    rng = np.random.default_rng(3)
    unary = rng.uniform(-2, 2, (4, 3))
    softmax = np.exp(unary - unary.max(1, keepdims=True))
    softmax /= softmax.sum(1, keepdims=True)
    res = crf.marginals(_pot(unary, np.zeros((3, 3))))
    np.testing.assert_allclose(res.unary_marginals, softmax, atol=1e-12)
    res1 = crf.marginals(_pot(unary[:1], np.zeros((3, 3))))
    np.testing.assert_allclose(res1.unary_marginals, softmax[:1], atol=1e-12)


def test_marginals_match_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(60):
        n, L = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        pot = _random_pot(rng, n, L)
        res = crf.marginals(pot)
        truth = enum_marginals(pot.unary_values, pot.trans_values)
        assert np.abs(res.unary_marginals - truth).max() < 1e-9
        assert np.abs(res.unary_marginals.sum(axis=1) - 1).max() < 1e-10


def test_nll_is_near_zero_when_gold_dominates():
    unary = np.full((4, 3), -50.0)
    gold = [0, 2, 1, 1]
    for i, y in enumerate(gold):
        unary[i, y] = 50.0
    pot = _pot(unary, np.zeros((3, 3)))
    assert crf.viterbi(pot).path == gold
    assert T.scalar_value(crf.crf_nll(pot, gold)) < 1e-6


def test_nll_uniform_is_n_log_L():
    pot = _pot(np.zeros((5, 3)), np.zeros((3, 3)))
    nll = T.scalar_value(crf.crf_nll(pot, [1, 0, 2, 1, 0]))
    assert abs(nll - 5 * math.log(3)) < 1e-12


def test_nll_matches_enumerated_probability():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n, L = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        pot = _random_pot(rng, n, L)
        gold = [int(y) for y in rng.integers(0, L, n)]
        nll = T.scalar_value(crf.crf_nll(pot, gold))
        prob = enum_sequence_probability(pot.unary_values, pot.trans_values, gold)
        assert abs(nll + math.log(prob)) < 1e-9


def test_nll_rejects_out_of_range_labels():
    pot = _pot(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="out of range"):
        crf.crf_nll(pot, [0, 3])


def test_gold_probabilities_sum_to_one_on_small_instances():
    rng = np.random.default_rng(6)
    for _ in range(10):
        n, L = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        pot = _random_pot(rng, n, L)
        log_z = T.scalar_value(crf.log_partition(pot))
        seqs, scores = enum_scores(pot.unary_values, pot.trans_values)
        probs = np.exp(scores - log_z)
        assert (probs > 0).all() and (probs <= 1 + 1e-12).all()
        assert abs(probs.sum() - 1.0) < 1e-9


def test_viterbi_beats_random_paths():
    rng = np.random.default_rng(7)
    pot = _random_pot(rng, 8, 4)
    best = crf.viterbi(pot)
    for _ in range(100):
        other = [int(y) for y in rng.integers(0, 4, 8)]
        assert crf.path_score(pot, other) <= best.score + 1e-12


def test_forward_recursion_survives_large_potentials_long_sequences():
    rng = np.random.default_rng(8)
    n, L = 1000, 5
    pot = _pot(rng.uniform(-50, 50, (n, L)), rng.uniform(-50, 50, (L, L)))
    z = T.scalar_value(crf.log_partition(pot))
    assert np.isfinite(z)
    res = crf.marginals(pot)
    assert np.isfinite(res.log_partition)
    assert np.abs(res.unary_marginals.sum(axis=1) - 1).max() < 1e-10
    assert abs(z - res.log_partition) < 1e-6 * max(1.0, abs(z))


def test_nll_gradient_is_marginal_minus_onehot():
    # the moment-matching identity ties autodiff to forward-backward
    rng = np.random.default_rng(9)
    for _ in range(5):
        n, L = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        unary_leaf = T.leaf(rng.uniform(-2, 2, (n, L)))
        trans_leaf = T.leaf(rng.uniform(-1, 1, (L, L)))
        pot = PotentialSet(unary_leaf, trans_leaf)
        gold = [int(y) for y in rng.integers(0, L, n)]
        loss = crf.crf_nll(pot, gold)
        T.backward(loss)
        marg = crf.marginals(
            PotentialSet(unary_leaf.value.copy(), trans_leaf.value.copy())
        ).unary_marginals
        onehot = np.zeros((n, L))
        onehot[np.arange(n), gold] = 1.0
        assert np.abs(unary_leaf.grad - (marg - onehot)).max() < 1e-8


def test_nll_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    n, L = 5, 3
    unary = rng.uniform(-2, 2, (n, L))
    trans = rng.uniform(-1, 1, (L, L))
    gold = [int(y) for y in rng.integers(0, L, n)]

    unary_leaf, trans_leaf = T.leaf(unary), T.leaf(trans)
    loss = crf.crf_nll(PotentialSet(unary_leaf, trans_leaf), gold)
    T.backward(loss)

    def loss_value():
        return T.scalar_value(crf.crf_nll(PotentialSet(unary.copy(), trans.copy()), gold))

    for _ in range(10):
        idx = (int(rng.integers(0, L)), int(rng.integers(0, L)))
        fd = grad_by_fd(loss_value, trans, idx)
        assert rel_err(trans_leaf.grad[idx], fd) < 1e-5
        idx = (int(rng.integers(0, n)), int(rng.integers(0, L)))
        fd = grad_by_fd(loss_value, unary, idx)
        assert rel_err(unary_leaf.grad[idx], fd) < 1e-5
