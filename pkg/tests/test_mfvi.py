import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from parachain import tensor as T
from parachain import crf, mfvi
from parachain.encoder import PotentialSet
from oracles import grad_by_fd, rel_err, scalar_mfvi_init, scalar_mfvi_run, scalar_mfvi_step


def _pot(unary, trans, trans2=None):
    return PotentialSet(
        np.asarray(unary, float),
        np.asarray(trans, float),
        None if trans2 is None else np.asarray(trans2, float),
    )


def _random_pot(rng, n, L, scale=2.0, second=False):
    return _pot(
        rng.uniform(-scale, scale, (n, L)),
        rng.uniform(-scale, scale, (L, L)),
        rng.uniform(-scale, scale, (L, L)) if second else None,
    )


def test_init_uniform():
    q = mfvi.mfvi_init(_pot(np.zeros((3, 4)), np.zeros((4, 4))))
    np.testing.assert_allclose(q, 0.25)


def test_init_closed_form():
    q = mfvi.mfvi_init(_pot([[1.0, 0.0]], np.zeros((2, 2))))
    expected = math.exp(1) / (math.exp(1) + 1)
    assert abs(q[0, 0] - expected) < 1e-5
    assert abs(q[0, 1] - (1 - expected)) < 1e-5


def test_init_rows_normalized():
    rng = np.random.default_rng(0)
    q = mfvi.mfvi_init(_random_pot(rng, 7, 5))
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_zero_transitions_step_is_fixed_point():
    rng = np.random.default_rng(1)
    unary = rng.uniform(-2, 2, (6, 3))
    pot = _pot(unary, np.zeros((3, 3)))
    q = mfvi.mfvi_init(pot)
    for _ in range(4):
        q_next = mfvi.mfvi_step_first_order(q, pot)
        assert np.array_equal(q_next, mfvi.mfvi_init(pot))
        q = q_next


def test_single_position_ignores_transitions():
    rng = np.random.default_rng(2)
    pot = _random_pot(rng, 1, 4)
    q = mfvi.mfvi_step_first_order(mfvi.mfvi_init(pot), pot)
    assert np.array_equal(q, mfvi.mfvi_init(pot))


def test_first_order_step_matches_scalar_loop():
    rng = np.random.default_rng(3)
    for _ in range(40):
        n, L = int(rng.integers(1, 9)), int(rng.integers(2, 6))
        pot = _random_pot(rng, n, L)
        q0 = mfvi.mfvi_init(pot)
        mine = mfvi.mfvi_step_first_order(q0, pot)
        ref = np.asarray(
            scalar_mfvi_step(
                [list(r) for r in q0],
                pot.unary_values.tolist(),
                pot.trans_values.tolist(),
            )
        )
        assert np.abs(mine - ref).max() < 1e-12


def test_second_order_step_matches_scalar_loop():
    rng = np.random.default_rng(4)
    for _ in range(40):
        n, L = int(rng.integers(1, 9)), int(rng.integers(2, 6))
        pot = _random_pot(rng, n, L, second=True)
        q0 = mfvi.mfvi_init(pot)
        mine = mfvi.mfvi_step_second_order(q0, pot)
        ref = np.asarray(
            scalar_mfvi_step(
                [list(r) for r in q0],
                pot.unary_values.tolist(),
                pot.trans_values.tolist(),
                pot.trans2_values.tolist(),
            )
        )
        assert np.abs(mine - ref).max() < 1e-12


def test_second_order_degenerates_bitwise_when_u2_is_zero():
    rng = np.random.default_rng(5)
    for n in (1, 2, 3, 7):
        pot2 = _random_pot(rng, n, 4, second=True)
        pot2.trans2 = np.zeros((4, 4))
        pot1 = _pot(pot2.unary_values, pot2.trans_values)
        q0 = mfvi.mfvi_init(pot2)
        a = mfvi.mfvi_step_second_order(q0, pot2)
        b = mfvi.mfvi_step_first_order(q0, pot1)
        assert np.array_equal(a, b)


def test_short_sentence_second_order_equals_first_order():
    rng = np.random.default_rng(6)
    pot = _random_pot(rng, 2, 3, second=True)  # nonzero U2, but no pairs 2 apart
    q0 = mfvi.mfvi_init(pot)
    a = mfvi.mfvi_step_second_order(q0, pot)
    b = mfvi.mfvi_step_first_order(q0, _pot(pot.unary_values, pot.trans_values))
    assert np.array_equal(a, b)


def test_decode_zero_tables_is_argmax_of_unary():
    rng = np.random.default_rng(7)
    unary = rng.uniform(-2, 2, (6, 4))
    pot = _pot(unary, np.zeros((4, 4)), np.zeros((4, 4)))
    for order in ("first", "second_factorized"):
        path = mfvi.ain_decode(pot, mfvi.MfviConfig(order=order))
        assert path == [int(y) for y in unary.argmax(axis=1)]


def test_attractive_transitions_smooth_out_a_dissenter():
    n, L = 5, 2
    unary = np.tile([2.0, 0.0], (n, 1))
    unary[2] = [0.0, 0.5]  # one position mildly prefers label 1
    trans = 10.0 * np.eye(L)
    pot = _pot(unary, trans)
    cfg = mfvi.MfviConfig(iterations=3)
    path = mfvi.ain_decode(pot, cfg)
    assert path == [0] * n
    # the scalar-loop simulation confirms the same smoothing
    ref = scalar_mfvi_run(unary.tolist(), trans.tolist(), 3)
    assert [max(range(L), key=r.__getitem__) for r in ref] == [0] * n


def test_default_iteration_count_is_three():
    assert mfvi.MfviConfig().iterations == 3


def test_rows_stay_normalized_and_positive_through_iterations():
    rng = np.random.default_rng(8)
    pot = _random_pot(rng, 9, 5, second=True)
    q = mfvi.mfvi_init(pot)
    for _ in range(4):
        q = mfvi.mfvi_step_second_order(q, pot)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-10)
        assert (q > 0).all()


def test_unary_row_shift_leaves_q_unchanged():
    rng = np.random.default_rng(9)
    pot = _random_pot(rng, 6, 4)
    shifted = pot.unary_values.copy()
    shifted[3] += 7.5
    pot_shifted = _pot(shifted, pot.trans_values)
    q_a = mfvi.mfvi_init(pot)
    q_b = mfvi.mfvi_init(pot_shifted)
    for _ in range(3):
        q_a = mfvi.mfvi_step_first_order(q_a, pot)
        q_b = mfvi.mfvi_step_first_order(q_b, pot_shifted)
        assert np.abs(q_a - q_b).max() < 1e-12


def test_step_is_bit_identical_for_any_schedule_and_workers():
    rng = np.random.default_rng(10)
    pot = _random_pot(rng, 33, 5, second=True)
    q0 = mfvi.mfvi_init(pot)
    base = mfvi.mfvi_step_second_order(q0, pot, workers=1)

    for workers in (2, 8):
        assert np.array_equal(base, mfvi.mfvi_step_second_order(q0, pot, workers=workers))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            threaded = mfvi.mfvi_step_second_order(q0, pot, workers=workers, executor=ex)
        assert np.array_equal(base, threaded)

    # randomized position orderings: singleton chunks in random order, and
    # random contiguous-free partitions
    for trial in range(5):
        perm = rng.permutation(33)
        schedule = [np.array([p]) for p in perm]
        assert np.array_equal(
            base, mfvi.mfvi_step_second_order(q0, pot, schedule=schedule)
        )
        cuts = np.sort(rng.choice(np.arange(1, 33), size=4, replace=False))
        parts = np.split(perm, cuts)
        assert np.array_equal(
            base, mfvi.mfvi_step_second_order(q0, pot, schedule=parts)
        )


def test_graph_path_agrees_with_array_path():
    rng = np.random.default_rng(11)
    for order, second in (("first", False), ("second_factorized", True)):
        pot = _random_pot(rng, 7, 4, second=True)
        cfg = mfvi.MfviConfig(iterations=3, order=order)
        arr = mfvi.mfvi_marginals(pot, cfg)
        qs = mfvi.mfvi_q_graph(pot, cfg)
        assert len(qs) == 4
        assert np.abs(qs[-1].value - arr).max() < 1e-12


def test_nll_maxent_degeneracy_and_uniform_value():
    rng = np.random.default_rng(12)
    unary = rng.uniform(-2, 2, (5, 3))
    pot = _pot(unary, np.zeros((3, 3)), np.zeros((3, 3)))
    gold = [0, 2, 1, 0, 1]
    probs = np.exp(unary - unary.max(1, keepdims=True))
    probs /= probs.sum(1, keepdims=True)
    cross_entropy = -np.log(probs[np.arange(5), gold]).sum()
    for order in ("first", "second_factorized"):
        nll = T.scalar_value(mfvi.ain_nll(pot, mfvi.MfviConfig(order=order), gold))
        assert abs(nll - cross_entropy) < 1e-12
    uniform = _pot(np.zeros((5, 3)), np.zeros((3, 3)))
    nll = T.scalar_value(mfvi.ain_nll(uniform, mfvi.MfviConfig(), gold))
    assert abs(nll - 5 * math.log(3)) < 1e-12


def test_nll_rejects_bad_gold():
    pot = _pot(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="out of range"):
        mfvi.ain_nll(pot, mfvi.MfviConfig(), [0, 5])
    with pytest.raises(ValueError, match="does not match"):
        mfvi.ain_nll(pot, mfvi.MfviConfig(), [0])


def test_nll_gradient_wrt_transitions_matches_fd():
    rng = np.random.default_rng(13)
    n, L = 6, 3
    unary = rng.uniform(-2, 2, (n, L))
    trans = rng.uniform(-1, 1, (L, L))
    trans2 = rng.uniform(-1, 1, (L, L))
    gold = [int(y) for y in rng.integers(0, L, n)]
    for order in ("first", "second_factorized"):
        cfg = mfvi.MfviConfig(iterations=3, order=order)
        u_leaf, t_leaf, t2_leaf = T.leaf(unary.copy()), T.leaf(trans.copy()), T.leaf(trans2.copy())
        loss = mfvi.ain_nll(PotentialSet(u_leaf, t_leaf, t2_leaf), cfg, gold)
        T.backward(loss)

        u, t, t2 = unary.copy(), trans.copy(), trans2.copy()

        def value():
            return T.scalar_value(mfvi.ain_nll(PotentialSet(u, t, t2), cfg, gold))

        for _ in range(6):
            idx = (int(rng.integers(0, L)), int(rng.integers(0, L)))
            fd = grad_by_fd(value, t, idx)
            assert rel_err(t_leaf.grad[idx], fd) < 1e-4
        if order == "second_factorized":
            for _ in range(6):
                idx = (int(rng.integers(0, L)), int(rng.integers(0, L)))
                fd = grad_by_fd(value, t2, idx)
                assert rel_err(t2_leaf.grad[idx], fd) < 1e-4


def test_decode_agreement_with_viterbi_regression_stat():
    # approximation-quality regression statistic on moderate potentials
    rng = np.random.default_rng(14)
    agree = total = 0
    for _ in range(200):
        n, L = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        pot = _random_pot(rng, n, L, scale=2.0)
        a = mfvi.ain_decode(pot, mfvi.MfviConfig())
        b = crf.viterbi(pot).path
        agree += sum(x == y for x, y in zip(a, b))
        total += n
    assert agree / total >= 0.90
