"""Mean-field inference for the linear-chain CRF, unrolled and parallel.

The per-position label distributions Q are refined for a fixed number of
iterations. Every update reads only the previous iteration's Q (Jacobi
style), so all positions can be computed independently, in any order, or
on worker threads, with bit-identical results. Messages are expectations
of transition scores under the neighbor's current distribution:

    left(i)[y]  = sum_y' Q_prev[i-1][y'] * U[y'][y]
    right(i)[y] = sum_y' Q_prev[i+1][y'] * U[y][y']

The factorized second-order variant adds the same messages at distance
two using the U2 table. Out-of-range neighbors contribute nothing.

Message sums are accumulated over the source label in a fixed order, so
the result is independent of how positions are chunked across workers;
this is what makes the determinism guarantee hold to the last bit.

Two twins of the update exist: a plain-array path used for decoding and
benchmarks (no gradient bookkeeping), and a graph path used for training,
which unrolls all iterations into the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import PotentialSet

MFVI_ORDERS = ("first", "second_factorized")


@dataclass(frozen=True)
class MfviConfig:
    iterations: int = 3
    order: str = "first"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.order not in MFVI_ORDERS:
            raise ValueError(f"unknown mean-field order {self.order!r}")


def _softmax_rows(a):
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    e /= e.sum(axis=1, keepdims=True)
    return e


def _expect(q_block, mat):
    """Rows of ``q_block @ mat`` with a fixed per-row reduction order.

    ``einsum`` without contraction optimization reduces over the source
    label axis element by element, so the bits of each output row never
    depend on how rows were grouped into chunks. BLAS matmul does not
    guarantee that (its kernel choice varies with the row count), so it
    must not be used here.
    """
    return np.einsum("ij,jk->ik", q_block, mat, optimize=False)


def _add_messages(scores, q_prev, src, mat):
    n = q_prev.shape[0]
    valid = (src >= 0) & (src < n)
    if not valid.any():
        return
    msg = _expect(q_prev[src[valid]], mat)
    scores[valid] += msg


def _step_chunk(out, q_prev, unary, tables, idx):
    """Compute Q_next rows ``idx`` from Q_prev; writes disjoint slices."""
    trans, trans_t, trans2, trans2_t = tables
    scores = unary[idx]  # fancy indexing copies, safe to mutate
    _add_messages(scores, q_prev, idx - 1, trans)
    _add_messages(scores, q_prev, idx + 1, trans_t)
    if trans2 is not None:
        _add_messages(scores, q_prev, idx - 2, trans2)
        _add_messages(scores, q_prev, idx + 2, trans2_t)
    out[idx] = _softmax_rows(scores)


def _make_schedule(n, workers):
    if workers <= 1:
        return [np.arange(n)]
    return [c for c in np.array_split(np.arange(n), workers) if len(c)]


def _tables(trans, trans2):
    trans = np.ascontiguousarray(trans)
    trans2 = None if trans2 is None else np.ascontiguousarray(trans2)
    return (
        trans,
        np.ascontiguousarray(trans.T),
        trans2,
        None if trans2 is None else np.ascontiguousarray(trans2.T),
    )


def mfvi_init(pot: PotentialSet) -> np.ndarray:
    """Q0: independently normalized unary scores."""
    return _softmax_rows(pot.unary_values)


def _step_values(q_prev, unary, tables, schedule=None, executor=None):
    n = q_prev.shape[0]
    if schedule is None:
        schedule = [np.arange(n)]
    out = np.empty_like(q_prev)
    if executor is not None and len(schedule) > 1:
        futures = [
            executor.submit(_step_chunk, out, q_prev, unary, tables, np.asarray(idx))
            for idx in schedule
        ]
        for f in futures:
            f.result()
    else:
        for idx in schedule:
            _step_chunk(out, q_prev, unary, tables, np.asarray(idx))
    return out


def mfvi_step_first_order(q_prev, pot: PotentialSet, workers=1, executor=None, schedule=None):
    """One synchronous first-order update of all positions."""
    if schedule is None:
        schedule = _make_schedule(pot.n, workers)
    tables = _tables(pot.trans_values, None)
    return _step_values(np.asarray(q_prev), pot.unary_values, tables, schedule, executor)


def mfvi_step_second_order(q_prev, pot: PotentialSet, workers=1, executor=None, schedule=None):
    """One synchronous update with distance-1 and distance-2 messages."""
    if pot.trans2_values is None:
        raise ValueError("second-order step requires a second transition table")
    if schedule is None:
        schedule = _make_schedule(pot.n, workers)
    tables = _tables(pot.trans_values, pot.trans2_values)
    return _step_values(np.asarray(q_prev), pot.unary_values, tables, schedule, executor)


def mfvi_marginals(pot: PotentialSet, cfg: MfviConfig, workers=1, executor=None):
    """Q after the configured number of iterations (array path)."""
    second = cfg.order == "second_factorized"
    trans2 = pot.trans2_values if second else None
    if second and trans2 is None:
        raise ValueError("second-order decoding requires a second transition table")
    tables = _tables(pot.trans_values, trans2)
    schedule = _make_schedule(pot.n, workers)
    unary = pot.unary_values
    q = _softmax_rows(unary)
    for _ in range(cfg.iterations):
        q = _step_values(q, unary, tables, schedule, executor)
    return q


def ain_decode(pot: PotentialSet, cfg: MfviConfig, workers=1, executor=None):
    """Decode by per-position argmax of the final Q (ties to smaller id)."""
    q = mfvi_marginals(pot, cfg, workers=workers, executor=executor)
    return [int(y) for y in np.argmax(q, axis=1)]


# --- unrolled training graph ----------------------------------------------


def mfvi_q_graph(pot: PotentialSet, cfg: MfviConfig):
    """All Q iterates as graph nodes: [Q0, Q1, ..., QM]."""
    unary = pot.unary_node
    n, L = pot.unary_values.shape
    second = cfg.order == "second_factorized"
    trans = pot.trans_node
    trans_t = T.transpose(trans) if n > 1 else None
    trans2 = trans2_t = None
    if second and n > 2:
        trans2 = pot.trans2_node
        trans2_t = T.transpose(trans2)
    zero1 = T.constant(np.zeros((1, L)))
    zero2 = T.constant(np.zeros((2, L)))
    inner = list(range(n))

    q = T.row_softmax(unary)
    qs = [q]
    for _ in range(cfg.iterations):
        scores = unary
        if n > 1:
            left = T.concat([zero1, T.matmul(T.gather_rows(q, inner[:-1]), trans)])
            right = T.concat([T.matmul(T.gather_rows(q, inner[1:]), trans_t), zero1])
            scores = T.add(T.add(scores, left), right)
        if trans2 is not None:
            left2 = T.concat([zero2, T.matmul(T.gather_rows(q, inner[:-2]), trans2)])
            right2 = T.concat([T.matmul(T.gather_rows(q, inner[2:]), trans2_t), zero2])
            scores = T.add(T.add(scores, left2), right2)
        q = T.row_softmax(scores)
        qs.append(q)
    return qs


def ain_nll(pot: PotentialSet, cfg: MfviConfig, gold) -> T.GraphNode:
    """Negative log-probability of the gold labels under the final Q."""
    n, L = pot.unary_values.shape
    gold = list(gold)
    if len(gold) != n:
        raise ValueError(f"gold length {len(gold)} does not match {n} positions")
    for i, y in enumerate(gold):
        if not 0 <= y < L:
            raise ValueError(f"gold label {y} at position {i} is out of range")
    q_final = mfvi_q_graph(pot, cfg)[-1]
    return T.mul_scalar(T.tsum(T.log(T.pick(q_final, list(range(n)), gold))), -1.0)
