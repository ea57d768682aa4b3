"""Exact linear-chain CRF inference: partition, marginals, Viterbi, NLL.

The chain has unary scores at each position and one shared transition
table between adjacent positions; there are no begin or end transition
rows. All recursions run in log space with per-step max subtraction, so
potentials up to |50| are safe for sequences of a thousand tokens.

``log_partition`` and ``crf_nll`` build autodiff graphs (they are the
training objectives); ``viterbi`` and ``marginals`` work on plain arrays
since decoding never needs gradients. Within a sentence the recursions
are inherently sequential over positions; across sentences everything is
pure and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import PotentialSet


@dataclass
class ViterbiResult:
    path: list
    score: float


@dataclass
class MarginalResult:
    unary_marginals: np.ndarray  # (n, L)
    log_partition: float


def _logsumexp(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def log_partition(pot: PotentialSet) -> T.GraphNode:
    """log of the sum over all label sequences of exp(total potential).

    Returns a (1, 1) graph node connected to the unary scores and the
    transition table, suitable as a CRF training objective term.
    """
    unary = pot.unary_node
    n = pot.n
    alpha = T.gather_rows(unary, [0])  # (1, L)
    if n > 1:
        trans_t = T.transpose(pot.trans_node)
        for i in range(1, n):
            # scores[y, y'] = alpha[y'] + trans[y', y]; reduce over y'
            scores = T.add(trans_t, alpha)
            alpha = T.add(T.gather_rows(unary, [i]), T.transpose(T.logsumexp_rows(scores)))
    return T.logsumexp_rows(alpha)


def viterbi(pot: PotentialSet) -> ViterbiResult:
    """Highest-scoring label sequence; ties fall to the smaller label id."""
    unary = pot.unary_values
    trans = pot.trans_values
    n, L = unary.shape
    back = np.zeros((n, L), dtype=np.intp)
    delta = unary[0].copy()
    for i in range(1, n):
        scores = delta[:, None] + trans
        best = np.argmax(scores, axis=0)
        back[i] = best
        delta = unary[i] + scores[best, np.arange(L)]
    last = int(np.argmax(delta))
    path = [0] * n
    path[n - 1] = last
    for i in range(n - 1, 0, -1):
        last = int(back[i][last])
        path[i - 1] = last
    return ViterbiResult(path=path, score=float(delta[path[n - 1]]))


def path_score(pot: PotentialSet, path) -> float:
    """Re-evaluate a label sequence's total potential."""
    unary = pot.unary_values
    trans = pot.trans_values
    idx = np.asarray(path, dtype=np.intp)
    score = float(unary[np.arange(len(idx)), idx].sum())
    if len(idx) > 1:
        score += float(trans[idx[:-1], idx[1:]].sum())
    return score


def marginals(pot: PotentialSet) -> MarginalResult:
    """Per-position posterior label distributions via forward-backward."""
    unary = pot.unary_values
    trans = pot.trans_values
    n, L = unary.shape
    la = np.empty((n, L))
    la[0] = unary[0]
    for i in range(1, n):
        la[i] = unary[i] + _logsumexp(la[i - 1][:, None] + trans, axis=0)
    lb = np.zeros((n, L))
    for i in range(n - 2, -1, -1):
        lb[i] = _logsumexp(trans + (unary[i + 1] + lb[i + 1])[None, :], axis=1)
    log_z = float(_logsumexp(la[n - 1], axis=0))
    probs = np.exp(la + lb - log_z)
    probs /= probs.sum(axis=1, keepdims=True)
    return MarginalResult(unary_marginals=probs, log_partition=log_z)


def crf_nll(pot: PotentialSet, gold) -> T.GraphNode:
    """Negative log-likelihood of the gold sequence under the CRF."""
    n, L = pot.unary_values.shape
    gold = list(gold)
    if len(gold) != n:
        raise ValueError(f"gold length {len(gold)} does not match {n} positions")
    for i, y in enumerate(gold):
        if not 0 <= y < L:
            raise ValueError(f"gold label {y} at position {i} is out of range")
    unary = pot.unary_node
    gold_unary = T.tsum(T.pick(unary, list(range(n)), gold))
    if n > 1:
        gold_trans = T.tsum(T.pick(pot.trans_node, gold[:-1], gold[1:]))
        gold_score = T.add(gold_unary, gold_trans)
    else:
        gold_score = gold_unary
    return T.add(log_partition(pot), T.mul_scalar(gold_score, -1.0))
