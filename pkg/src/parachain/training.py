"""End-to-end SGD training for any decoder variant.

Plain SGD: theta <- theta - lr * (mean batch gradient). The learning rate
anneals by a fixed factor whenever the dev metric has not improved for a
set number of epochs, and training stops at the epoch budget or once the
rate decays below 1e-4. Loss per sentence is a sum over tokens; batches
average over sentences.

Single-worker runs accumulate per-sentence gradients into one set of
parameter leaves in sentence order and are bit-reproducible for a fixed
seed. Worker threads build independent graphs and merge their gradients
in sentence order afterwards; only the reduction grouping differs, which
moves dev metrics by rounding noise at most.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import LabelScheme
from .crf import crf_nll
from .decode import decode_corpus
from .encoder import ModelBundle, param_graph_nodes, potentials_graph
from .evaluation import span_f1, token_accuracy
from .mfvi import MfviConfig, ain_nll

MIN_LEARNING_RATE = 1e-4


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or invalid configuration)."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    anneal_factor: float = 0.5
    patience_epochs: int = 10
    max_epochs: int = 100
    decoder: str = "crf"
    mfvi: MfviConfig = field(default_factory=MfviConfig)
    seed: int = 0
    workers: int = 1
    unk_dropout: float = 0.5
    dev_metric: str = "auto"  # auto | span_f1 | accuracy

    def __post_init__(self):
        # 0 is allowed so a zero step can be exercised; train() stops once
        # the rate falls below MIN_LEARNING_RATE anyway.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.anneal_factor < 1:
            raise ValueError("anneal_factor must lie in (0, 1)")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.dev_metric not in ("auto", "span_f1", "accuracy"):
            raise ValueError(f"unknown dev metric {self.dev_metric!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_metric: float
    learning_rate: float
    seconds: float


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    best_epoch: int = -1

    def to_kv_lines(self) -> str:
        lines = [
            f"epoch={e.epoch} loss={e.train_loss:.6f} dev={e.dev_metric:.6f}"
            f" lr={e.learning_rate:.6g} seconds={e.seconds:.3f}"
            for e in self.entries
        ]
        lines.append(f"best_epoch={self.best_epoch}")
        return "\n".join(lines)


def loss_for(decoder, pot, gold, mfvi_cfg=None) -> T.GraphNode:
    """Scalar training loss node for one sentence under a decoder kind."""
    if decoder == "maxent":
        n = pot.unary_values.shape[0]
        gold = list(gold)
        probs = T.row_softmax(pot.unary_node)
        return T.mul_scalar(T.tsum(T.log(T.pick(probs, list(range(n)), gold))), -1.0)
    if decoder == "crf":
        return crf_nll(pot, gold)
    if decoder in ("ain1", "ain2"):
        cfg = mfvi_cfg or MfviConfig(
            order="second_factorized" if decoder == "ain2" else "first"
        )
        return ain_nll(pot, cfg, gold)
    raise ValueError(f"unknown decoder kind {decoder!r}")


def _sentence_grads(bundle, token_ids, gold, cfg, nodes=None):
    """Loss and parameter gradients for one sentence.

    With shared ``nodes`` the gradients accumulate in place across calls
    (single-writer batches); otherwise fresh leaves are made so worker
    threads stay independent.
    """
    fresh = nodes is None
    pot, nodes = potentials_graph(token_ids, bundle, nodes)
    loss = loss_for(cfg.decoder, pot, gold, cfg.mfvi)
    T.backward(loss)
    if not fresh:
        return T.scalar_value(loss), None
    grads = {
        name: nodes[name].grad
        for name in bundle.trainable_names()
        if nodes[name].grad is not None
    }
    return T.scalar_value(loss), grads


def _masked_ids(sent, bundle, mask):
    if mask is None:
        return sent.token_ids
    return [0 if drop else tid for tid, drop in zip(sent.token_ids, mask)]


def sgd_epoch(bundle: ModelBundle, data, cfg: TrainConfig, rng, executor=None):
    """One pass of shuffled mini-batch SGD; returns the mean sentence loss.

    Singleton training words are replaced by <unk> with probability
    ``cfg.unk_dropout`` per occurrence; the masks are drawn up front from
    the epoch rng so worker threads cannot perturb the stream.
    """
    if not data:
        raise TrainingError("cannot run an epoch on empty data")
    order = rng.permutation(len(data))
    counts = bundle.word_vocab.counts
    masks = []
    for si in order:
        sent = data[si]
        singleton = [counts.get(tok, 0) == 1 for tok in sent.tokens]
        if any(singleton) and cfg.unk_dropout > 0:
            draws = rng.random(len(sent.tokens))
            masks.append([s and d < cfg.unk_dropout for s, d in zip(singleton, draws)])
        else:
            masks.append(None)

    def one(k, nodes=None):
        si = order[k]
        sent = data[si]
        try:
            return _sentence_grads(
                bundle, _masked_ids(sent, bundle, masks[k]), sent.gold_labels, cfg, nodes
            )
        except T.NonFiniteError as exc:
            raise TrainingError(f"non-finite loss at sentence index {si}: {exc}") from exc

    parallel = executor is not None and cfg.workers > 1
    total_loss = 0.0
    for start in range(0, len(order), cfg.batch_size):
        batch = range(start, min(start + cfg.batch_size, len(order)))
        if parallel:
            agg = {}
            for loss_value, grads in executor.map(one, batch):  # sentence order
                total_loss += loss_value
                for name, g in grads.items():
                    if name in agg:
                        agg[name] += g
                    else:
                        agg[name] = g.copy()
        else:
            nodes = param_graph_nodes(bundle)
            for k in batch:
                loss_value, _ = one(k, nodes)
                total_loss += loss_value
            agg = {
                name: nodes[name].grad
                for name in bundle.trainable_names()
                if nodes[name].grad is not None
            }
        scale = cfg.learning_rate / len(batch)
        for name, g in agg.items():
            bundle.params[name] -= scale * g
    return total_loss / len(order)


def evaluate_dev(bundle: ModelBundle, dev_data, metric="auto"):
    """Dev metric: span F1 for a BIOES label scheme, token accuracy else.

    ``metric`` overrides the scheme-based choice for tasks scored the
    other way (POS-style corpora with span-shaped label names, say).
    """
    if metric == "auto":
        scheme = LabelScheme.detect(bundle.label_vocab.id_to_label)
        metric = "span_f1" if scheme.kind == "bioes" else "accuracy"
    preds = decode_corpus(bundle, dev_data)
    if metric == "span_f1":
        return span_f1(dev_data, preds).f1
    return token_accuracy(dev_data, preds).accuracy


def train(bundle: ModelBundle, train_data, dev_data, cfg: TrainConfig):
    """Full training run; returns (best model, log)."""
    if not dev_data:
        raise TrainingError("dev data must be non-empty")
    if bundle.decoder != cfg.decoder:
        raise TrainingError(
            f"bundle decoder {bundle.decoder!r} disagrees with config {cfg.decoder!r}"
        )
    rng = np.random.default_rng(cfg.seed)
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    log = TrainLog()
    best_metric = -np.inf
    best_bundle = bundle.copy()
    lr = cfg.learning_rate
    stale = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            epoch_cfg = TrainConfig(**{**cfg.__dict__, "learning_rate": lr})
            mean_loss = sgd_epoch(bundle, train_data, epoch_cfg, rng, executor)
            metric = evaluate_dev(bundle, dev_data, cfg.dev_metric)
            log.entries.append(
                EpochStats(epoch, mean_loss, metric, lr, time.perf_counter() - t0)
            )
            if metric > best_metric:
                best_metric = metric
                best_bundle = bundle.copy()
                log.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience_epochs:
                    lr *= cfg.anneal_factor
                    stale = 0
            if lr < MIN_LEARNING_RATE:
                break
    finally:
        if executor is not None:
            executor.shutdown()
    return best_bundle, log
