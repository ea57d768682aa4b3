"""Decoding speed benchmark: exact Viterbi versus the mean-field decoder.

Methodology: batches of randomly generated sentences at fixed lengths are
decoded one by one (sentence-level parallelism stays off so the measured
effect is the per-sentence critical path, which is what separates the
sequential Viterbi recursion from the position-parallel mean-field sweep).
In decoder_only mode the potentials are precomputed outside the timed
region; full_model mode times encoding plus decoding. A warm-up pass runs
before any clock starts, and the median over repetitions is reported.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .corpus import LabelVocab, Vocab
from .decode import decode_potentials
from .encoder import EncoderConfig, ModelBundle, PotentialSet, encode_values, init_model
from .mfvi import MfviConfig

TIMING_MODES = ("decoder_only", "full_model")


@dataclass
class BenchSpec:
    sentence_lengths: tuple = (32, 128, 512)
    sentence_count: int = 10000
    decoders: tuple = ("crf", "ain1")
    worker_counts: tuple = (1,)
    timing_mode: str = "decoder_only"
    repetitions: int = 3
    iterations: int = 3
    chunk_sentences: int = 512  # potential precompute granularity (memory cap)

    def __post_init__(self):
        if any(n < 1 for n in self.sentence_lengths):
            raise ValueError("sentence lengths must be >= 1")
        if self.sentence_count < 1:
            raise ValueError("sentence count must be >= 1")
        if self.timing_mode not in TIMING_MODES:
            raise ValueError(f"unknown timing mode {self.timing_mode!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class BenchRow:
    decoder: str
    length: int
    workers: int
    mode: str
    seconds: float
    tokens_per_second: float
    speedup_vs_crf: float


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def format_table(self) -> str:
        header = (
            f"{'decoder':>8} {'length':>7} {'workers':>8} {'mode':>12}"
            f" {'seconds':>10} {'tokens/s':>12} {'speedup':>8}"
        )
        lines = [header]
        for r in self.rows:
            lines.append(
                f"{r.decoder:>8} {r.length:>7d} {r.workers:>8d} {r.mode:>12}"
                f" {r.seconds:>10.4f} {r.tokens_per_second:>12.0f} {r.speedup_vs_crf:>8.2f}"
            )
        return "\n".join(lines)

    def format_kv(self) -> str:
        return "\n".join(
            f"decoder={r.decoder} length={r.length} workers={r.workers} mode={r.mode}"
            f" seconds={r.seconds:.6f} tokens_per_second={r.tokens_per_second:.1f}"
            f" speedup_vs_crf={r.speedup_vs_crf:.4f}"
            for r in self.rows
        )


def make_bench_bundle(
    label_count=17,
    vocab_size=5000,
    encoder_kind="word_only_linear",
    embedding_dim=64,
    hidden_dim=128,
    seed=0,
    decoder="crf",
    iterations=3,
):
    """Randomly initialized model over a synthetic vocabulary.

    Accuracy is irrelevant for timing; random transition tables keep the
    decode paths non-degenerate.
    """
    words = ["<unk>"] + [f"w{i}" for i in range(1, vocab_size)]
    vocab = Vocab(id_to_token=words, token_to_id={w: i for i, w in enumerate(words)})
    labels = [f"L{i}" for i in range(label_count)]
    label_vocab = LabelVocab(
        id_to_label=labels, label_to_id={l: i for i, l in enumerate(labels)}
    )
    config = EncoderConfig(
        kind=encoder_kind,
        embedding_dim=embedding_dim,
        hidden_dim=hidden_dim,
        label_count=label_count,
        vocab_size=vocab_size,
    )
    bundle = init_model(config, vocab, label_vocab, decoder=decoder, iterations=iterations, seed=seed)
    rng = np.random.default_rng(seed + 1)
    bundle.params["trans"] = 0.5 * rng.standard_normal((label_count, label_count))
    bundle.params["trans2"] = 0.25 * rng.standard_normal((label_count, label_count))
    return bundle


def _potential_chunk(bundle, tokens_chunk):
    pots = []
    for row in tokens_chunk:
        unary = encode_values(row, bundle) @ bundle.params["output_w"]
        pots.append(PotentialSet(unary, bundle.params["trans"], bundle.params["trans2"]))
    return pots


def time_decoder_only(pots, decoder, mfvi_cfg, workers=1, executor=None):
    """Seconds to decode every precomputed PotentialSet, decode time only."""
    t0 = time.perf_counter()
    for pot in pots:
        decode_potentials(pot, decoder, mfvi_cfg=mfvi_cfg, workers=workers, executor=executor)
    return time.perf_counter() - t0


def time_full_model(bundle, tokens, decoder, mfvi_cfg, workers=1, executor=None):
    """Seconds to encode and decode every token row."""
    t0 = time.perf_counter()
    for row in tokens:
        unary = encode_values(row, bundle) @ bundle.params["output_w"]
        pot = PotentialSet(unary, bundle.params["trans"], bundle.params["trans2"])
        decode_potentials(pot, decoder, mfvi_cfg=mfvi_cfg, workers=workers, executor=executor)
    return time.perf_counter() - t0


def _combos(spec):
    for decoder in spec.decoders:
        if decoder in ("ain1", "ain2"):
            for w in spec.worker_counts:
                yield decoder, w
        else:
            yield decoder, 1  # exact decoders have no position-parallel knob


def bench_run(spec: BenchSpec, bundle: ModelBundle, seed=0) -> BenchReport:
    rng = np.random.default_rng(seed)
    vocab_size = bundle.config.vocab_size
    executors = {}
    try:
        for _, w in _combos(spec):
            if w > 1 and w not in executors:
                executors[w] = ThreadPoolExecutor(max_workers=w)
        report = BenchReport()
        for length in spec.sentence_lengths:
            tokens = rng.integers(0, vocab_size, size=(spec.sentence_count, length))
            # warm-up, excluded from every measurement
            warm = _potential_chunk(bundle, tokens[: min(4, len(tokens))])
            for decoder, w in _combos(spec):
                cfg = MfviConfig(
                    iterations=spec.iterations,
                    order="second_factorized" if decoder == "ain2" else "first",
                )
                time_decoder_only(warm, decoder, cfg, w, executors.get(w))

            totals = {combo: [0.0] * spec.repetitions for combo in _combos(spec)}
            for start in range(0, spec.sentence_count, spec.chunk_sentences):
                chunk = tokens[start : start + spec.chunk_sentences]
                pots = (
                    _potential_chunk(bundle, chunk)
                    if spec.timing_mode == "decoder_only"
                    else None
                )
                for rep in range(spec.repetitions):
                    for decoder, w in _combos(spec):
                        cfg = MfviConfig(
                            iterations=spec.iterations,
                            order="second_factorized" if decoder == "ain2" else "first",
                        )
                        if spec.timing_mode == "decoder_only":
                            totals[(decoder, w)][rep] += time_decoder_only(
                                pots, decoder, cfg, w, executors.get(w)
                            )
                        else:
                            totals[(decoder, w)][rep] += time_full_model(
                                bundle, chunk, decoder, cfg, w, executors.get(w)
                            )

            med = {combo: median(times) for combo, times in totals.items()}
            crf_seconds = med.get(("crf", 1))
            n_tokens = spec.sentence_count * length
            for (decoder, w), secs in med.items():
                speedup = (crf_seconds / secs) if crf_seconds else float("nan")
                report.rows.append(
                    BenchRow(
                        decoder=decoder,
                        length=length,
                        workers=w,
                        mode=spec.timing_mode,
                        seconds=secs,
                        tokens_per_second=n_tokens / secs if secs > 0 else float("inf"),
                        speedup_vs_crf=speedup,
                    )
                )
    finally:
        for ex in executors.values():
            ex.shutdown()
    return report
