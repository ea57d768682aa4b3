import os
import time
from concurrent.futures import ThreadPoolExecutor
from statistics import median

import numpy as np
import pytest

from parachain import bench, mfvi
from parachain.crf import viterbi
from parachain.decode import decode_labels
from parachain.encoder import PotentialSet, potentials_values
from parachain.mfvi import MfviConfig


def _small_spec(**kw):
    base = dict(
        sentence_lengths=(8, 16),
        sentence_count=30,
        decoders=("crf", "ain1"),
        worker_counts=(1,),
        repetitions=2,
        chunk_sentences=16,
    )
    base.update(kw)
    return bench.BenchSpec(**base)


def test_crf_speedup_vs_itself_is_one():
    bundle = bench.make_bench_bundle(label_count=5, vocab_size=50, seed=0)
    report = bench.bench_run(_small_spec(), bundle, seed=0)
    crf_rows = [r for r in report.rows if r.decoder == "crf"]
    assert len(crf_rows) == 2
    for r in crf_rows:
        assert r.speedup_vs_crf == 1.0


def test_report_has_one_row_per_combo_and_formats():
    bundle = bench.make_bench_bundle(label_count=5, vocab_size=50, seed=0)
    spec = _small_spec(decoders=("crf", "ain1", "ain2", "maxent"), worker_counts=(1, 2))
    report = bench.bench_run(spec, bundle, seed=0)
    # crf/maxent: one row per length; ain1/ain2: one per (length, workers)
    assert len(report.rows) == 2 * (1 + 1 + 2 + 2)
    table = report.format_table()
    assert "decoder" in table and "speedup" in table
    kv = report.format_kv()
    assert all(line.startswith("decoder=") for line in kv.splitlines())
    for r in report.rows:
        assert r.seconds > 0 and r.tokens_per_second > 0


def test_full_model_mode_runs():
    bundle = bench.make_bench_bundle(label_count=5, vocab_size=50, seed=0)
    report = bench.bench_run(_small_spec(timing_mode="full_model"), bundle, seed=0)
    assert all(r.mode == "full_model" for r in report.rows)


def test_decode_time_scales_linearly_in_iterations():
    # decoder-only time for the mean-field decoder at fixed n, L against the
    # unroll depth M: a linear fit should explain nearly all the variance
    rng = np.random.default_rng(0)
    n, L = 2048, 17
    pots = [
        PotentialSet(rng.uniform(-1, 1, (n, L)), 0.3 * rng.uniform(-1, 1, (L, L)))
        for _ in range(12)
    ]
    ms = [1, 3, 6]
    bench.time_decoder_only(pots[:2], "ain1", MfviConfig(iterations=3))  # warm-up
    times = []
    for m in ms:
        cfg = MfviConfig(iterations=m)
        times.append(
            median(bench.time_decoder_only(pots, "ain1", cfg) for _ in range(3))
        )
    x = np.asarray(ms, float)
    y = np.asarray(times)
    slope, intercept = np.polyfit(x, y, 1)
    r2 = 1 - ((y - (slope * x + intercept)) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    assert slope > 0
    assert r2 > 0.95, f"R^2 {r2:.4f} with times {times}"


def test_viterbi_time_grows_at_least_linearly_and_ratio_increases():
    rng = np.random.default_rng(1)
    L = 17

    def timed(n, decoder, cfg=None):
        pots = [
            PotentialSet(rng.uniform(-1, 1, (n, L)), 0.3 * rng.uniform(-1, 1, (L, L)))
            for _ in range(30)
        ]
        bench.time_decoder_only(pots[:3], decoder, cfg)
        return median(bench.time_decoder_only(pots, decoder, cfg) for _ in range(3))

    v32, v256 = timed(32, "crf"), timed(256, "crf")
    assert v256 >= 4.0 * v32  # 8x the positions, comfortably over half-linear
    cfg = MfviConfig()
    a32, a256 = timed(32, "ain1", cfg), timed(256, "ain1", cfg)
    assert v256 / a256 > v32 / a32


@pytest.mark.skipif(
    len(os.sched_getaffinity(0)) < 2,
    reason="thread scaling is unmeasurable without at least two cores",
)
def test_step_latency_scales_with_worker_threads():
    # positions chunked over 8 threads vs 1: at least a 3x latency drop at
    # a label count large enough for chunk work to dominate dispatch
    rng = np.random.default_rng(2)
    n, L = 1024, 256
    pot = PotentialSet(rng.uniform(-1, 1, (n, L)), 0.1 * rng.uniform(-1, 1, (L, L)))
    q0 = mfvi.mfvi_init(pot)

    def step_time(workers, executor=None, reps=9):
        ticks = []
        for _ in range(reps):
            t0 = time.perf_counter()
            mfvi.mfvi_step_first_order(q0, pot, workers=workers, executor=executor)
            ticks.append(time.perf_counter() - t0)
        return median(ticks)

    serial = step_time(1)
    with ThreadPoolExecutor(max_workers=8) as ex:
        step_time(8, ex, reps=2)  # warm the pool
        threaded = step_time(8, ex)
    assert serial >= 3.0 * threaded, f"serial {serial:.4f}s threaded {threaded:.4f}s"


def test_bench_decode_path_matches_predict_path():
    # timing instrumentation must not change predictions: the bench harness
    # decodes through the same function as the predict flow
    bundle = bench.make_bench_bundle(label_count=5, vocab_size=50, seed=3, decoder="ain1")
    rng = np.random.default_rng(1)
    rows = rng.integers(0, 50, size=(10, 12))
    for row in rows:
        pot = bench._potential_chunk(bundle, [row])[0]
        from parachain.decode import decode_potentials, decoder_mfvi_config

        via_bench = decode_potentials(pot, "ain1", decoder_mfvi_config(bundle))
        via_predict = decode_labels(bundle, row)
        assert via_bench == via_predict
