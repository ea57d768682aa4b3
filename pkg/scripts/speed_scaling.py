#!/usr/bin/env python3
"""Decoding speed scaling: exact Viterbi vs the mean-field decoder.

Times both decoders over 10k random sentences per length and prints the
speedup table. The interesting quantity is how the Viterbi/mean-field
time ratio grows with sentence length: the Viterbi recursion has an O(n)
sequential critical path while the mean-field decoder runs a fixed number
of position-parallel sweeps.

Usage:
    python scripts/speed_scaling.py [--count 10000] [--lengths 32,128,512]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from parachain.bench import BenchSpec, bench_run, make_bench_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=10000)
    ap.add_argument("--lengths", default="32,128,512")
    ap.add_argument("--labels", type=int, default=17)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = BenchSpec(
        sentence_lengths=tuple(int(x) for x in args.lengths.split(",")),
        sentence_count=args.count,
        decoders=("crf", "ain1", "ain2", "maxent"),
        worker_counts=(args.workers,),
        repetitions=args.reps,
    )
    bundle = make_bench_bundle(label_count=args.labels, seed=args.seed)
    report = bench_run(spec, bundle, seed=args.seed)
    print(report.format_table())
    print()
    ain_rows = {r.length: r.speedup_vs_crf for r in report.rows if r.decoder == "ain1"}
    for length in sorted(ain_rows):
        print(f"mean-field speedup over Viterbi at n={length}: {ain_rows[length]:.2f}x")


if __name__ == "__main__":
    main()
