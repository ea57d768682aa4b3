"""One entry point for decoding a sentence with any decoder kind.

The same function backs the predict subcommand, dev-set evaluation during
training, and the benchmark harness, so timing instrumentation can never
change what a model predicts.
"""

from __future__ import annotations

import numpy as np

from .crf import viterbi
from .encoder import ModelBundle, PotentialSet, potentials_values
from .mfvi import MfviConfig, ain_decode


def decoder_mfvi_config(bundle: ModelBundle) -> MfviConfig:
    order = "second_factorized" if bundle.decoder == "ain2" else "first"
    return MfviConfig(iterations=bundle.iterations, order=order)


def decode_potentials(pot: PotentialSet, decoder, mfvi_cfg=None, workers=1, executor=None):
    """Label ids for one sentence given precomputed potentials."""
    if decoder == "maxent":
        return [int(y) for y in np.argmax(pot.unary_values, axis=1)]
    if decoder == "crf":
        return viterbi(pot).path
    if decoder in ("ain1", "ain2"):
        cfg = mfvi_cfg or MfviConfig(
            order="second_factorized" if decoder == "ain2" else "first"
        )
        return ain_decode(pot, cfg, workers=workers, executor=executor)
    raise ValueError(f"unknown decoder kind {decoder!r}")


def decode_labels(bundle: ModelBundle, token_ids, workers=1, executor=None):
    """Encode one sentence and decode it with the bundle's decoder."""
    pot = potentials_values(token_ids, bundle)
    return decode_potentials(
        pot,
        bundle.decoder,
        mfvi_cfg=decoder_mfvi_config(bundle),
        workers=workers,
        executor=executor,
    )


def decode_corpus(bundle: ModelBundle, sentences, workers=1, executor=None):
    """Predicted label-string lists for every sentence."""
    out = []
    for sent in sentences:
        ids = decode_labels(bundle, sent.token_ids, workers=workers, executor=executor)
        out.append([bundle.label_vocab.id_to_label[y] for y in ids])
    return out
