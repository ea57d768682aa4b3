"""Linear-chain CRF sequence labeling with exact and mean-field decoders."""

from .corpus import (
    SynthSpec,
    TaggedSentence,
    bio_to_bioes,
    build_vocab,
    default_synth_spec,
    generate_synthetic,
    read_conll,
)
from .crf import crf_nll, log_partition, marginals, viterbi
from .decode import decode_labels
from .encoder import EncoderConfig, ModelBundle, PotentialSet, init_model, load_model, save_model
from .evaluation import extract_spans, span_f1, token_accuracy
from .mfvi import (
    MfviConfig,
    ain_decode,
    ain_nll,
    mfvi_init,
    mfvi_step_first_order,
    mfvi_step_second_order,
)
from .training import TrainConfig, sgd_epoch, train

__version__ = "0.1.0"
