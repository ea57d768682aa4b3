"""Encoders mapping token ids to contextual features and CRF potentials.

Two encoders are provided: a per-token linear projection of the word
embedding, and a one-layer window CNN (odd kernel, zero-padded boundaries,
relu). Unary scores are ``r @ W`` with W of shape (hidden, labels); the
transition tables U (adjacent labels) and U2 (labels two apart) are shared
across positions and initialized to zero so an untrained model scores like
a per-position softmax.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .corpus import LabelVocab, Vocab

MODEL_MAGIC = "PARACHAIN-MODEL"
MODEL_FORMAT_VERSION = 1

ENCODER_KINDS = ("word_only_linear", "word_cnn")
DECODER_KINDS = ("maxent", "crf", "ain1", "ain2")


class ModelFormatError(ValueError):
    """The file is not a model file (bad magic or header structure)."""


class ModelVersionError(ValueError):
    """The model file uses an unsupported format version."""


class ModelIntegrityError(ValueError):
    """Manifest and payload disagree (truncation or shape mismatch)."""


class EmbeddingFormatError(ValueError):
    """A plain-text embedding file line could not be parsed."""


@dataclass(frozen=True)
class EncoderConfig:
    kind: str
    embedding_dim: int
    hidden_dim: int
    label_count: int
    vocab_size: int
    kernel_width: int = 3

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        for name in ("embedding_dim", "hidden_dim", "label_count", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be odd and positive")


class PotentialSet:
    """Per-sentence unary scores plus the shared transition tables.

    Members may be GraphNodes (training) or plain arrays (decoding); the
    ``*_values`` accessors always yield arrays and the ``*_node`` accessors
    always yield graph nodes (wrapping constants on demand).
    """

    def __init__(self, unary, trans, trans2=None):
        self.unary = unary
        self.trans = trans
        self.trans2 = trans2
        u = self.unary_values
        t = self.trans_values
        if u.ndim != 2:
            raise ValueError(f"unary scores must be 2-D, got shape {u.shape}")
        L = u.shape[1]
        if t.shape != (L, L):
            raise ValueError(f"transition table must be {L}x{L}, got {t.shape}")
        t2 = self.trans2_values
        if t2 is not None and t2.shape != (L, L):
            raise ValueError(f"second transition table must be {L}x{L}, got {t2.shape}")

    @staticmethod
    def _values(x):
        return x.value if isinstance(x, T.GraphNode) else x

    @staticmethod
    def _node(x):
        return x if isinstance(x, T.GraphNode) else T.constant(x)

    @property
    def n(self):
        return self.unary_values.shape[0]

    @property
    def label_count(self):
        return self.unary_values.shape[1]

    @property
    def unary_values(self):
        return self._values(self.unary)

    @property
    def trans_values(self):
        return self._values(self.trans)

    @property
    def trans2_values(self):
        return None if self.trans2 is None else self._values(self.trans2)

    @property
    def unary_node(self):
        self.unary = self._node(self.unary)
        return self.unary

    @property
    def trans_node(self):
        self.trans = self._node(self.trans)
        return self.trans

    @property
    def trans2_node(self):
        if self.trans2 is None:
            raise ValueError("this potential set has no second-order transition table")
        self.trans2 = self._node(self.trans2)
        return self.trans2


PARAM_NAMES = ("embedding", "encoder_w", "output_w", "trans", "trans2")


@dataclass
class ModelBundle:
    """Named parameter tensors plus the vocabularies and decode settings."""

    params: dict
    word_vocab: Vocab
    label_vocab: LabelVocab
    config: EncoderConfig
    decoder: str
    iterations: int = 3

    def __post_init__(self):
        if self.decoder not in DECODER_KINDS:
            raise ValueError(f"unknown decoder kind {self.decoder!r}")
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name!r} contains non-finite values")

    def trainable_names(self):
        """Parameters touched by this bundle's loss (others stay frozen)."""
        names = ["embedding", "encoder_w", "output_w"]
        if self.decoder in ("crf", "ain1", "ain2"):
            names.append("trans")
        if self.decoder == "ain2":
            names.append("trans2")
        return names

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            params={k: v.copy() for k, v in self.params.items()},
            word_vocab=self.word_vocab,
            label_vocab=self.label_vocab,
            config=self.config,
            decoder=self.decoder,
            iterations=self.iterations,
        )


def _xavier(rng, rows, cols):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_model(config, word_vocab, label_vocab, decoder="crf", iterations=3, seed=0):
    """Initialize parameters: Xavier-uniform weights, zero transitions."""
    if len(label_vocab) != config.label_count:
        raise ValueError("label vocabulary size disagrees with config.label_count")
    if len(word_vocab) != config.vocab_size:
        raise ValueError("word vocabulary size disagrees with config.vocab_size")
    rng = np.random.default_rng(seed)
    L, d, e = config.label_count, config.hidden_dim, config.embedding_dim
    enc_rows = e if config.kind == "word_only_linear" else config.kernel_width * e
    params = {
        "embedding": _xavier(rng, config.vocab_size, e),
        "encoder_w": _xavier(rng, enc_rows, d),
        "output_w": _xavier(rng, d, L),
        "trans": np.zeros((L, L)),
        "trans2": np.zeros((L, L)),
    }
    return ModelBundle(
        params=params,
        word_vocab=word_vocab,
        label_vocab=label_vocab,
        config=config,
        decoder=decoder,
        iterations=iterations,
    )


def _check_token_ids(token_ids, vocab_size):
    for pos, tid in enumerate(token_ids):
        if not 0 <= tid < vocab_size:
            raise ValueError(f"token id {tid} at position {pos} is outside the vocabulary")
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty sentence")


def encode(token_ids, param_nodes, config) -> T.GraphNode:
    """Graph-building encoder: token ids to an (n, hidden) feature matrix."""
    _check_token_ids(token_ids, config.vocab_size)
    emb = T.gather_rows(param_nodes["embedding"], list(token_ids))
    if config.kind == "word_only_linear":
        return T.matmul(emb, param_nodes["encoder_w"])
    conv = T.conv_window(emb, param_nodes["encoder_w"], config.kernel_width)
    return T.relu(conv)


def unary_potentials(r, param_nodes) -> T.GraphNode:
    """Unary scores: feature matrix times the (hidden, labels) output map."""
    return T.matmul(r, param_nodes["output_w"])


def encode_values(token_ids, bundle) -> np.ndarray:
    """Array twin of ``encode`` for decoding and benchmarks."""
    config = bundle.config
    _check_token_ids(token_ids, config.vocab_size)
    emb = bundle.params["embedding"][np.asarray(token_ids, dtype=np.intp)]
    if config.kind == "word_only_linear":
        return emb @ bundle.params["encoder_w"]
    cols = T._window_cols(emb, config.kernel_width)
    return np.maximum(cols @ bundle.params["encoder_w"], 0.0)


def param_graph_nodes(bundle) -> dict:
    """Fresh graph leaves over the bundle's parameter arrays."""
    return {name: T.leaf(arr) for name, arr in bundle.params.items()}


def potentials_graph(token_ids, bundle, param_nodes=None):
    """Build the full trainable PotentialSet for one sentence."""
    nodes = param_nodes if param_nodes is not None else param_graph_nodes(bundle)
    r = encode(token_ids, nodes, bundle.config)
    unary = unary_potentials(r, nodes)
    trans2 = nodes["trans2"] if bundle.decoder == "ain2" else None
    return PotentialSet(unary, nodes["trans"], trans2), nodes


def potentials_values(token_ids, bundle) -> PotentialSet:
    """Array-only PotentialSet for decoding and benchmarks."""
    r = encode_values(token_ids, bundle)
    unary = r @ bundle.params["output_w"]
    trans2 = bundle.params["trans2"] if bundle.decoder == "ain2" else None
    return PotentialSet(unary, bundle.params["trans"], trans2)


# --- model files ----------------------------------------------------------
#
# Layout: one magic+version line, one line with the manifest byte length,
# the JSON manifest, a newline, then a single little-endian float64 payload.


def save_model(bundle: ModelBundle, path) -> None:
    order = [name for name in PARAM_NAMES if name in bundle.params]
    tensors = []
    offset = 0
    payload = io.BytesIO()
    for name in order:
        arr = np.ascontiguousarray(bundle.params[name], dtype=np.float64)
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.astype("<f8", copy=False).tobytes()
        payload.write(raw)
        offset += len(raw)
    manifest = {
        "config": asdict(bundle.config),
        "decoder": bundle.decoder,
        "iterations": bundle.iterations,
        "words": bundle.word_vocab.id_to_token,
        "labels": bundle.label_vocab.id_to_label,
        "tensors": tensors,
        "payload_bytes": offset,
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MODEL_MAGIC} v{MODEL_FORMAT_VERSION}\n".encode("ascii"))
        fh.write(f"{len(blob)}\n".encode("ascii"))
        fh.write(blob)
        fh.write(b"\n")
        fh.write(payload.getvalue())


def load_model(path) -> ModelBundle:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split(" v")
        if parts[0] != MODEL_MAGIC or len(parts) != 2:
            raise ModelFormatError(f"{path}: not a model file (bad magic {header!r})")
        try:
            version = int(parts[1])
        except ValueError:
            raise ModelFormatError(f"{path}: malformed version field {parts[1]!r}") from None
        if version != MODEL_FORMAT_VERSION:
            raise ModelVersionError(
                f"{path}: format version {version} unsupported"
                f" (expected {MODEL_FORMAT_VERSION})"
            )
        try:
            manifest_len = int(fh.readline().strip())
        except ValueError:
            raise ModelFormatError(f"{path}: malformed manifest length") from None
        blob = fh.read(manifest_len)
        if len(blob) != manifest_len:
            raise ModelIntegrityError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: manifest is not valid JSON: {exc}") from None
        fh.read(1)  # newline after manifest
        payload = fh.read()

    declared = manifest.get("payload_bytes")
    total = 0
    for entry in manifest["tensors"]:
        total += int(np.prod(entry["shape"])) * 8
    if declared is not None and declared != total:
        raise ModelIntegrityError(
            f"{path}: manifest shape products ({total} bytes)"
            f" disagree with declared payload ({declared} bytes)"
        )
    if len(payload) != total:
        raise ModelIntegrityError(
            f"{path}: payload has {len(payload)} bytes, manifest requires {total}"
        )
    params = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=start)
        params[entry["name"]] = arr.astype(np.float64).reshape(shape)
    config = EncoderConfig(**manifest["config"])
    words = manifest["words"]
    word_vocab = Vocab(
        id_to_token=list(words),
        token_to_id={t: i for i, t in enumerate(words)},
    )
    labels = manifest["labels"]
    label_vocab = LabelVocab(
        id_to_label=list(labels),
        label_to_id={lab: i for i, lab in enumerate(labels)},
    )
    return ModelBundle(
        params=params,
        word_vocab=word_vocab,
        label_vocab=label_vocab,
        config=config,
        decoder=manifest["decoder"],
        iterations=manifest["iterations"],
    )


def load_text_embeddings(path, expected_dim=None):
    """Read a plain-text embedding file: token then floats, one per line."""
    tokens = []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise EmbeddingFormatError(f"{path}: line {ln}: no embedding values")
            try:
                vec = [float(x) for x in parts[1:]]
            except ValueError:
                raise EmbeddingFormatError(
                    f"{path}: line {ln}: non-numeric embedding value"
                ) from None
            if expected_dim is not None and len(vec) != expected_dim:
                raise EmbeddingFormatError(
                    f"{path}: line {ln}: expected {expected_dim} values, got {len(vec)}"
                )
            if rows and len(vec) != len(rows[0]):
                raise EmbeddingFormatError(
                    f"{path}: line {ln}: inconsistent embedding width"
                )
            tokens.append(parts[0])
            rows.append(vec)
    return tokens, np.asarray(rows, dtype=np.float64)


def apply_pretrained_embeddings(bundle, tokens, matrix):
    """Overwrite embedding rows for vocabulary words present in ``tokens``."""
    if matrix.shape[1] != bundle.config.embedding_dim:
        raise EmbeddingFormatError(
            f"pretrained width {matrix.shape[1]} differs from"
            f" embedding_dim {bundle.config.embedding_dim}"
        )
    hits = 0
    for tok, row in zip(tokens, matrix):
        idx = bundle.word_vocab.token_to_id.get(tok)
        if idx is not None and idx != 0:
            bundle.params["embedding"][idx] = row
            hits += 1
    return hits
