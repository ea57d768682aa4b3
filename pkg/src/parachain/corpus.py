"""Corpus ingestion, label-scheme conversion, vocabularies, synthetic data.

File format is CoNLL column text: one token per line, whitespace-separated
columns, blank line between sentences, ``-DOCSTART-`` header lines skipped.
The synthetic generator samples from an HMM using a SplitMix64 stream so a
seed pins the corpus bit-for-bit across runs and platforms.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

UNK = "<unk>"

BIO_POSITIONS = frozenset("BIO")
BIOES_POSITIONS = frozenset("BIOES")


class ConllFormatError(ValueError):
    """A CoNLL file line does not have the expected columns."""


@dataclass
class TaggedSentence:
    tokens: list
    token_ids: list | None = None
    gold_labels: list | None = None
    raw_label_strings: list | None = None

    def __len__(self):
        return len(self.tokens)


def split_label(label: str):
    """Split ``B-PER`` into ``("B", "PER")``; ``O`` into ``("O", None)``."""
    if label == "O":
        return "O", None
    if len(label) > 1 and label[1] == "-":
        return label[0], label[2:]
    return label, None


@dataclass(frozen=True)
class LabelScheme:
    kind: str  # bio | bioes | plain
    labels: tuple

    @staticmethod
    def detect(labels) -> "LabelScheme":
        positions = set()
        for lab in labels:
            pos, typ = split_label(lab)
            if pos != "O" and typ is None:
                return LabelScheme("plain", tuple(labels))
            positions.add(pos)
        if positions <= BIO_POSITIONS:
            return LabelScheme("bio", tuple(labels))
        if positions <= BIOES_POSITIONS:
            return LabelScheme("bioes", tuple(labels))
        return LabelScheme("plain", tuple(labels))


@dataclass
class Vocab:
    """Dense string-to-id mapping; id 0 is reserved for <unk> in word vocabs."""

    id_to_token: list
    token_to_id: dict
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, token):
        return self.token_to_id.get(token, 0)

    def count(self, token):
        return self.counts.get(token, 0)


@dataclass
class LabelVocab:
    id_to_label: list
    label_to_id: dict

    def __len__(self):
        return len(self.id_to_label)

    def encode(self, label):
        try:
            return self.label_to_id[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in label vocabulary") from None


def read_conll(path, token_column=0, label_column=-1):
    """Parse a CoNLL column file into sentences of raw strings.

    ``label_column`` may be None for unlabeled input. Sentences keep file
    order; empty sentences are dropped; ``-DOCSTART-`` lines are skipped.
    """
    sentences = []
    tokens, labels = [], []

    def flush():
        if tokens:
            sentences.append(
                TaggedSentence(
                    tokens=list(tokens),
                    raw_label_strings=list(labels) if label_column is not None else None,
                )
            )
            tokens.clear()
            labels.clear()

    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("-DOCSTART-"):
                continue
            cols = line.split()
            wanted = [token_column] if label_column is None else [token_column, label_column]
            if any(not (-len(cols) <= c < len(cols)) for c in wanted):
                raise ConllFormatError(
                    f"{path}: line {ln}: column {max(wanted)} missing, "
                    f"got {len(cols)} columns"
                )
            tokens.append(cols[token_column])
            if label_column is not None:
                labels.append(cols[label_column])
    flush()
    return sentences


def write_conll(sentences, path, predictions=None):
    """Write ``token gold [pred]`` lines, blank line between sentences."""
    with open(path, "w", encoding="utf-8") as fh:
        for si, sent in enumerate(sentences):
            golds = sent.raw_label_strings or [""] * len(sent)
            preds = predictions[si] if predictions is not None else None
            for ti, token in enumerate(sent.tokens):
                cols = [token]
                if sent.raw_label_strings is not None:
                    cols.append(golds[ti])
                if preds is not None:
                    cols.append(preds[ti])
                fh.write(" ".join(cols) + "\n")
            fh.write("\n")


def bio_to_bioes(labels):
    """Convert BIO labels to BIOES; a lone I-X is repaired to B-X first."""
    repaired = []
    for i, lab in enumerate(labels):
        pos, typ = split_label(lab)
        if pos == "I":
            prev_pos, prev_typ = split_label(repaired[i - 1]) if i else ("O", None)
            if prev_pos == "O" or prev_typ != typ:
                lab = "B-" + typ
        repaired.append(lab)
    out = []
    n = len(repaired)
    for i, lab in enumerate(repaired):
        pos, typ = split_label(lab)
        if pos not in ("B", "I"):
            out.append(lab)
            continue
        nxt_pos, nxt_typ = split_label(repaired[i + 1]) if i + 1 < n else ("O", None)
        continued = nxt_pos == "I" and nxt_typ == typ
        if pos == "B":
            out.append(("B-" if continued else "S-") + typ)
        else:
            out.append(("I-" if continued else "E-") + typ)
    return out


def bioes_to_bio(labels):
    """Inverse map used for round-trip checks: S goes to B, E goes to I."""
    out = []
    for lab in labels:
        pos, typ = split_label(lab)
        if pos == "S":
            out.append("B-" + typ)
        elif pos == "E":
            out.append("I-" + typ)
        else:
            out.append(lab)
    return out


def build_vocab(sentences, min_count=1):
    """Build word and label vocabularies.

    Words are ordered by descending count with alphabetical tie-break and
    start at id 1 (<unk> holds id 0). Labels are ordered by first appearance.
    """
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    labels = []
    seen = set()
    for sent in sentences:
        counts.update(sent.tokens)
        for lab in sent.raw_label_strings or []:
            if lab not in seen:
                seen.add(lab)
                labels.append(lab)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = [UNK] + kept
    vocab = Vocab(
        id_to_token=id_to_token,
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        counts=dict(counts),
    )
    label_vocab = LabelVocab(
        id_to_label=labels,
        label_to_id={lab: i for i, lab in enumerate(labels)},
    )
    return vocab, label_vocab


def assign_ids(sentences, vocab, label_vocab):
    """Fill token_ids / gold_labels in place from the vocabularies."""
    for sent in sentences:
        sent.token_ids = [vocab.encode(t) for t in sent.tokens]
        if sent.raw_label_strings is not None:
            sent.gold_labels = [label_vocab.encode(lab) for lab in sent.raw_label_strings]
    return sentences


# --- portable PRNG -------------------------------------------------------


class SplitMix64:
    """SplitMix64 generator (Steele, Lea, Flood 2014).

    state' = state + 0x9E3779B97F4A7C15 (mod 2^64)
    z = state'; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
    z = (z ^ z>>27) * 0x94D049BB133111EB; output z ^ z>>31
    Doubles are the top 53 bits scaled by 2^-53.
    """

    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self._state = seed & self._MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & self._MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self._MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self._MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + int(self.uniform() * (hi - lo + 1))

    def categorical(self, cumulative) -> int:
        """Draw an index given a cumulative probability row."""
        return int(np.searchsorted(cumulative, self.uniform(), side="right"))

    def gamma_half(self, two_alpha: int) -> float:
        """Gamma(two_alpha / 2, 1) via exponential and half-normal parts."""
        if two_alpha < 1:
            raise ValueError("concentration must be a positive multiple of 0.5")
        g = 0.0
        for _ in range(two_alpha // 2):
            g += -math.log(1.0 - self.uniform())
        if two_alpha % 2:
            z = math.sqrt(-2.0 * math.log(1.0 - self.uniform())) * math.cos(
                2.0 * math.pi * self.uniform()
            )
            g += 0.5 * z * z
        return g

    def dirichlet(self, two_alphas) -> np.ndarray:
        draws = np.array([self.gamma_half(a) for a in two_alphas])
        total = draws.sum()
        if total <= 0.0:  # astronomically unlikely; keep rows stochastic
            draws[:] = 1.0
            total = draws.size
        return draws / total


# --- synthetic HMM corpus -------------------------------------------------

DEFAULT_LABELS = ("O", "B-X", "I-X", "E-X", "S-X", "B-Y", "I-Y", "E-Y", "S-Y")


@dataclass
class SynthSpec:
    """An HMM over label ids with row-stochastic transition and emission."""

    label_count: int
    vocab_size: int
    transition: np.ndarray  # L x L
    emission: np.ndarray  # L x V
    initial: np.ndarray  # L
    min_len: int
    max_len: int
    seed: int
    label_names: tuple = ()

    def __post_init__(self):
        self.transition = as_stochastic(self.transition, "transition")
        self.emission = as_stochastic(self.emission, "emission")
        self.initial = as_stochastic(self.initial[None, :], "initial")[0]
        if not self.label_names:
            self.label_names = tuple(f"T{i}" for i in range(self.label_count))
        if not (1 <= self.min_len <= self.max_len):
            raise ValueError("sentence length bounds must satisfy 1 <= min <= max")


def as_stochastic(rows, name):
    rows = np.asarray(rows, dtype=np.float64)
    sums = rows.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-12:
        raise ValueError(f"{name} rows must sum to 1 (got sums {sums})")
    return rows


def default_synth_spec(
    seed=42,
    label_count=9,
    vocab_size=2000,
    min_len=8,
    max_len=40,
    diag_concentration=0.5,
    offdiag_concentration=0.5,
    emission_concentration=0.5,
):
    """Dirichlet-sampled HMM; raise ``diag_concentration`` for sticky labels.

    Concentrations are multiples of 0.5 (the portable gamma sampler works
    in halves). The default 9 labels are BIOES over two types plus O.
    """
    rng = SplitMix64(seed ^ 0xD1CE)
    L, V = label_count, vocab_size

    def halves(x):
        t = round(2 * x)
        if t < 1 or abs(2 * x - t) > 1e-9:
            raise ValueError("concentrations must be positive multiples of 0.5")
        return t

    d, o, e = halves(diag_concentration), halves(offdiag_concentration), halves(emission_concentration)
    transition = np.zeros((L, L))
    for i in range(L):
        transition[i] = rng.dirichlet([d if j == i else o for j in range(L)])
    emission = np.zeros((L, V))
    for i in range(L):
        emission[i] = rng.dirichlet([e] * V)
    initial = rng.dirichlet([o] * L)
    names = DEFAULT_LABELS if L == len(DEFAULT_LABELS) else ()
    return SynthSpec(
        label_count=L,
        vocab_size=V,
        transition=transition,
        emission=emission,
        initial=initial,
        min_len=min_len,
        max_len=max_len,
        seed=seed,
        label_names=names,
    )


def generate_synthetic(spec: SynthSpec, count: int):
    """Sample ``count`` sentences from the HMM; fully determined by the seed."""
    rng = SplitMix64(spec.seed)
    cum_t = np.cumsum(spec.transition, axis=1)
    cum_e = np.cumsum(spec.emission, axis=1)
    cum_pi = np.cumsum(spec.initial)
    width = len(str(max(spec.vocab_size - 1, 1)))
    sentences = []
    for _ in range(count):
        n = rng.randint(spec.min_len, spec.max_len)
        labels = np.empty(n, dtype=np.intp)
        tokens = np.empty(n, dtype=np.intp)
        y = rng.categorical(cum_pi)
        for i in range(n):
            if i:
                y = rng.categorical(cum_t[y])
            labels[i] = y
            tokens[i] = rng.categorical(cum_e[y])
        sentences.append(
            TaggedSentence(
                tokens=[f"w{t:0{width}d}" for t in tokens],
                gold_labels=list(map(int, labels)),
                raw_label_strings=[spec.label_names[y] for y in labels],
            )
        )
    return sentences
