"""Datasets, text preprocessing, and the whitespace tokenizer.

Dataset wire format: one record per line, ``label<TAB>text``, UTF-8,
LF line endings.  Labels are class indices (0 = neutral, 1 = positive,
2 = negative for the three-class sentiment setup).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import TokenSequence

PAD_TOKEN = "[PAD]"
CLS_TOKEN = "[CLS]"
UNK_TOKEN = "[UNK]"
SPECIAL_TOKENS = (PAD_TOKEN, CLS_TOKEN, UNK_TOKEN)

DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be by for from has he in is it its of on or that the
    this to was were will with""".split()
)

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_SYMBOL_RE = re.compile(r"[^\w\s]+")


@dataclass(frozen=True)
class LabeledText:
    text: str
    label: int


def preprocess(text: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> str:
    """Lowercase, drop web links, strip symbol characters, remove stopwords.

    Idempotent: a second pass is a no-op.  The result may be empty; the
    dataset loaders drop such records and count them.
    """
    text = text.lower()
    text = _URL_RE.sub(" ", text)
    text = _SYMBOL_RE.sub(" ", text)
    tokens = [tok for tok in text.split() if tok not in stopwords]
    return " ".join(tokens)


def load_dataset(path, classes: int = 3) -> list[LabeledText]:
    """Parse a label<TAB>text file, rejecting malformed lines by number."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            label_part, sep, text = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: missing tab separator")
            try:
                label = int(label_part)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer label {label_part!r}") from None
            if not 0 <= label < classes:
                raise ValueError(f"{path}:{lineno}: label {label} outside [0, {classes})")
            records.append(LabeledText(text=text, label=label))
    return records


def save_dataset(path, records: Iterable[LabeledText]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(f"{rec.label}\t{rec.text}\n")


def preprocess_dataset(
    records: Sequence[LabeledText], stopwords: frozenset[str] = DEFAULT_STOPWORDS
) -> tuple[list[LabeledText], int]:
    """Preprocess every record, dropping ones that come out empty.

    Returns the kept records and the dropped count.
    """
    kept = []
    dropped = 0
    for rec in records:
        text = preprocess(rec.text, stopwords)
        if text:
            kept.append(LabeledText(text=text, label=rec.label))
        else:
            dropped += 1
    return kept, dropped


# class keywords for the synthetic task (neutral / positive / negative)
_SYNTH_KEYWORDS = ("steady", "rally", "slump")

_SYNTH_NOISE = (
    "market shares index report quarter earnings trading volume outlook "
    "revenue sector forecast analyst session results guidance stock price "
    "growth company announcement data update figures release investors "
    "board futures currency bonds yields commodity margin cost supply demand "
    "exports imports retail housing energy banks tech industry"
).split()


def synth_keywords(classes: int) -> list[str]:
    base = list(_SYNTH_KEYWORDS[:classes])
    base += [f"cue{j}" for j in range(len(base), classes)]
    return base


def synth_dataset(seed: int, n: int, classes: int = 3) -> list[LabeledText]:
    """Balanced keyword-separable texts: one planted class keyword + noise.

    Class counts differ by at most one and a keyword-lookup classifier
    scores 100% by construction.  Deterministic in ``seed``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    keywords = synth_keywords(classes)
    noise = [w for w in _SYNTH_NOISE if w not in keywords]
    rng = np.random.default_rng(seed)
    labels = np.array([i % classes for i in range(n)])
    rng.shuffle(labels)
    records = []
    for label in labels:
        length = int(rng.integers(4, 10))
        words = [noise[int(j)] for j in rng.integers(0, len(noise), size=length)]
        words.insert(int(rng.integers(0, length + 1)), keywords[label])
        records.append(LabeledText(text=" ".join(words), label=int(label)))
    return records


def split_dataset(
    records: Sequence[LabeledText], seed: int = 0, fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
) -> tuple[list[LabeledText], list[LabeledText], list[LabeledText]]:
    """Shuffled train/validation/test split (default 60/20/20)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_train = int(round(fractions[0] * len(records)))
    n_val = int(round(fractions[1] * len(records)))
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train : n_train + n_val]]
    test = [records[i] for i in order[n_train + n_val :]]
    return train, val, test


class Vocab:
    """Whitespace tokenizer over a fixed token table.

    Index 0/1/2 are the pad, sequence-start, and unknown tokens; words
    keep insertion order.  Encoding prepends the start token, truncates
    to the sequence length, and pads with masked positions.
    """

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:3]) != SPECIAL_TOKENS:
            raise ValueError(f"vocab must start with {SPECIAL_TOKENS}")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocab")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int) -> "Vocab":
        """Most frequent words first (ties alphabetical), capped at max_size."""
        counts: dict[str, int] = {}
        for text in texts:
            for tok in text.split():
                counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
        room = max_size - len(SPECIAL_TOKENS)
        if room < 0:
            raise ValueError(f"max_size {max_size} smaller than the special tokens")
        return cls(list(SPECIAL_TOKENS) + ordered[:room])

    def encode(self, text: str, seq_len: int) -> TokenSequence:
        ids = np.zeros(seq_len, dtype=np.int64)
        mask = np.zeros(seq_len, dtype=bool)
        ids[0] = self.index[CLS_TOKEN]
        mask[0] = True
        unk = self.index[UNK_TOKEN]
        for pos, tok in enumerate(text.split()[: seq_len - 1], start=1):
            ids[pos] = self.index.get(tok, unk)
            mask[pos] = True
        return TokenSequence(ids=ids, mask=mask)

    def decode_tokens(self, seq: TokenSequence) -> list[str]:
        """Token strings at the unmasked positions (start token included)."""
        return [self.tokens[int(i)] for i, real in zip(seq.ids, seq.mask) if real]


def encode_dataset(
    records: Sequence[LabeledText], vocab: Vocab, seq_len: int
) -> tuple[list[TokenSequence], np.ndarray]:
    seqs = [vocab.encode(rec.text, seq_len) for rec in records]
    labels = np.array([rec.label for rec in records], dtype=np.int64)
    return seqs, labels
