"""Datasets: GLUE-style TSV ingestion and seeded synthetic tasks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .embedding import Vocabulary, tokenize, tokenize_pair
from .errors import DataError


@dataclass(frozen=True)
class Example:
    texts: tuple[str, ...]
    label: int


@dataclass
class Dataset:
    name: str
    examples: list[Example]
    num_classes: int

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def is_pair(self) -> bool:
        return bool(self.examples) and len(self.examples[0].texts) == 2

    @property
    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def texts(self) -> Iterator[str]:
        for ex in self.examples:
            yield from ex.texts


def read_tsv(path, text_columns: Sequence[str] = ("sentence",), label_column: str = "label",
             name: str | None = None) -> Dataset:
    """Read a headed, tab-separated file with one or two text columns and an integer label."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty file")
            missing = [c for c in (*text_columns, label_column) if c not in header]
            if missing:
                raise DataError(f"{path}: missing columns {missing}; header is {header}")
            cols = [header.index(c) for c in text_columns]
            lab = header.index(label_column)
            examples = []
            for n, row in enumerate(reader, 2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path}:{n}: expected {len(header)} fields, got {len(row)}")
                try:
                    label = int(row[lab])
                except ValueError:
                    raise DataError(f"{path}:{n}: label {row[lab]!r} is not an integer") from None
                if label < 0:
                    raise DataError(f"{path}:{n}: negative label")
                examples.append(Example(tuple(row[i] for i in cols), label))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not examples:
        raise DataError(f"{path}: no examples")
    return Dataset(name or path.stem, examples, max(2, max(ex.label for ex in examples) + 1))


def write_tsv(dataset: Dataset, path, text_columns: Sequence[str] | None = None) -> None:
    cols = list(text_columns or (["sentence1", "sentence2"] if dataset.is_pair else ["sentence"]))
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
        writer.writerow([*cols, "label"])
        for ex in dataset.examples:
            writer.writerow([*ex.texts, ex.label])


def encode(dataset: Dataset, vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Token ids ``(N, L)`` and labels ``(N,)``.

    A text with no tokens at all is encoded as a single UNK so every
    sequence has at least one position to pool over.
    """
    ids = np.zeros((len(dataset), max_len), dtype=np.int64)
    for i, ex in enumerate(dataset.examples):
        if len(ex.texts) == 2:
            seq = tokenize_pair(ex.texts[0], ex.texts[1], vocab, max_len)
        else:
            seq = tokenize(ex.texts[0], vocab, max_len)
        ids[i] = seq.ids
        if seq.length == 0:
            ids[i, 0] = vocab.unk_id
    return ids, dataset.labels


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# -- synthetic tasks ------------------------------------------------------

POSITIVE = [f"pos{i}" for i in range(10)]
NEGATIVE = [f"neg{i}" for i in range(10)]
KEYS = [f"key{i}" for i in range(20)]
FILLER = [f"w{i}" for i in range(180)]


def _sentence(rng: np.random.Generator, planted: list[str], length: int) -> str:
    words = list(rng.choice(FILLER, size=max(length, len(planted)) - len(planted)))
    for word in planted:
        words.insert(int(rng.integers(0, len(words) + 1)), word)
    return " ".join(words)


def keyword_sentiment(n: int, seed: int, min_len: int = 5, max_len: int = 20) -> Dataset:
    """Label = which of the positive/negative keyword sets is planted more often.

    One or three keywords are planted (an odd count, so no ties) among
    filler words; sentence lengths are uniform in ``[min_len, max_len]``.
    """
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n):
        label = int(rng.integers(0, 2))
        k = int(rng.choice([1, 3]))
        n_pos = int(rng.integers(k // 2 + 1, k + 1)) if label else int(rng.integers(0, k // 2 + 1))
        planted = list(rng.choice(POSITIVE, size=n_pos)) + list(rng.choice(NEGATIVE, size=k - n_pos))
        length = int(rng.integers(min_len, max_len + 1))
        examples.append(Example((_sentence(rng, planted, length),), label))
    return Dataset("keyword-sentiment", examples, 2)


def pair_entailment(n: int, seed: int, min_len: int = 5, max_len: int = 10) -> Dataset:
    """Label 1 when every keyword of the second sentence also occurs in the first."""
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n):
        label = int(rng.integers(0, 2))
        premise_keys = list(rng.choice(KEYS, size=int(rng.integers(2, 5)), replace=False))
        k = int(rng.integers(1, 3))
        if label:
            hyp_keys = list(rng.choice(premise_keys, size=min(k, len(premise_keys)), replace=False))
        else:
            outside = [w for w in KEYS if w not in premise_keys]
            hyp_keys = [str(rng.choice(outside))]
            if k > 1:
                hyp_keys.append(str(rng.choice(premise_keys)))
        first = _sentence(rng, premise_keys, int(rng.integers(min_len, max_len + 1)))
        second = _sentence(rng, hyp_keys, int(rng.integers(min_len, max_len + 1)))
        examples.append(Example((first, second), label))
    return Dataset("pair-entailment", examples, 2)


SYNTHETIC = {"keyword-sentiment": keyword_sentiment, "pair-entailment": pair_entailment}


def synthetic_splits(task: str, num_train: int, num_dev: int, seed: int) -> tuple[Dataset, Dataset]:
    try:
        make = SYNTHETIC[task]
    except KeyError:
        raise DataError(f"unknown synthetic task {task!r}") from None
    return make(num_train, seed), make(num_dev, seed + 1)
