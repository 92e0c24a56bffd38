"""Vocabulary, tokenization and the concatenated token/position input."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DataError, FormatError

PAD_ID = 0
SEP_TOKEN = "<sep>"

_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _WORD.findall(text.lower())


class Vocabulary:
    """One-to-one token/id lookup.  Id 0 is padding, ``size + 1`` is UNK."""

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        self._id = {tok: i + 1 for i, tok in enumerate(tokens)}
        self._token = list(tokens)

    @classmethod
    def build(cls, texts: Iterable[str], include_sep: bool = False) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(split_words(text))
        tokens = sorted(counts, key=lambda t: (-counts[t], t))
        if include_sep:
            tokens.append(SEP_TOKEN)
        return cls(tokens)

    @property
    def size(self) -> int:
        return len(self._token)

    @property
    def unk_id(self) -> int:
        return self.size + 1

    @property
    def table_rows(self) -> int:
        """Rows needed in an embedding table: pad + tokens + UNK."""
        return self.size + 2

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self._id

    def encode(self, token: str) -> int:
        return self._id.get(token, self.unk_id)

    def decode(self, token_id: int) -> str:
        if 1 <= token_id <= self.size:
            return self._token[token_id - 1]
        if token_id == PAD_ID:
            return "<pad>"
        if token_id == self.unk_id:
            return "<unk>"
        raise ContractError(f"id {token_id} outside vocabulary")

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._token == other._token

    def save(self, path) -> None:
        lines = [f"{tok}\t{i}\n" for tok, i in self._id.items()]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read vocabulary {path}: {exc}") from None
        entries = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            try:
                tok, idx = line.rsplit("\t", 1)
                entries.append((int(idx), tok))
            except ValueError:
                raise FormatError(f"{path}:{n}: expected 'token<TAB>id'") from None
        entries.sort()
        if [i for i, _ in entries] != list(range(1, len(entries) + 1)):
            raise FormatError(f"{path}: ids must be contiguous from 1")
        return cls([tok for _, tok in entries])


@dataclass
class TokenSequence:
    ids: np.ndarray
    length: int


def tokenize(text: str | Sequence[str], vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Map the first ``max_len`` tokens through the vocabulary and zero-pad."""
    words = split_words(text) if isinstance(text, str) else list(text)
    sl = min(len(words), max_len)
    ids = np.zeros(max_len, dtype=np.int64)
    for i in range(sl):
        ids[i] = vocab.encode(words[i])
    return TokenSequence(ids, sl)


def tokenize_pair(first: str, second: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    return tokenize(split_words(first) + [SEP_TOKEN] + split_words(second), vocab, max_len)


def position_encoding(length: int, dim: int) -> np.ndarray:
    if dim < 2:
        raise ContractError("position encoding needs at least 2 dimensions")
    i = np.arange(length, dtype=np.float64)[:, None]
    d = np.arange(dim)
    even = d - (d % 2)
    angle = i / np.power(10000.0, even / dim)
    return np.where(d % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class EmbeddedSequence:
    values: Tensor        # (..., L, D) with D = 2 * D'
    pad_mask: np.ndarray  # (..., L), True at padding


def embed(ids, table: Tensor) -> EmbeddedSequence:
    """Concatenate learned token vectors with sinusoidal position codes.

    ``ids`` may be one sequence ``(L,)`` or a batch ``(B, L)``; a
    :class:`TokenSequence` is accepted too.
    """
    ids = np.asarray(ids.ids if isinstance(ids, TokenSequence) else ids, dtype=np.int64)
    rows, width = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise ContractError(f"token id out of range [0, {rows})")
    tokens = table[ids]
    positions = np.broadcast_to(position_encoding(ids.shape[-1], width), tokens.shape)
    values = ag.concat([tokens, Tensor(positions.copy())], axis=-1)
    return EmbeddedSequence(values, ids == PAD_ID)
