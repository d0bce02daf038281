"""Query encoding: tokenizer, frozen toy embeddings, LSTM and dynamic filters."""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionError, InputError
from .io_utils import atomic_write_text
from .rng import derive_seed, make_rng

MAX_WORDS = 15
EMBEDDING_DIM = 300
UNKNOWN_TOKEN = "<unk>"

_STRIP_PUNCT = str.maketrans("", "", string.punctuation)


def split_words(text: str) -> List[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return text.lower().translate(_STRIP_PUNCT).split()


class Vocabulary:
    """Contiguous token ids; id 0 is always the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: List[str] = [UNKNOWN_TOKEN]
        self.index: Dict[str, int] = {UNKNOWN_TOKEN: 0}
        for tok in tokens:
            self.add(tok)

    @property
    def unknown_id(self) -> int:
        return 0

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, 0)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for word in split_words(text):
                vocab.add(word)
        return vocab

    def save(self, path) -> None:
        atomic_write_text(path, "".join(tok + "\n" for tok in self.tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != UNKNOWN_TOKEN:
            raise InputError(f"{path}: first line must be the unknown token {UNKNOWN_TOKEN!r}")
        vocab = cls()
        for line_no, tok in enumerate(lines[1:], start=1):
            if not tok or tok in vocab:
                raise InputError(f"{path}:{line_no + 1}: empty or duplicate token {tok!r}")
            vocab.add(tok)
        return vocab


def tokenize(query: str, vocab: Vocabulary, max_words: int = MAX_WORDS) -> List[int]:
    words = split_words(query)
    if not words:
        raise InputError(f"query {query!r} is empty after tokenization")
    return [vocab.id(w) for w in words[:max_words]]


def embedding_row(token: str, seed: int, dim: int = EMBEDDING_DIM) -> np.ndarray:
    rng = make_rng(derive_seed(seed, "embedding", token))
    return rng.uniform(-0.05, 0.05, size=dim)


class EmbeddingTable:
    """Frozen |V| x dim table; each row depends only on (seed, token)."""

    def __init__(self, vocab: Vocabulary, seed: int, dim: int = EMBEDDING_DIM):
        self.seed = seed
        self.dim = dim
        self.matrix = np.stack([embedding_row(tok, seed, dim) for tok in vocab.tokens])
        self.matrix.setflags(write=False)

    def lookup(self, ids: Sequence[int]) -> np.ndarray:
        return self.matrix[np.asarray(ids, dtype=np.int64)]


@dataclass
class SentenceEncoding:
    states: ad.Tensor        # L x d, one LSTM output per word

    @property
    def length(self) -> int:
        return self.states.shape[0]


def lstm_forward(embedded: np.ndarray, w_ih: ad.Tensor, w_hh: ad.Tensor,
                 bias: ad.Tensor) -> SentenceEncoding:
    """Single-layer LSTM from zero state; gate order is input, forget, cell, output."""
    length = embedded.shape[0]
    if not 1 <= length <= MAX_WORDS:
        raise InputError(f"sentence length must be in [1, {MAX_WORDS}], got {length}")
    hidden = w_hh.shape[0]
    if w_ih.shape != (embedded.shape[1], 4 * hidden) or bias.shape != (4 * hidden,):
        raise DimensionError(f"LSTM parameter shapes {w_ih.shape}, {w_hh.shape}, "
                             f"{bias.shape} do not fit input {embedded.shape}")
    projected = ad.add(ad.matmul(ad.Tensor(embedded), w_ih), bias)   # L x 4d
    h = ad.Tensor(np.zeros((1, hidden)))
    c = ad.Tensor(np.zeros((1, hidden)))
    outputs = []
    for t in range(length):
        z = ad.add(projected[t:t + 1], ad.matmul(h, w_hh))
        i_gate = ad.sigmoid(z[:, :hidden])
        f_gate = ad.sigmoid(z[:, hidden:2 * hidden])
        g_cell = ad.tanh(z[:, 2 * hidden:3 * hidden])
        o_gate = ad.sigmoid(z[:, 3 * hidden:])
        c = ad.add(ad.mul(f_gate, c), ad.mul(i_gate, g_cell))
        h = ad.mul(o_gate, ad.tanh(c))
        outputs.append(h)
    return SentenceEncoding(ad.concat(outputs, axis=0))


@dataclass
class DynamicFilter:
    gamma: ad.Tensor         # d x L; column i is the filter generated from word i

    @property
    def words(self) -> int:
        return self.gamma.shape[1]


def make_dynamic_filters(encoding: SentenceEncoding, w_gamma: ad.Tensor,
                         b_gamma: ad.Tensor) -> DynamicFilter:
    """Gamma[:, i] = tanh(W_gamma @ f_l[i] + b_gamma), shared across words.

    Evaluated as a width-1 convolution over the word axis.
    """
    states = encoding.states
    d = states.shape[1]
    if w_gamma.shape != (d, d) or b_gamma.shape != (d,):
        raise DimensionError(f"filter parameters {w_gamma.shape}/{b_gamma.shape} "
                             f"do not match state width {d}")
    kernel = ad.reshape(ad.transpose(w_gamma), (1, d, d))
    responses = ad.add(ad.conv1d(states, kernel, stride=1, padding="valid"), b_gamma)
    return DynamicFilter(ad.transpose(ad.tanh(responses)))
