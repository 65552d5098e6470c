"""Vocabulary, word2vec text loading, and the embedding-table policy.

Words that have a pretrained vector keep it frozen. Training words without
one get a tunable row drawn from U(-0.05, 0.05). Words first seen at
inference get a fixed pseudo-random vector derived from the token string.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .autodiff import DimensionError, Tensor, add, matmul

log = logging.getLogger(__name__)

DELIM = "<delim>"
UNK = "<unk>"
RESERVED = (DELIM, UNK)
INIT_RANGE = 0.05


class Word2VecFormatError(ValueError):
    pass


class Vocabulary:
    """Bijection between tokens and indices, reserved tokens first."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for tok in RESERVED:
            self.add(tok)
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, sentences: Iterable[Iterable[str]]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for sent in sentences:
            for tok in sent:
                seen.setdefault(tok)
        return cls(seen)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.itos.append(token)
            self.stoi[token] = idx
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    @property
    def delim(self) -> int:
        return self.stoi[DELIM]

    @property
    def unk(self) -> int:
        return self.stoi[UNK]

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok in self.itos:
            h.update(tok.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.itos):
                fh.write(f"{i}\t{tok}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                idx, tok = line.rstrip("\n").split("\t", 1)
                if vocab.add(tok) != int(idx):
                    raise ValueError(f"{path}:{lineno}: index {idx} out of order for {tok!r}")
        return vocab


@dataclass
class Word2VecRows:
    vectors: dict[str, np.ndarray]
    dim: int
    missing: list[str] = field(default_factory=list)


def load_word2vec_text(path: str | Path, vocab: Iterable[str] | None = None) -> Word2VecRows:
    """Read vectors in word2vec text format, keeping only words in ``vocab``.

    The optional first line ``"V d"`` is a header. Returns the found rows and
    the vocabulary words that have no vector.
    """
    wanted = None if vocab is None else {t for t in vocab if t not in RESERVED}
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
                dim = int(parts[1])
                continue
            word, nums = parts[0], parts[1:]
            if dim is None:
                dim = len(nums)
            if len(nums) != dim:
                raise Word2VecFormatError(
                    f"{path}:{lineno}: expected {dim} values for {word!r}, found {len(nums)}"
                )
            if wanted is not None and word not in wanted:
                continue
            try:
                vectors[word] = np.array([float(v) for v in nums])
            except ValueError as exc:
                raise Word2VecFormatError(f"{path}:{lineno}: {exc}") from None
    if dim is None:
        raise Word2VecFormatError(f"{path}: no vectors found")
    missing = sorted(wanted - vectors.keys()) if wanted is not None else []
    log.info("word2vec: %d rows found, %d vocabulary words missing", len(vectors), len(missing))
    return Word2VecRows(vectors, dim, missing)


def inference_oov_vector(token: str, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed random vector for a token never seen in training."""
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_RANGE, INIT_RANGE, dim).astype(dtype)


class EmbeddingTable:
    """``[V, d]`` word vectors with a per-row frozen flag."""

    def __init__(self, matrix: np.ndarray, frozen: np.ndarray, seed: int):
        self.matrix = matrix
        self.frozen = np.asarray(frozen, dtype=bool)
        self.seed = seed

    @classmethod
    def build(
        cls,
        vocab: Vocabulary,
        dim: int,
        pretrained: Word2VecRows | None = None,
        seed: int = 0,
    ) -> "EmbeddingTable":
        if pretrained is not None and pretrained.dim != dim:
            raise DimensionError(f"embedding dim {dim} but word2vec file has {pretrained.dim}")
        rng = np.random.default_rng(seed)
        matrix = rng.uniform(-INIT_RANGE, INIT_RANGE, (len(vocab), dim))
        frozen = np.zeros(len(vocab), dtype=bool)
        if pretrained is not None:
            for tok, vec in pretrained.vectors.items():
                idx = vocab.stoi.get(tok)
                if idx is not None and tok not in RESERVED:
                    matrix[idx] = vec
                    frozen[idx] = True
        return cls(matrix, frozen, seed)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_tunable(self) -> int:
        # UNK is a placeholder; inference OOV vectors never come from the table
        return int((~self.frozen).sum()) - 1

    def lookup(self, vocab: Vocabulary, token: str, phase: str = "train") -> tuple[np.ndarray, bool]:
        """Vector for ``token`` and whether it is tunable."""
        idx = vocab.stoi.get(token)
        if idx is None or idx == vocab.unk:
            if phase == "train":
                raise KeyError(f"token {token!r} is not in the training vocabulary")
            return inference_oov_vector(token, self.dim, self.matrix.dtype), False
        return self.matrix[idx], not self.frozen[idx]


def project(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``W_proj x + b_proj`` for column vectors ``x [..., d, n]``."""
    if x.shape[-2] != weight.shape[1]:
        raise DimensionError(f"project: input dim {x.shape[-2]} but weight is {weight.shape}")
    return add(matmul(weight, x), bias)
