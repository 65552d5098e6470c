"""Entailment models: conditional encoding with optional attention.

Variants:

* ``conditional-shared``: one LSTM reads the premise, then the delimiter and
  the hypothesis, starting from the premise's final cell state.
* ``conditional``: the same with a second LSTM for the hypothesis.
* ``attention``: ``conditional`` plus attention from the last output.
* ``wordbyword``: ``conditional`` plus attention at every hypothesis word.
* ``*-two-way``: run the attentive model on (premise, hypothesis) and on the
  swapped pair with the same weights and classify the concatenation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .attention import AttentionRecord, AttnParams, attend_last, attend_wordbyword, combine, init_attention, two_way
from .autodiff import Tensor
from .data import LABELS, Batch, Example, collate
from .dropout import apply_dropout
from .lstm import LstmParams, LstmState, encode, init_lstm
from .vocab import EmbeddingTable, Vocabulary, inference_oov_vector, project

VARIANTS = (
    "conditional-shared",
    "conditional",
    "attention",
    "wordbyword",
    "attention-two-way",
    "wordbyword-two-way",
)
EMBED = "embed.E"


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "wordbyword"
    k: int = 100
    embed_dim: int = 300
    classifier_hidden: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.k < 1 or self.embed_dim < 1:
            raise ConfigError("k and embed_dim must be positive")

    @property
    def shared(self) -> bool:
        return self.variant == "conditional-shared"

    @property
    def attention(self) -> str | None:
        if self.variant.startswith("attention"):
            return "last"
        if self.variant.startswith("wordbyword"):
            return "wordbyword"
        return None

    @property
    def two_way(self) -> bool:
        return self.variant.endswith("two-way")

    @property
    def rep_dim(self) -> int:
        return 2 * self.k if self.two_way else self.k

    def to_dict(self) -> dict:
        return asdict(self)


class ParameterSet:
    """Named trainable tensors plus the frozen-row mask of the embedding table."""

    def __init__(self, arrays: dict[str, np.ndarray], frozen_rows: np.ndarray | None = None):
        self.tensors = {n: Tensor(a, requires_grad=True, name=n) for n, a in arrays.items()}
        n_rows = arrays[EMBED].shape[0] if EMBED in arrays else 0
        self.frozen_rows = (
            np.zeros(n_rows, dtype=bool) if frozen_rows is None else np.asarray(frozen_rows, dtype=bool)
        )

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def get(self, name: str, default=None):
        return self.tensors.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def model_names(self) -> list[str]:
        """Everything but word embeddings: the parameters counted as |θ|_M."""
        return [n for n in self.tensors if n != EMBED]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.tensors.items()}

    def copy(self, dtype=None) -> "ParameterSet":
        return ParameterSet(
            {n: np.array(t.data, dtype=dtype or t.dtype) for n, t in self.tensors.items()},
            self.frozen_rows.copy(),
        )

    def size(self, names: Iterable[str] | None = None) -> int:
        names = self.tensors if names is None else names
        return int(sum(self.tensors[n].data.size for n in names))


def lstm_prefixes(config: ModelConfig) -> tuple[str, str]:
    return ("lstm", "lstm") if config.shared else ("lstm_premise", "lstm_hypothesis")


def init_params(
    config: ModelConfig,
    embeddings: EmbeddingTable,
    seed: int = 0,
    dtype=np.float32,
) -> ParameterSet:
    """Random initial parameters; embedding rows come from ``embeddings``."""
    if embeddings.dim != config.embed_dim:
        raise ConfigError(f"embedding table has d={embeddings.dim}, config says {config.embed_dim}")
    rng = np.random.default_rng(seed)
    k, d = config.k, config.embed_dim
    arrays: dict[str, np.ndarray] = {EMBED: embeddings.matrix.astype(dtype)}
    s = 1.0 / np.sqrt(d)
    arrays["proj.W"] = rng.uniform(-s, s, (k, d)).astype(dtype)
    arrays["proj.b"] = np.zeros((k, 1), dtype=dtype)
    for prefix in dict.fromkeys(lstm_prefixes(config)):
        arrays.update(init_lstm(rng, k, prefix, dtype))
    if config.attention:
        arrays.update(init_attention(rng, k, config.attention == "wordbyword", dtype))
    width = config.rep_dim
    if config.classifier_hidden:
        s = 1.0 / np.sqrt(width)
        arrays["cls.W1"] = rng.uniform(-s, s, (k, width)).astype(dtype)
        arrays["cls.b1"] = np.zeros((k, 1), dtype=dtype)
        width = k
    s = 1.0 / np.sqrt(width)
    arrays["cls.W2"] = rng.uniform(-s, s, (3, width)).astype(dtype)
    arrays["cls.b2"] = np.zeros((3, 1), dtype=dtype)
    return ParameterSet(arrays, embeddings.frozen)


@dataclass
class Prediction:
    probabilities: np.ndarray
    label: int
    attention: AttentionRecord | None = None

    @property
    def label_name(self) -> str:
        return LABELS[self.label]


@dataclass
class ForwardResult:
    logits: Tensor
    # per direction: list of [B, 1, L] rows (word-by-word) or a single row
    attention: list[list[Tensor]]


class EntailmentModel:
    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: ParameterSet):
        self.config = config
        self.vocab = vocab
        self.params = params

    # -------------------------------------------------------------- pieces

    def _embed(self, ids: np.ndarray, tokens: Sequence[Sequence[str]], phase: str) -> Tensor:
        """Word vectors ``[B, d, L]``; unknown tokens get their fixed OOV vector."""
        E = self.params[EMBED]
        unk = ids == self.vocab.unk
        x = ad.gather_columns(E, np.where(unk, -1, ids))
        if unk.any():
            extra = np.zeros(x.shape, dtype=E.dtype)
            for b, j in zip(*np.nonzero(unk)):
                extra[b, :, j] = inference_oov_vector(tokens[b][j], E.shape[1], E.dtype)
            x = ad.add(x, Tensor(extra))
        return x

    def _inputs(self, ids, tokens, phase, rng, dropout) -> Tensor:
        x = project(self._embed(ids, tokens, phase), self.params["proj.W"], self.params["proj.b"])
        return apply_dropout(x, dropout, phase, rng)

    def _direction(self, first, second, phase, rng, dropout):
        """Representation of one (premise, hypothesis) reading order.

        ``first`` and ``second`` are ``(ids, mask, tokens)`` triples; the
        second sequence gets the delimiter prepended.
        """
        p_ids, p_mask, p_tok = first
        h_ids, h_mask, h_tok = second
        B = len(p_ids)
        h_ids = np.concatenate([np.full((B, 1), self.vocab.delim), h_ids], axis=1)
        h_mask = np.concatenate([np.ones((B, 1), dtype=bool), h_mask], axis=1)
        h_tok = [["<delim>"] + list(t) for t in h_tok]

        pre, hyp = lstm_prefixes(self.config)
        premise = encode(
            self._inputs(p_ids, p_tok, phase, rng, dropout), LstmParams.from_mapping(self.params, pre), mask=p_mask
        )
        k = self.config.k
        init = LstmState(Tensor(np.zeros((B, k, 1), dtype=self.params.dtype)), premise.final.c)
        hypothesis = encode(
            self._inputs(h_ids, h_tok, phase, rng, dropout),
            LstmParams.from_mapping(self.params, hyp),
            init=init,
            mask=h_mask,
        )
        h_last = hypothesis.final.h
        kind = self.config.attention
        if kind is None:
            return h_last, []
        att = AttnParams.from_mapping(self.params)
        if kind == "last":
            alpha, r = attend_last(premise.Y, h_last, att, p_mask)
            return combine(r, h_last, att), [alpha]
        steps = ad.columns(hypothesis.Y, 1, hypothesis.Y.shape[-1])
        alphas, r = attend_wordbyword(premise.Y, steps, att, p_mask, h_mask[:, 1:])
        return combine(r, h_last, att), alphas

    def forward_batch(self, batch: Batch, phase: str = "inference", rng=None, dropout: float = 0.0) -> ForwardResult:
        first = (batch.premise_ids, batch.premise_mask, batch.premise_tokens)
        second = (batch.hypothesis_ids, batch.hypothesis_mask, batch.hypothesis_tokens)
        rep, alphas = self._direction(first, second, phase, rng, dropout)
        attention = [alphas]
        if self.config.two_way:
            rep_back, alphas_back = self._direction(second, first, phase, rng, dropout)
            rep = two_way(rep, rep_back)
            attention.append(alphas_back)
        rep = apply_dropout(rep, dropout, phase, rng)
        if self.config.classifier_hidden:
            rep = ad.tanh(ad.add(ad.matmul(self.params["cls.W1"], rep), self.params["cls.b1"]))
        logits = ad.add(ad.matmul(self.params["cls.W2"], rep), self.params["cls.b2"])
        return ForwardResult(ad.reshape(logits, (len(batch), 3)), attention)

    # -------------------------------------------------------------- public API

    def loss(self, batch: Batch, l2: float = 0.0, phase: str = "train", rng=None, dropout: float = 0.0) -> Tensor:
        """Mean cross-entropy plus ``l2 / 2 * ||θ_M||²``."""
        if len(batch) == 0:
            raise ValueError("loss of an empty batch")
        result = self.forward_batch(batch, phase, rng, dropout)
        loss = ad.cross_entropy(result.logits, batch.labels)
        if l2:
            sq = [ad.total(ad.mul(self.params[n], self.params[n])) for n in self.params.model_names()]
            penalty = sq[0]
            for term in sq[1:]:
                penalty = ad.add(penalty, term)
            loss = ad.add(loss, ad.scale(penalty, 0.5 * l2))
        return loss

    def predict_batch(self, batch: Batch) -> np.ndarray:
        logits = self.forward_batch(batch, "inference").logits.data
        return logits.argmax(axis=1)

    def predict(self, premise: Sequence[str], hypothesis: Sequence[str], gold: int | None = None) -> Prediction:
        if not premise or not hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")
        batch = collate([Example(list(premise), list(hypothesis), gold or 0)], self.vocab)
        result = self.forward_batch(batch, "inference")
        logits = result.logits.data[0].astype(np.float64)
        probs = np.exp(ad.log_softmax_np(logits))
        label = int(probs.argmax())
        record = None
        if self.config.attention:
            record = attention_record(
                self.config, list(premise), list(hypothesis), result.attention, 0,
                predicted=LABELS[label], gold=None if gold is None else LABELS[gold],
            )
        return Prediction(probs, label, record)


def attention_record(config, premise, hypothesis, attention, index, predicted=None, gold=None):
    """Attention weights of batch row ``index`` trimmed to the real tokens."""
    def rows(alphas, n_cols, n_rows):
        out = [a.data[index, 0, :n_cols].astype(np.float64).tolist() for a in alphas]
        return out[:n_rows]

    weights = rows(attention[0], len(premise), len(hypothesis))
    extra = {}
    if config.two_way:
        extra["weights_reverse"] = rows(attention[1], len(hypothesis), len(premise))
    return AttentionRecord(premise, hypothesis, weights, config.variant, predicted, gold, extra)


# ---------------------------------------------------------------- counting

# |θ|_M from the results table, keyed by (variant, k).
TABLE_COUNTS = {
    ("conditional-shared", 100): 111_000,
    ("conditional-shared", 159): 252_000,
    ("conditional", 116): 252_000,
    ("attention", 100): 242_000,
    ("attention-two-way", 100): 242_000,
    ("wordbyword", 100): 252_000,
    ("wordbyword-two-way", 100): 252_000,
}

COUNTING_ASSUMPTIONS = (
    "projection d->k with bias",
    "LSTM: four gates, each [k x 2k] weights + k bias",
    "attention maps have no biases; w is a k-vector",
    "classifier: softmax layer [3 x rep] + 3 bias (rep = k, or 2k for two-way)",
    "optional hidden tanh layer [k x rep] + k before the softmax layer",
    "word embeddings excluded from |θ|_M",
)


@dataclass
class ParamCount:
    total: int
    groups: dict[str, int]
    reference: int | None = None
    with_words: int | None = None

    @property
    def deviation(self) -> float | None:
        if self.reference is None:
            return None
        return (self.total - self.reference) / self.reference


def count_params(config: ModelConfig, n_tunable_words: int = 0) -> ParamCount:
    """Analytic |θ|_M with a per-group breakdown.

    ``n_tunable_words`` adds ``d`` parameters per tunable word row to give
    |θ|_{W+M}.
    """
    k, d = config.k, config.embed_dim
    groups = {"projection": k * d + k}
    n_lstm = 1 if config.shared else 2
    groups["lstm"] = n_lstm * 4 * (2 * k * k + k)
    if config.attention:
        n_mats = 4 + (2 if config.attention == "wordbyword" else 0)
        groups["attention"] = n_mats * k * k + k
    width = config.rep_dim
    cls = 0
    if config.classifier_hidden:
        cls += k * width + k
        width = k
    groups["classifier"] = cls + 3 * width + 3
    total = sum(groups.values())
    return ParamCount(
        total,
        groups,
        TABLE_COUNTS.get((config.variant, k)),
        total + d * n_tunable_words,
    )


def build_model(
    config: ModelConfig,
    train_examples: Sequence[Example],
    pretrained=None,
    seed: int = 0,
    dtype=np.float32,
) -> EntailmentModel:
    """Vocabulary from the training pairs, embeddings, and fresh parameters."""
    vocab = Vocabulary.build(s for ex in train_examples for s in (ex.premise, ex.hypothesis))
    table = EmbeddingTable.build(vocab, config.embed_dim, pretrained, seed=seed)
    return EntailmentModel(config, vocab, init_params(config, table, seed=seed + 1, dtype=dtype))
