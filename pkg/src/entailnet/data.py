"""SNLI ingestion, tokenization, padded batches, and a synthetic entailment task."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .vocab import Vocabulary

log = logging.getLogger(__name__)

LABELS = ("entailment", "neutral", "contradiction")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
NO_CONSENSUS = "-"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class DataError(ValueError):
    pass


@dataclass
class Example:
    premise: list[str]
    hypothesis: list[str]
    label: int
    pair_id: str = ""

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise DataError(f"example {self.pair_id!r}: empty premise or hypothesis")
        if self.label not in (0, 1, 2):
            raise DataError(f"example {self.pair_id!r}: label {self.label} out of range")


def tokenize(sentence: str) -> list[str]:
    """Lowercase, split on whitespace, detach punctuation."""
    return _TOKEN_RE.findall(sentence.lower())


@dataclass
class ParseStats:
    kept: int = 0
    skipped: int = 0


def parse_snli(path: str | Path, stats: ParseStats | None = None) -> Iterator[Example]:
    """Stream examples from an SNLI JSON-lines file.

    Pairs whose ``gold_label`` is ``"-"`` (no annotator consensus) are skipped
    and counted in ``stats``.
    """
    stats = stats if stats is not None else ParseStats()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                gold = rec["gold_label"]
                s1, s2 = rec["sentence1"], rec["sentence2"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            if gold == NO_CONSENSUS:
                stats.skipped += 1
                continue
            if gold not in LABEL_INDEX:
                raise DataError(f"{path}:{lineno}: unknown gold_label {gold!r}")
            pair_id = str(rec.get("pairID", lineno))
            try:
                ex = Example(tokenize(s1), tokenize(s2), LABEL_INDEX[gold], pair_id)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            stats.kept += 1
            yield ex
    if stats.skipped:
        log.info("%s: kept %d pairs, skipped %d without consensus", path, stats.kept, stats.skipped)


def write_jsonl(examples: Iterable[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "gold_label": LABELS[ex.label],
                "sentence1": " ".join(ex.premise),
                "sentence2": " ".join(ex.hypothesis),
                "pairID": ex.pair_id,
            }
            fh.write(json.dumps(rec) + "\n")


@dataclass
class Batch:
    premise_ids: np.ndarray
    premise_mask: np.ndarray
    hypothesis_ids: np.ndarray
    hypothesis_mask: np.ndarray
    labels: np.ndarray
    premise_tokens: list[list[str]]
    hypothesis_tokens: list[list[str]]

    def __len__(self) -> int:
        return len(self.labels)

    def unpad(self) -> list[tuple[list[str], list[str]]]:
        out = []
        for i in range(len(self)):
            p = [t for t, m in zip(self.premise_tokens[i], self.premise_mask[i]) if m]
            h = [t for t, m in zip(self.hypothesis_tokens[i], self.hypothesis_mask[i]) if m]
            out.append((p, h))
        return out


def _pad(seqs: Sequence[Sequence[str]], vocab: Vocabulary):
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), -1, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    padded = []
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = [vocab.index(t) for t in s]
        mask[i, : len(s)] = True
        padded.append(list(s) + [""] * (n - len(s)))
    return ids, mask, padded


def collate(examples: Sequence[Example], vocab: Vocabulary) -> Batch:
    p_ids, p_mask, p_tok = _pad([e.premise for e in examples], vocab)
    h_ids, h_mask, h_tok = _pad([e.hypothesis for e in examples], vocab)
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return Batch(p_ids, p_mask, h_ids, h_mask, labels, p_tok, h_tok)


def make_batches(
    examples: Sequence[Example],
    batch_size: int,
    vocab: Vocabulary,
    seed: int | None = None,
) -> Iterator[Batch]:
    """Right-padded batches; shuffled with ``seed`` unless it is None."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if seed is not None:
        np.random.default_rng(seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start : start + batch_size]], vocab)


# ---------------------------------------------------------------- synthetic task


@dataclass
class SynthSpec:
    n_examples: int = 3000
    vocab_size: int = 50
    premise_len: tuple[int, int] = (3, 5)
    hypothesis_len: tuple[int, int] = (1, 2)
    n_antonym_pairs: int = 5
    seed: int = 0


@dataclass
class SynthDataset:
    examples: list[Example]
    alignments: list[list[int | None]]
    antonyms: dict[str, str] = field(default_factory=dict)

    def write(self, path: str | Path) -> None:
        """JSON lines in SNLI shape plus an ``.align.json`` sidecar."""
        path = Path(path)
        write_jsonl(self.examples, path)
        sidecar = {
            "antonyms": self.antonyms,
            "alignments": {ex.pair_id: al for ex, al in zip(self.examples, self.alignments)},
        }
        path.with_suffix(".align.json").write_text(json.dumps(sidecar))


def synth_label(premise: Sequence[str], hypothesis: Sequence[str], antonyms: dict[str, str]) -> int:
    """The planted-correspondence rule: antonym clash, then containment."""
    pset = set(premise)
    if any(antonyms.get(t) in pset for t in hypothesis):
        return LABEL_INDEX["contradiction"]
    if all(t in pset for t in hypothesis):
        return LABEL_INDEX["entailment"]
    return LABEL_INDEX["neutral"]


def gen_synth(spec: SynthSpec) -> SynthDataset:
    """Planted-correspondence pairs with balanced labels.

    The premise is a set of distinct words that never holds both members of
    an antonym pair. The hypothesis copies premise words; for a
    contradiction one copy is swapped for its antonym, for a neutral pair
    one copy is swapped for a word unrelated to the premise. Each
    hypothesis token's alignment is the premise position it came from, or
    None for the unrelated word.
    """
    rng = np.random.default_rng(spec.seed)
    words = [f"w{i:02d}" for i in range(spec.vocab_size)]
    antonyms: dict[str, str] = {}
    for j in range(spec.n_antonym_pairs):
        a, b = words[2 * j], words[2 * j + 1]
        antonyms[a], antonyms[b] = b, a
    polar = list(antonyms)

    def draw_premise(n: int, need_polar: bool) -> list[str]:
        chosen: list[str] = []
        if need_polar:
            chosen.append(polar[rng.integers(len(polar))])
        for w in rng.permutation(words):
            if len(chosen) == n:
                break
            if w in chosen or antonyms.get(w) in chosen:
                continue
            chosen.append(str(w))
        rng.shuffle(chosen)
        return chosen

    examples, alignments = [], []
    for n in range(spec.n_examples):
        label = int(rng.integers(3))
        lp = int(rng.integers(spec.premise_len[0], spec.premise_len[1] + 1))
        lh = int(rng.integers(spec.hypothesis_len[0], min(spec.hypothesis_len[1], lp) + 1))
        premise = draw_premise(lp, need_polar=label == LABEL_INDEX["contradiction"])
        if label == LABEL_INDEX["contradiction"]:
            flip_pos = int(rng.choice([i for i, w in enumerate(premise) if w in antonyms]))
            others = [i for i in range(lp) if i != flip_pos]
            positions = [flip_pos] + list(rng.choice(others, lh - 1, replace=False))
        else:
            positions = [int(p) for p in rng.choice(lp, lh, replace=False)]
        rng.shuffle(positions)
        hypothesis = [premise[p] for p in positions]
        align: list[int | None] = [int(p) for p in positions]
        if label == LABEL_INDEX["contradiction"]:
            j = positions.index(flip_pos)
            hypothesis[j] = antonyms[premise[flip_pos]]
        elif label == LABEL_INDEX["neutral"]:
            pset = set(premise)
            fresh = [w for w in words if w not in pset and antonyms.get(w) not in pset]
            j = int(rng.integers(lh))
            hypothesis[j] = fresh[rng.integers(len(fresh))]
            align[j] = None
        assert synth_label(premise, hypothesis, antonyms) == label
        examples.append(Example(premise, hypothesis, label, f"synth-{spec.seed}-{n}"))
        alignments.append(align)
    return SynthDataset(examples, alignments, antonyms)
