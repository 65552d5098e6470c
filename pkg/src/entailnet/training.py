"""ADAM, the epoch loop with dev-set model selection, and grid search."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Precision, Tape
from .data import LABELS, Example, make_batches
from .dropout import apply_dropout  # noqa: F401  re-exported
from .model import EMBED, EntailmentModel, ParameterSet

log = logging.getLogger(__name__)

PAPER_GRID = {
    "lr": (1e-4, 3e-4, 1e-3),
    "dropout": (0.0, 0.1, 0.2),
    "l2": (0.0, 1e-4, 3e-4, 1e-3),
}


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ParameterSet, **hyper) -> "AdamState":
        m = {n: np.zeros_like(p.data) for n, p in params.items()}
        v = {n: np.zeros_like(p.data) for n, p in params.items()}
        return cls(m, v, **hyper)


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected ADAM update, in place. Frozen embedding rows never move."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if name == EMBED and params.frozen_rows.any():
            step[params.frozen_rows] = 0.0
        p.data -= step.astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    dropout: float = 0.0
    l2: float = 0.0
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    precision: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr < 0 or self.l2 < 0 or self.batch_size < 1:
            raise ValueError("lr and l2 must be >= 0, batch_size >= 1")
        Precision(self.precision)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    dev_acc: float | None


@dataclass
class RunHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def best_dev_acc(self) -> float | None:
        accs = [e.dev_acc for e in self.epochs if e.dev_acc is not None]
        return max(accs) if accs else None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e)) + "\n" for e in self.epochs)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


@dataclass
class Metrics:
    accuracy: float
    loss: float
    confusion: np.ndarray  # rows = gold, cols = predicted
    n: int

    @property
    def precision(self) -> list[float]:
        col = self.confusion.sum(axis=0)
        return [float(self.confusion[i, i] / col[i]) if col[i] else 0.0 for i in range(3)]

    @property
    def recall(self) -> list[float]:
        row = self.confusion.sum(axis=1)
        return [float(self.confusion[i, i] / row[i]) if row[i] else 0.0 for i in range(3)]

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "n": self.n,
            "labels": list(LABELS),
            "precision": dict(zip(LABELS, self.precision)),
            "recall": dict(zip(LABELS, self.recall)),
            "confusion": self.confusion.tolist(),
        }


def evaluate(model: EntailmentModel, examples: Sequence[Example], batch_size: int = 64) -> Metrics:
    from .autodiff import log_softmax_np

    confusion = np.zeros((3, 3), dtype=np.int64)
    loss_sum = 0.0
    for batch in make_batches(examples, batch_size, model.vocab):
        logits = model.forward_batch(batch, "inference").logits.data.astype(np.float64)
        logp = log_softmax_np(logits)
        loss_sum += float(-logp[np.arange(len(batch)), batch.labels].sum())
        np.add.at(confusion, (batch.labels, logits.argmax(axis=1)), 1)
    n = int(confusion.sum())
    return Metrics(float(np.trace(confusion) / n) if n else 0.0, loss_sum / max(n, 1), confusion, n)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


@dataclass
class TrainResult:
    params: ParameterSet
    history: RunHistory


def train(
    model: EntailmentModel,
    train_data: Sequence[Example],
    dev_data: Sequence[Example] | None,
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    stop_at_train_acc: float | None = None,
) -> TrainResult:
    """Fit ``model`` in place and return the best-dev parameters.

    Without dev data, model selection falls back to training accuracy.
    ``stop_at_train_acc`` ends the run once training accuracy reaches it.
    """
    dtype = Precision(config.precision).dtype
    if model.params.dtype != dtype:
        model.params = model.params.copy(dtype)
    params = model.params
    adam = AdamState.zeros_like(params)
    dropout_rng = np.random.default_rng(_epoch_seed(config.seed, 0))
    history = RunHistory()
    best_score, best_params, stale = -1.0, params.copy(), 0

    for epoch in range(1, config.max_epochs + 1):
        for batch in make_batches(train_data, config.batch_size, model.vocab, _epoch_seed(config.seed, epoch)):
            with Tape() as tape:
                loss = model.loss(batch, config.l2, "train", dropout_rng, config.dropout)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"loss became {loss.item()} in epoch {epoch}", epoch)
            gmap = tape.backward(loss)
            grads = {n: gmap[p] for n, p in params.items() if p in gmap}
            try:
                adam_step(params, grads, adam, config.lr)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} in epoch {epoch}", epoch) from None

        train_metrics = evaluate(model, train_data)
        dev_acc = evaluate(model, dev_data).accuracy if dev_data else None
        rec = EpochRecord(epoch, train_metrics.loss, train_metrics.accuracy, dev_acc)
        history.epochs.append(rec)
        log.info("epoch %d: loss %.4f train %.4f dev %s", epoch, rec.train_loss, rec.train_acc, dev_acc)
        if on_epoch:
            on_epoch(rec)

        score = dev_acc if dev_acc is not None else rec.train_acc
        if score > best_score:
            best_score, best_params, stale = score, params.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
        if stop_at_train_acc is not None and rec.train_acc >= stop_at_train_acc:
            break
        if stale >= config.patience:
            break

    return TrainResult(best_params, history)


# ---------------------------------------------------------------- grid search


@dataclass
class GridRun:
    config: TrainConfig
    best_dev_acc: float
    history: RunHistory
    params: ParameterSet | None = None


@dataclass
class GridResult:
    runs: list[GridRun]  # ranked, best first

    @property
    def best(self) -> GridRun:
        return self.runs[0]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lr", "dropout", "l2", "best_dev_acc"])
            for run in self.runs:
                w.writerow([run.config.lr, run.config.dropout, run.config.l2, run.best_dev_acc])


def grid_configs(base: TrainConfig, grids: dict[str, Sequence[float]] = PAPER_GRID) -> list[TrainConfig]:
    """Every (lr, dropout, l2) combination, each with its own derived seed."""
    keys = ("lr", "dropout", "l2")
    for key in keys:
        if not grids.get(key):
            raise ValueError(f"grid for {key} is empty")
    combos = list(itertools.product(*(grids[k] for k in keys)))
    seeds = np.random.SeedSequence(base.seed).generate_state(len(combos))
    return [
        replace(base, seed=int(s), **dict(zip(keys, combo)))
        for combo, s in zip(combos, seeds)
    ]


def grid_search(
    make_model: Callable[[int], EntailmentModel],
    train_data: Sequence[Example],
    dev_data: Sequence[Example],
    base: TrainConfig,
    grids: dict[str, Sequence[float]] = PAPER_GRID,
    jobs: int = 1,
    keep_params: bool = False,
) -> GridResult:
    """Train every grid point and rank by best dev accuracy (ties keep grid order)."""
    configs = grid_configs(base, grids)

    def run(cfg: TrainConfig) -> GridRun:
        result = train(make_model(cfg.seed), train_data, dev_data, cfg)
        acc = result.history.best_dev_acc
        return GridRun(cfg, -1.0 if acc is None else acc, result.history, result.params if keep_params else None)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(run, configs))
    else:
        runs = [run(c) for c in configs]
    order = sorted(range(len(runs)), key=lambda i: (-runs[i].best_dev_acc, i))
    return GridResult([runs[i] for i in order])
