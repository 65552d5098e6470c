"""Command-line entry point.

Commands: ``train``, ``grid``, ``eval``, ``predict``, ``params``, ``attend``
and ``synth``. Settings come from built-in defaults, then an optional
``key = value`` config file, then flags (flags win).

Exit codes: 0 ok, 2 configuration, 3 data or parse, 4 checkpoint
integrity, 5 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .autodiff import Precision
from .data import LABELS, DataError, Example, ParseStats, SynthSpec, gen_synth, parse_snli, tokenize
from .model import COUNTING_ASSUMPTIONS, VARIANTS, ConfigError, ModelConfig, build_model, count_params
from .training import PAPER_GRID, DivergenceError, TrainConfig, evaluate, grid_search, train
from .viz import write_attention
from .vocab import EmbeddingTable, Vocabulary, Word2VecFormatError, load_word2vec_text

log = logging.getLogger("entailnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTEGRITY, EXIT_DIVERGENCE = 0, 2, 3, 4, 5

# every setting the config file may carry, with its default and type
SETTINGS: dict[str, tuple[object, type]] = {
    "model": ("wordbyword", str),
    "two_way": (False, bool),
    "k": (100, int),
    "embed_dim": (300, int),
    "classifier_hidden": (False, bool),
    "lr": (3e-4, float),
    "dropout": (0.0, float),
    "l2": (0.0, float),
    "batch": (32, int),
    "epochs": (20, int),
    "patience": (5, int),
    "seed": (0, int),
    "jobs": (1, int),
    "precision": ("train", str),
    "train": (None, str),
    "dev": (None, str),
    "test": (None, str),
    "data": (None, str),
    "embeddings": (None, str),
    "checkpoint": (None, str),
    "out": (None, str),
    "limit": (None, int),
    "n": (3000, int),
    "vocab_size": (50, int),
    "premise_len": ("3,5", str),
    "hypothesis_len": ("1,2", str),
    "antonym_pairs": (5, int),
}
PATH_KEYS = ("train", "dev", "test", "data", "embeddings", "checkpoint")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _coerce(key: str, raw, kind: type):
    if raw is None or isinstance(raw, kind):
        return raw
    text = str(raw).strip()
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(f"{key}: expected a boolean, got {text!r}", EXIT_CONFIG)
    try:
        return kind(text)
    except ValueError:
        raise CliError(f"{key}: expected {kind.__name__}, got {text!r}", EXIT_CONFIG) from None


def read_config_file(path: str | Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys allowed."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}", EXIT_CONFIG) from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise CliError(f"{path}:{lineno}: expected 'key = value'", EXIT_CONFIG)
        if key not in SETTINGS:
            raise CliError(f"{path}:{lineno}: unknown setting {key!r}", EXIT_CONFIG)
        out[key] = _coerce(key, value.strip(), SETTINGS[key][1])
    return out


def resolve(args: argparse.Namespace) -> dict:
    settings = {key: default for key, (default, _) in SETTINGS.items()}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["precision"] not in ("train", "check"):
        raise CliError(f"precision must be 'train' or 'check', got {settings['precision']!r}", EXIT_CONFIG)
    return settings


def write_resolved(settings: dict, path: Path) -> None:
    lines = [f"# resolved settings for `{settings['command']}`"]
    for key in SETTINGS:
        value = settings[key]
        if value is not None:
            lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
    path.write_text("\n".join(lines) + "\n")


def model_config(s: dict) -> ModelConfig:
    variant = s["model"] + ("-two-way" if s["two_way"] else "")
    if variant not in VARIANTS:
        raise CliError(f"--two-way needs an attentive model, got {s['model']!r}", EXIT_CONFIG)
    try:
        return ModelConfig(variant, s["k"], s["embed_dim"], s["classifier_hidden"])
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def train_config(s: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr=s["lr"], dropout=s["dropout"], l2=s["l2"], batch_size=s["batch"],
            max_epochs=s["epochs"], patience=s["patience"], seed=s["seed"], precision=s["precision"],
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def require(s: dict, *keys: str) -> None:
    for key in keys:
        if s.get(key) is None:
            raise CliError(f"--{key.replace('_', '-')} is required for `{s['command']}`", EXIT_CONFIG)
        if key in PATH_KEYS and not Path(s[key]).exists():
            raise CliError(f"{key} path does not exist: {s[key]}", EXIT_CONFIG)


def load_examples(path: str, limit: int | None = None) -> list[Example]:
    stats = ParseStats()
    out = []
    for ex in parse_snli(path, stats):
        out.append(ex)
        if limit is not None and len(out) >= limit:
            break
    log.info("%s: kept %d, skipped %d without consensus", path, stats.kept, stats.skipped)
    if not out:
        raise CliError(f"{path}: no labelled examples", EXIT_DATA)
    return out


def out_dir(s: dict) -> Path:
    path = Path(s["out"] or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _pretrained(s: dict, vocab_sentences):
    if not s["embeddings"]:
        return None
    words = {t for sent in vocab_sentences for t in sent}
    return load_word2vec_text(s["embeddings"], words)


def _build(s: dict, train_data: list[Example], seed: int):
    config = model_config(s)
    pretrained = _pretrained(s, (x for ex in train_data for x in (ex.premise, ex.hypothesis)))
    dtype = Precision(s["precision"]).dtype
    return build_model(config, train_data, pretrained, seed=seed, dtype=dtype)


# ---------------------------------------------------------------- commands


def cmd_train(s: dict) -> int:
    require(s, "train")
    cfg = train_config(s)
    train_data = load_examples(s["train"], s["limit"])
    dev_data = load_examples(s["dev"]) if s["dev"] else None
    model = _build(s, train_data, s["seed"])
    out = out_dir(s)
    write_resolved(s, out / "resolved_config.txt")
    result = train(model, train_data, dev_data, cfg)
    model.params = result.params
    result.history.write(out / "history.jsonl")
    checkpoint.save(model, out / "model.npz", extra={"train": cfg.__dict__, "best_epoch": result.history.best_epoch})
    summary = {"best_epoch": result.history.best_epoch, "best_dev_acc": result.history.best_dev_acc}
    if s["test"]:
        summary["test"] = evaluate(model, load_examples(s["test"])).to_json()
    dump_json(summary, out / "metrics.json")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _grid_values() -> dict:
    return {k: tuple(v) for k, v in PAPER_GRID.items()}


def cmd_grid(s: dict) -> int:
    require(s, "train", "dev")
    base = train_config(s)
    train_data = load_examples(s["train"], s["limit"])
    dev_data = load_examples(s["dev"])
    out = out_dir(s)
    write_resolved(s, out / "resolved_config.txt")
    config = model_config(s)
    pretrained = _pretrained(s, (x for ex in train_data for x in (ex.premise, ex.hypothesis)))
    dtype = Precision(s["precision"]).dtype

    def make(seed: int):
        return build_model(config, train_data, pretrained, seed=seed, dtype=dtype)

    result = grid_search(make, train_data, dev_data, base, _grid_values(), jobs=s["jobs"], keep_params=True)
    result.write_csv(out / "grid.csv")
    best = result.best
    model = make(best.config.seed)
    model.params = best.params
    best.history.write(out / "history.jsonl")
    checkpoint.save(model, out / "model.npz", extra={"train": best.config.__dict__})
    summary = {"lr": best.config.lr, "dropout": best.config.dropout, "l2": best.config.l2,
               "seed": best.config.seed, "best_dev_acc": best.best_dev_acc}
    dump_json(summary, out / "metrics.json")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _load_checkpoint(s: dict):
    require(s, "checkpoint")
    dtype = Precision(s["precision"]).dtype
    model, _ = checkpoint.load(s["checkpoint"], dtype=dtype)
    return model


def cmd_eval(s: dict) -> int:
    require(s, "data")
    model = _load_checkpoint(s)
    metrics = evaluate(model, load_examples(s["data"], s["limit"])).to_json()
    if s["out"]:
        dump_json(metrics, out_dir(s) / "metrics.json")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _pairs(s: dict, args) -> list[Example]:
    if args.premise is not None or args.hypothesis is not None:
        premise, hypothesis = tokenize(args.premise or ""), tokenize(args.hypothesis or "")
        if not premise or not hypothesis:
            raise CliError("--premise and --hypothesis must both be non-empty", EXIT_DATA)
        return [Example(premise, hypothesis, 0)]
    require(s, "data")
    return load_examples(s["data"], s["limit"])


def cmd_predict(s: dict, args) -> int:
    model = _load_checkpoint(s)
    given = args.premise is not None
    for ex in _pairs(s, args):
        pred = model.predict(ex.premise, ex.hypothesis)
        row = {
            "premise": ex.premise,
            "hypothesis": ex.hypothesis,
            "label": pred.label_name,
            "probabilities": dict(zip(LABELS, np.round(pred.probabilities, 6).tolist())),
        }
        if not given:
            row["gold"] = LABELS[ex.label]
        print(json.dumps(row))
    return EXIT_OK


def cmd_attend(s: dict, args) -> int:
    model = _load_checkpoint(s)
    if not model.config.attention:
        raise CliError(f"model variant {model.config.variant!r} has no attention", EXIT_CONFIG)
    out = out_dir(s)
    given = args.premise is not None
    written = []
    for i, ex in enumerate(_pairs(s, args)):
        pred = model.predict(ex.premise, ex.hypothesis, None if given else ex.label)
        written += write_attention(pred.attention, out / f"attention_{i:04d}")
    print(json.dumps({"written": [str(p) for p in written]}))
    return EXIT_OK


def cmd_params(s: dict) -> int:
    config = model_config(s)
    n_words = None
    if s["train"]:
        train_data = load_examples(s["train"], s["limit"])
        vocab = Vocabulary.build(x for ex in train_data for x in (ex.premise, ex.hypothesis))
        pretrained = _pretrained(s, [vocab.itos])
        n_words = EmbeddingTable.build(vocab, config.embed_dim, pretrained).n_tunable
    count = count_params(config, n_words or 0)
    report = {
        "variant": config.variant,
        "k": config.k,
        "theta_M": count.total,
        "groups": count.groups,
        "assumptions": list(COUNTING_ASSUMPTIONS),
    }
    if n_words is not None:
        report["tunable_words"] = n_words
        report["theta_W+M"] = count.with_words
    if count.reference is not None:
        report["reference"] = count.reference
        report["deviation"] = round(count.deviation, 4)
        report["within_5_percent"] = abs(count.deviation) <= 0.05
        if not report["within_5_percent"]:
            log.warning("%s k=%d: %d deviates %.1f%% from %d", config.variant, config.k, count.total,
                        100 * count.deviation, count.reference)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def _length_range(key: str, text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise CliError(f"{key}: expected 'min,max', got {text!r}", EXIT_CONFIG) from None
    return lo, hi


def cmd_synth(s: dict) -> int:
    spec = SynthSpec(
        n_examples=s["n"],
        vocab_size=s["vocab_size"],
        premise_len=_length_range("premise_len", s["premise_len"]),
        hypothesis_len=_length_range("hypothesis_len", s["hypothesis_len"]),
        n_antonym_pairs=s["antonym_pairs"],
        seed=s["seed"],
    )
    try:
        data = gen_synth(spec)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    path = out_dir(s) / f"synth-{spec.seed}.jsonl"
    data.write(path)
    print(json.dumps({"written": str(path), "n": len(data.examples)}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file; flags override it")
    common.add_argument("--model", choices=[v for v in VARIANTS if not v.endswith("two-way")])
    common.add_argument("--two-way", dest="two_way", action="store_const", const=True)
    common.add_argument("--k", type=int)
    common.add_argument("--embed-dim", dest="embed_dim", type=int)
    common.add_argument("--classifier-hidden", dest="classifier_hidden", action="store_const", const=True)
    common.add_argument("--lr", type=float)
    common.add_argument("--dropout", type=float)
    common.add_argument("--l2", type=float)
    common.add_argument("--batch", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--patience", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--precision", choices=["train", "check"])
    common.add_argument("--train")
    common.add_argument("--dev")
    common.add_argument("--test")
    common.add_argument("--data")
    common.add_argument("--embeddings")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--limit", type=int, help="use only the first N examples of the input corpus")
    common.add_argument("--premise")
    common.add_argument("--hypothesis")
    common.add_argument("--n", type=int)
    common.add_argument("--vocab-size", dest="vocab_size", type=int)
    common.add_argument("--premise-len", dest="premise_len")
    common.add_argument("--hypothesis-len", dest="hypothesis_len")
    common.add_argument("--antonym-pairs", dest="antonym_pairs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="entailnet", description="Entailment classifiers with attention.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train one configuration, keep the best-dev checkpoint",
        "grid": "train the lr x dropout x l2 grid and keep the best run",
        "eval": "accuracy, loss and confusion matrix of a checkpoint",
        "predict": "label pairs with a checkpoint",
        "params": "parameter count breakdown against the reference table",
        "attend": "write attention heatmaps (SVG + JSON)",
        "synth": "generate the planted-correspondence dataset",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        s = resolve(args)
        s["command"] = args.command
        if args.command == "train":
            return cmd_train(s)
        if args.command == "grid":
            return cmd_grid(s)
        if args.command == "eval":
            return cmd_eval(s)
        if args.command == "predict":
            return cmd_predict(s, args)
        if args.command == "attend":
            return cmd_attend(s, args)
        if args.command == "params":
            return cmd_params(s)
        return cmd_synth(s)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, Word2VecFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except checkpoint.IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
