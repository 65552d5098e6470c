"""Save and load a trained model as a single ``.npz`` file.

The archive holds every parameter array, the frozen-row mask, and a JSON
metadata blob with the model config, the vocabulary and its digest. Loading
re-derives the digest and refuses a file whose vocabulary does not match.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import EntailmentModel, ModelConfig, ParameterSet
from .vocab import Vocabulary

FORMAT_VERSION = 1
_META = "__meta__"
_FROZEN = "__frozen_rows__"


class IntegrityError(ValueError):
    """Checkpoint is unreadable or its contents disagree with its metadata."""


def save(model: EntailmentModel, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": model.vocab.itos,
        "vocab_digest": model.vocab.digest(),
        "extra": extra or {},
    }
    arrays = {f"param/{n}": a for n, a in model.params.arrays().items()}
    arrays[_FROZEN] = model.params.frozen_rows
    arrays[_META] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load(path: str | Path, dtype=None) -> tuple[EntailmentModel, dict]:
    """Model plus the ``extra`` dict stored with it."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            files = {name: npz[name] for name in npz.files}
    except (OSError, ValueError) as exc:
        raise IntegrityError(f"{path}: cannot read checkpoint: {exc}") from exc
    if _META not in files:
        raise IntegrityError(f"{path}: no metadata block")
    try:
        meta = json.loads(files.pop(_META).tobytes().decode("utf-8"))
    except ValueError as exc:
        raise IntegrityError(f"{path}: corrupt metadata: {exc}") from exc
    if meta.get("format") != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported format {meta.get('format')!r}")

    vocab = Vocabulary()
    for tok in meta["vocab"]:
        vocab.add(tok)
    if vocab.itos != meta["vocab"] or vocab.digest() != meta["vocab_digest"]:
        raise IntegrityError(f"{path}: vocabulary digest mismatch")

    frozen = files.pop(_FROZEN, None)
    arrays = {name.split("/", 1)[1]: a for name, a in files.items() if name.startswith("param/")}
    if dtype is not None:
        arrays = {n: a.astype(dtype) for n, a in arrays.items()}
    config = ModelConfig(**meta["config"])
    params = ParameterSet(arrays, frozen)
    if params.get("embed.E") is not None and params["embed.E"].shape[0] != len(vocab):
        raise IntegrityError(f"{path}: embedding rows {params['embed.E'].shape[0]} != vocabulary size {len(vocab)}")
    return EntailmentModel(config, vocab, params), meta.get("extra", {})
