"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary)
before asserting. Criteria that need the SNLI corpus read it from the
directory named by ``SNLI_DIR`` (holding ``snli_1.0_train.jsonl`` and
``snli_1.0_dev.jsonl``) and optional word2vec text vectors from
``WORD2VEC_TXT``; without the corpus they fail and say so.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from entailnet import autodiff as ad
from entailnet.attention import attend_last, attend_wordbyword, combine, init_attention, AttnParams
from entailnet.autodiff import Tensor
from entailnet.data import SynthSpec, collate, gen_synth, make_batches, parse_snli
from entailnet.lstm import GATES, LstmParams, LstmState, init_lstm, lstm_step
from entailnet.model import VARIANTS, ModelConfig, build_model, count_params
from entailnet.training import TrainConfig, evaluate, train
from entailnet.vocab import load_word2vec_text

# ---------------------------------------------------------------- 1. gradients


def _primitive_cases(rng):
    """(name, inputs, loss builder) for one random small shape per primitive."""
    def rand(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    B, k, n, L = (int(x) for x in rng.integers(1, 5, size=4))
    seed = int(rng.integers(2**31))

    def weighted(out):
        # fixed random projection so every entry of the output matters
        w = np.random.default_rng(seed).normal(size=out.shape)
        return ad.total(ad.mul(out, Tensor(w)))

    A, X = rand(k, n), rand(B, n, L)
    yield "matmul", [A, X], lambda: weighted(ad.matmul(A, X))
    P, Q = rand(B, k, n), rand(B, n, L)
    yield "matmul-batched", [P, Q], lambda: weighted(ad.matmul(P, Q))
    U, b = rand(B, k, L), rand(k, 1)
    yield "add", [U, b], lambda: weighted(ad.add(U, b))
    V = rand(B, k, L)
    yield "sub", [U, V], lambda: weighted(ad.sub(U, V))
    yield "mul", [U, V], lambda: weighted(ad.mul(U, V))
    yield "scale", [U], lambda: weighted(ad.scale(U, 1.7))
    yield "tanh", [U], lambda: weighted(ad.tanh(U))
    yield "sigmoid", [U], lambda: weighted(ad.sigmoid(U))
    c = rand(B, k, 1)
    yield "broadcast_cols", [c], lambda: weighted(ad.broadcast_cols(c, L))
    W = rand(B, n, L)
    yield "concat_rows", [U, W], lambda: weighted(ad.concat_rows(U, W))
    yield "concat_cols", [U, V], lambda: weighted(ad.concat_cols([U, V]))
    j = int(rng.integers(L))
    yield "column", [U], lambda: weighted(ad.column(U, j))
    yield "reshape", [U], lambda: weighted(ad.reshape(U, (B, k * L)))
    E = rand(int(rng.integers(2, 6)), k)
    ids = rng.integers(-1, E.shape[0], size=(B, L))
    yield "gather_columns", [E], lambda: weighted(ad.gather_columns(E, ids))
    S = rand(B, 1, L)
    mask = rng.random((B, 1, L)) < 0.7
    mask[..., 0] = True
    yield "softmax_masked", [S], lambda: weighted(ad.softmax_masked(S, mask))
    logits = rand(B, 3)
    labels = rng.integers(0, 3, size=B)
    yield "cross_entropy", [logits], lambda: ad.cross_entropy(logits, labels)


def _model_grad_errors(rng):
    from entailnet.data import Example

    pairs = [
        Example(["a", "b", "c"], ["a", "d"], 0),
        Example(["d", "e", "a", "b", "c"], ["e"], 1),
        Example(["c"], ["b", "c", "d", "e", "a"], 2),
    ]
    errors = {}
    for variant, k in (("conditional", 3), ("attention", 4), ("wordbyword", 3)):
        model = build_model(ModelConfig(variant, k=k, embed_dim=3), pairs, seed=int(rng.integers(1000)), dtype=np.float64)
        # a generic point: at initialization some gradient entries sit near 1e-8,
        # below the floating-point noise of the central difference
        for name in model.params:
            model.params[name].data[:] = rng.normal(scale=0.5, size=model.params[name].shape)
        batch = collate(pairs, model.vocab)
        leaves = [model.params[n] for n in model.params]
        errors[variant] = ad.grad_check(lambda: model.loss(batch, phase="inference"), leaves)
    return errors


def test_criterion_1_gradient_correctness(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}
    for _ in range(100):
        for name, leaves, f in _primitive_cases(rng):
            err = ad.grad_check(f, leaves)
            worst[name] = max(worst.get(name, 0.0), err)
            counts[name] = counts.get(name, 0) + 1
    model_errors = _model_grad_errors(rng)
    elapsed = time.perf_counter() - start
    prim_worst = max(worst.values())
    ok = (
        prim_worst < 1e-4
        and min(counts.values()) >= 100
        and max(model_errors.values()) < 1e-3
        and elapsed < 60
    )
    worst_name = max(worst, key=worst.get)
    detail = (
        f"{len(worst)} primitives x {min(counts.values())} shapes, worst rel err {prim_worst:.1e} ({worst_name}); "
        + ", ".join(f"{v} {e:.1e}" for v, e in model_errors.items())
        + f"; {elapsed:.1f} s"
    )
    assert criterion(1, "gradient correctness", ok, detail)


# ---------------------------------------------------------------- 2. oracles


def test_criterion_2_oracle_equivalence(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    diffs = {"lstm_step": 0.0, "attend_last": 0.0, "attend_wordbyword": 0.0, "combine": 0.0, "forward": 0.0}
    for trial in range(25):
        k = int(rng.integers(2, 6))
        arrays = init_lstm(rng, k, "p", np.float64)
        for g in GATES:
            arrays[f"p.b{g}"] = rng.normal(size=(k, 1))
        params = LstmParams.from_mapping({n: Tensor(a) for n, a in arrays.items()}, "p")
        x, h, c = rng.normal(size=(3, k))
        out = lstm_step(Tensor(x.reshape(1, k, 1)), LstmState(Tensor(h.reshape(1, k, 1)), Tensor(c.reshape(1, k, 1))), params)
        h_ref, c_ref = oracles.lstm_step(x, h, c, arrays, "p")
        diffs["lstm_step"] = max(diffs["lstm_step"], np.abs(out.h.data.ravel() - h_ref).max(), np.abs(out.c.data.ravel() - c_ref).max())

        att = init_attention(rng, k, True, np.float64)
        P = AttnParams.from_mapping({n: Tensor(a) for n, a in att.items()})
        L, T = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        Y, H = rng.normal(size=(k, L)), rng.normal(size=(k, T))
        alpha, r = attend_last(Tensor(Y[None]), Tensor(H[None, :, -1:]), P)
        a_ref, r_ref = oracles.attend_last(Y, H[:, -1], att)
        diffs["attend_last"] = max(diffs["attend_last"], np.abs(alpha.data.ravel() - a_ref).max(), np.abs(r.data.ravel() - r_ref).max())
        alphas, r = attend_wordbyword(Tensor(Y[None]), Tensor(H[None]), P)
        A_ref, r_ref = oracles.attend_wordbyword(Y, H, att)
        got = np.stack([a.data.ravel() for a in alphas])
        diffs["attend_wordbyword"] = max(diffs["attend_wordbyword"], np.abs(got - A_ref).max(), np.abs(r.data.ravel() - r_ref).max())
        out = combine(r, Tensor(H[None, :, -1:]), P)
        diffs["combine"] = max(diffs["combine"], np.abs(out.data.ravel() - oracles.combine(r_ref, H[:, -1], att)).max())

    from entailnet.data import Example

    words = [f"t{i}" for i in range(8)]
    for trial in range(12):
        variant = VARIANTS[trial % len(VARIANTS)]
        hidden = trial >= len(VARIANTS)
        pairs = [
            Example(list(rng.choice(words, int(rng.integers(1, 6)))), list(rng.choice(words, int(rng.integers(1, 6)))), 0)
            for _ in range(4)
        ]
        model = build_model(ModelConfig(variant, k=4, embed_dim=5, classifier_hidden=hidden), pairs, seed=trial, dtype=np.float64)
        arrays = model.params.arrays()
        logits = model.forward_batch(collate(pairs, model.vocab)).logits.data
        for row, ex in zip(logits, pairs):
            probs = np.exp(ad.log_softmax_np(row))
            ref = oracles.probabilities(ex.premise, ex.hypothesis, arrays, model.vocab, variant, hidden)
            diffs["forward"] = max(diffs["forward"], np.abs(probs - ref).max())
    elapsed = time.perf_counter() - start
    ok = max(diffs.values()) < 1e-6
    detail = ", ".join(f"{n} {d:.1e}" for n, d in diffs.items()) + f" (max abs diff); {elapsed:.1f} s"
    assert criterion(2, "reference-oracle equivalence", ok, detail)


# ---------------------------------------------------------------- 3. counts


def test_criterion_3_parameter_counts(criterion):
    rows = [("conditional-shared", 100), ("conditional-shared", 159), ("conditional", 116), ("attention", 100)]
    parts, ok = [], True
    for variant, k in rows:
        count = count_params(ModelConfig(variant, k=k))
        within = abs(count.deviation) <= 0.05
        ok &= within
        parts.append(f"{variant} k={k} {count.total:,} vs {count.reference:,} ({100 * count.deviation:+.1f}%)")
    wbw = count_params(ModelConfig("wordbyword", k=100))
    parts.append(f"word-by-word k=100 {wbw.total:,} vs {wbw.reference:,} ({100 * wbw.deviation:+.1f}%, reported only)")
    assert criterion(3, "parameter counts", ok, "; ".join(parts))


# ---------------------------------------------------------------- SNLI access


def _snli(split: str) -> Path | None:
    root = os.environ.get("SNLI_DIR")
    if not root:
        return None
    path = Path(root) / f"snli_1.0_{split}.jsonl"
    return path if path.exists() else None


def _word2vec(examples):
    path = os.environ.get("WORD2VEC_TXT")
    if not path:
        return None
    words = {t for ex in examples for s in (ex.premise, ex.hypothesis) for t in s}
    return load_word2vec_text(path, words)


def _take(path: Path, n: int | None):
    out = []
    for ex in parse_snli(path):
        out.append(ex)
        if n is not None and len(out) >= n:
            break
    return out


MISSING = "SNLI corpus not available (set SNLI_DIR to the snli_1.0 directory); criterion not evaluated"


# ---------------------------------------------------------------- 4. overfit


def test_criterion_4_overfit_snli_subset(criterion):
    path = _snli("train")
    if path is None:
        assert criterion(4, "overfit 128 SNLI pairs", False, MISSING)
    subset = _take(path, 128)
    pretrained = _word2vec(subset)
    model = build_model(ModelConfig("wordbyword", k=32, embed_dim=pretrained.dim if pretrained else 300), subset, pretrained)
    start = time.perf_counter()
    result = train(model, subset, None, TrainConfig(lr=1e-3, max_epochs=200, patience=200), stop_at_train_acc=0.99)
    elapsed = time.perf_counter() - start
    last = result.history.epochs[-1]
    ok = last.train_acc >= 0.99 and elapsed < 300
    detail = f"train acc {last.train_acc:.3f} after {last.epoch} epochs in {elapsed:.0f} s"
    assert criterion(4, "overfit 128 SNLI pairs", ok, detail)


# ---------------------------------------------------------------- 5 + 6. synthetic alignment

SYNTH_TRAIN = SynthSpec(n_examples=3000, seed=1)
SYNTH_TEST = SynthSpec(n_examples=500, seed=2)
SYNTH_K = 64
SYNTH_TRAINING = TrainConfig(lr=3e-3, batch_size=32, max_epochs=30, patience=30, seed=0)


@pytest.fixture(scope="module")
def synth_runs():
    train_set, test_set = gen_synth(SYNTH_TRAIN), gen_synth(SYNTH_TEST)
    runs = {}
    for variant in ("wordbyword", "conditional"):
        model = build_model(ModelConfig(variant, k=SYNTH_K, embed_dim=SYNTH_K), train_set.examples, seed=0)
        result = train(model, train_set.examples, None, SYNTH_TRAINING)
        model.params = result.params
        runs[variant] = (model, evaluate(model, test_set.examples))
    return train_set, test_set, runs


def test_criterion_5_synthetic_alignment(criterion, synth_runs):
    _, test_set, runs = synth_runs
    model, metrics = runs["wordbyword"]
    hits = total = 0
    for ex, align in zip(test_set.examples, test_set.alignments):
        weights = model.predict(ex.premise, ex.hypothesis).attention.weights
        for row, pos in zip(weights, align):
            if pos is not None:
                total += 1
                hits += int(np.argmax(row)) == pos
    alignment = hits / total
    conditional = runs["conditional"][1].accuracy
    ok = metrics.accuracy >= 0.95 and alignment >= 0.60 and conditional < metrics.accuracy
    detail = (
        f"word-by-word test acc {metrics.accuracy:.3f} (need >= 0.95), attention argmax alignment {alignment:.3f} "
        f"over {total} aligned tokens (need >= 0.60), conditional test acc {conditional:.3f} (must be lower)"
    )
    assert criterion(5, "synthetic alignment", ok, detail)


def test_criterion_6_simplex_invariants(criterion, synth_runs):
    train_set, test_set, runs = synth_runs
    model = runs["wordbyword"][0]
    examples = list(test_set.examples)
    rows_checked = bad_sum = bad_zero = 0

    def check(alphas, mask):
        nonlocal rows_checked, bad_sum, bad_zero
        for a in alphas:
            a = a.data[:, 0, :].astype(np.float64)
            rows_checked += a.shape[0]
            bad_sum += int(np.sum(np.abs(a.sum(axis=-1) - 1.0) > 1e-6))
            bad_zero += int(np.sum(np.any((a != 0.0) & ~mask, axis=-1)))

    for batch in make_batches(examples, 64, model.vocab):
        result = model.forward_batch(batch)
        check(result.attention[0], batch.premise_mask)
    # the remaining attentive variants, untrained, on the same padded batches
    for variant in ("attention", "attention-two-way", "wordbyword-two-way"):
        other = build_model(ModelConfig(variant, k=8, embed_dim=8), train_set.examples[:200], seed=3)
        for batch in make_batches(examples[:200], 32, other.vocab):
            result = other.forward_batch(batch)
            check(result.attention[0], batch.premise_mask)
            if other.config.two_way:
                check(result.attention[1], batch.hypothesis_mask)
    ok = rows_checked > 0 and bad_sum == 0 and bad_zero == 0
    detail = f"{rows_checked} attention rows, {bad_sum} off-simplex, {bad_zero} with non-zero masked weight"
    assert criterion(6, "simplex invariants", ok, detail)


# ---------------------------------------------------------------- 7. SNLI learning signal


def test_criterion_7_snli_learning_signal(criterion):
    train_path, dev_path = _snli("train"), _snli("dev")
    if train_path is None or dev_path is None:
        assert criterion(7, "20k SNLI dev accuracy over majority", False, MISSING)
    train_set = _take(train_path, 20_000)
    dev_set = _take(dev_path, None)
    pretrained = _word2vec(train_set)
    config = ModelConfig("wordbyword", k=100, embed_dim=pretrained.dim if pretrained else 300)
    model = build_model(config, train_set, pretrained)
    result = train(model, train_set, dev_set, TrainConfig(lr=3e-4, max_epochs=10, patience=3))
    counts = np.bincount([ex.label for ex in dev_set], minlength=3)
    majority = counts.max() / counts.sum()
    best = result.history.best_dev_acc
    ok = best >= majority + 0.20
    detail = f"best dev acc {best:.3f}, majority baseline {majority:.3f}, margin {100 * (best - majority):.1f} pp (need 20)"
    assert criterion(7, "20k SNLI dev accuracy over majority", ok, detail)


# ---------------------------------------------------------------- 8. determinism


def test_criterion_8_determinism(criterion, tmp_path):
    data = gen_synth(SynthSpec(n_examples=120, vocab_size=20, premise_len=(3, 5), hypothesis_len=(1, 3), seed=9))
    train_set, dev_set = data.examples[:90], data.examples[90:]
    outputs = []
    for run in range(2):
        model = build_model(ModelConfig("wordbyword", k=8, embed_dim=8), train_set, seed=4, dtype=np.float64)
        cfg = TrainConfig(lr=3e-3, dropout=0.1, l2=1e-4, max_epochs=4, seed=11, precision="check")
        result = train(model, train_set, dev_set, cfg)
        model.params = result.params
        result.history.write(tmp_path / f"history{run}.jsonl")
        (tmp_path / f"metrics{run}.json").write_text(json.dumps(evaluate(model, dev_set).to_json(), sort_keys=True))
        outputs.append(
            ((tmp_path / f"history{run}.jsonl").read_bytes(), (tmp_path / f"metrics{run}.json").read_bytes())
        )
    ok = outputs[0] == outputs[1]
    detail = f"history and metrics files {'byte-identical' if ok else 'differ'} across two seeded runs"
    assert criterion(8, "determinism", ok, detail)
