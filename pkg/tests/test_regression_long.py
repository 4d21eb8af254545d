#!/usr/bin/env pytest

# Full-size runs on the synthetic benchmark; these take several minutes.
# run_tests.sh only includes them with --long.

import pytest

import os
import sys

import numpy as np

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.checkpoint import save_checkpoint
from geat.corpus import split_stratified
from geat.model import append_lab
from geat.rank import rank_records, top_k_accuracy, unknown_scores, auroc, lab_embedding_from_samples
from geat.runcontext import RunContext
from geat.tokenize import train_bpe
from geat.train import train_triplet, train_classifier

from test_utils import *


def test_tokenizer_long():
    rng = np.random.default_rng(42)
    corpus = [random_sequence(rng, int(rng.integers(1, 5001)), "ACGT") for _ in range(50)]
    tok = train_bpe(corpus, vocab_size=1001)
    assert tok.merges == train_bpe(corpus, vocab_size=1001).merges

    for _ in range(1000):
        seq = random_sequence(rng, int(rng.integers(1, 5001)))
        assert tok.decode(tok.encode(seq)) == seq


@pytest.fixture(scope="module")
def ctx():
    return RunContext()

@pytest.fixture(scope="module")
def benchmark(ctx):
    ds = ctx.synth_cfg.generate()
    assert (ds.num_labs, len(ds)) == (50, 2000)
    return ds

@pytest.fixture(scope="module")
def full_split(benchmark):
    return split_stratified(benchmark, (0.8, 0.1, 0.1), seed=0)

@pytest.fixture(scope="module")
def full_tok(ctx, full_split):
    return train_bpe([r.sequence for r in full_split[0]], ctx.tokenizer_cfg.vocab_size)

@pytest.fixture(scope="module")
def full_triplet(ctx, full_split, full_tok):
    train, val, _ = full_split
    return train_triplet(train, ctx.model_cfg, ctx.train_cfg, full_tok, val_ds=val)[0]

def accuracies(ctx, params, ds):
    rankings = rank_records(params, list(ds), ctx.rank_cfg.tta_n, ctx.rank_cfg.seed, ctx.rank_cfg.batch_size)
    truths = ds.labels().tolist()
    return top_k_accuracy(rankings, truths, 1), top_k_accuracy(rankings, truths, 10)

def test_synthetic_attribution(ctx, full_split, full_tok, full_triplet):
    test = full_split[2]
    top1, top10 = accuracies(ctx, full_triplet, test)
    print(f"triplet: top-1 {top1:.4f}, top-10 {top10:.4f}")
    assert top10 >= 0.95
    assert top1 >= 0.60

    train = full_split[0]
    classifier, _ = train_classifier(train, ctx.model_cfg, ctx.train_cfg, full_tok)
    c_top1, c_top10 = accuracies(ctx, classifier, test)
    print(f"classifier: top-1 {c_top1:.4f}, top-10 {c_top10:.4f}")
    assert top10 >= c_top10 - 0.02


@pytest.fixture(scope="module")
def open_world(ctx, benchmark):
    held_out = list(benchmark.lab_vocab.names[40:])
    known = benchmark.without_labs(held_out)
    train, val, test = split_stratified(known, (0.8, 0.1, 0.1), seed=0)
    tok = train_bpe([r.sequence for r in train], ctx.tokenizer_cfg.vocab_size)
    params, _ = train_triplet(train, ctx.model_cfg, ctx.train_cfg, tok, val_ds=val)
    return params, test, benchmark.only_labs(held_out), held_out

def test_unknown_lab_separation(ctx, open_world):
    params, test, unknown, _ = open_world
    rc = ctx.rank_cfg
    known_top, _ = unknown_scores(rank_records(params, list(test), rc.tta_n, rc.seed, rc.batch_size))
    unknown_top, _ = unknown_scores(rank_records(params, list(unknown), rc.tta_n, rc.seed, rc.batch_size))
    score = auroc(known_top, unknown_top)
    print(f"known vs. unknown lab AUROC: {score:.4f}")
    assert score >= 0.75

def test_lab_from_samples(ctx, open_world):
    params, _, unknown, held_out = open_world
    rc = ctx.rank_cfg
    lab = held_out[0]
    records = list(unknown.only_labs([lab]))
    samples, rest = records[:10], records[10:]

    emb = lab_embedding_from_samples(params, samples, rc.tta_n, rc.seed)
    extended = append_lab(params, lab, emb)
    rankings = rank_records(extended, rest, rc.tta_n, rc.seed, rc.batch_size)
    truth = extended.labs.index(lab)
    acc = top_k_accuracy(rankings, [truth] * len(rest), 1)
    print(f"top-1 accuracy for the synthesized lab: {acc:.4f}")
    assert acc >= 0.5


def test_pipeline_deterministic(tmp_path, benchmark):
    ds = benchmark.only_labs(list(benchmark.lab_vocab.names[:10]))
    train, _, _ = split_stratified(ds, seed=0)
    outputs = []
    for run in range(2):
        tok = train_bpe([r.sequence for r in train], vocab_size=200)
        mc = tiny_model_config(train, tok, max_len=300)
        params, _ = train_triplet(train, mc, tiny_train_config(epochs=3), tok)
        path = tmp_path / f"run{run}.ckpt"
        save_checkpoint(params, path)
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
