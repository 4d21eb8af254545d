#!/usr/bin/env pytest

import pytest

import os
import sys

import numpy as np
from hypothesis import given, settings, strategies as st

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.corpus import DnaRecord
from geat.errors import TokenizerError
from geat.tokenize import (Tokenizer, train_bpe, save_tokenizer, load_tokenizer, circular_shift, prepare_input,
        prepare_batch, PAD_ID, _apply_merge)

from test_utils import *


def test_base_tokenizer():
    tok = Tokenizer([])
    assert tok.vocab_size == 6
    assert tok.encode("ACGTN") == [1, 2, 3, 4, 5]
    assert tok.token_string(PAD_ID) == "<pad>"

def test_train_simple():
    tok = train_bpe(["AAAA", "AAAA"], vocab_size=8)
    # 'AA' is the most frequent pair, afterwards only 'AA'+'AA' is left
    assert tok.merges == (("A", "A"), ("AA", "AA"))
    assert tok.encode("AAAA") == [7]
    assert tok.encode("AAA") == [6, 1]

def test_train_tie_break():
    # AC, CG and GT occur equally often, AC is the smallest
    tok = train_bpe(["ACGT", "ACGT"], vocab_size=7)
    assert tok.merges == (("A", "C"),)

def test_train_skips_n():
    tok = train_bpe(["NNNN", "NNNN", "ACAC"], vocab_size=10)
    for l, r in tok.merges:
        assert 'N' not in l + r

def test_train_stops_without_pairs():
    tok = train_bpe(["ACGT"], vocab_size=100)
    assert tok.merges == ()

def test_train_deterministic():
    rng = np.random.default_rng(3)
    corpus = [random_sequence(rng, int(n)) for n in rng.integers(1, 300, size=40)]
    a = train_bpe(corpus, vocab_size=80)
    b = train_bpe(corpus, vocab_size=80)
    assert a.merges == b.merges
    assert a.vocab_size <= 80

def test_train_invalid():
    with pytest.raises(TokenizerError):
        train_bpe([], vocab_size=10)
    with pytest.raises(TokenizerError):
        train_bpe(["ACGT"], vocab_size=3)
    with pytest.raises(TokenizerError):
        train_bpe(["ACXT"], vocab_size=10)

def test_apply_merge_runs():
    ids = np.array([1, 1, 1, 1, 1, 2, 1, 1])
    assert _apply_merge(ids, 1, 1, 9).tolist() == [9, 9, 1, 2, 9]

def test_encode_matches_sequential_merges(tiny_tok):
    # applying every merge in training order over the whole sequence
    rng = np.random.default_rng(5)
    for _ in range(20):
        seq = random_sequence(rng, int(rng.integers(1, 200)), "ACGT")
        ids = tiny_tok.base_ids(seq).astype(np.int64)
        for rank, (l, r) in enumerate(tiny_tok.merges):
            li = tiny_tok.tokens.index(l)
            ri = tiny_tok.tokens.index(r)
            ids = _apply_merge(ids, li, ri, 6 + rank)
        assert tiny_tok.encode(seq) == ids.tolist()

def test_encode_length(tiny_tok):
    rng = np.random.default_rng(8)
    base_vocab = Tokenizer([]).vocab_size
    for _ in range(100):
        seq = random_sequence(rng, int(rng.integers(1, 300)))
        ids = tiny_tok.encode(seq)
        merged = any(i >= base_vocab for i in ids)
        assert len(ids) <= len(seq)
        assert (len(ids) < len(seq)) == merged
    assert len(tiny_tok.encode("N")) == 1


@given(st.text(alphabet="ACGTN", min_size=1, max_size=400))
@settings(max_examples=200, deadline=None)
def test_decode_encode_identity(seq):
    tok = _hypothesis_tokenizer()
    assert tok.decode(tok.encode(seq)) == seq

_HYPOTHESIS_TOK = []

def _hypothesis_tokenizer():
    if len(_HYPOTHESIS_TOK) == 0:
        rng = np.random.default_rng(11)
        corpus = [random_sequence(rng, 200, "ACGT") for _ in range(20)]
        _HYPOTHESIS_TOK.append(train_bpe(corpus, vocab_size=60))
    return _HYPOTHESIS_TOK[0]

def test_decode_errors(tiny_tok):
    with pytest.raises(TokenizerError):
        tiny_tok.decode([PAD_ID])
    with pytest.raises(TokenizerError):
        tiny_tok.decode([1, PAD_ID, 2])
    with pytest.raises(TokenizerError):
        tiny_tok.decode([tiny_tok.vocab_size])
    assert tiny_tok.decode([1, 2, PAD_ID, PAD_ID]) == "AC"

def test_encode_invalid(tiny_tok):
    with pytest.raises(TokenizerError):
        tiny_tok.encode("ACGU")
    with pytest.raises(TokenizerError):
        tiny_tok.encode("")

def test_file_roundtrip(tmp_path, tiny_tok):
    path = tmp_path / "tok.txt"
    save_tokenizer(tiny_tok, path)
    loaded = load_tokenizer(path)
    assert loaded == tiny_tok
    assert loaded.tokens == tiny_tok.tokens

def test_file_errors(tmp_path):
    path = tmp_path / "tok.txt"
    path.write_text("something else\nACGTN\n")
    with pytest.raises(TokenizerError):
        load_tokenizer(path)
    with pytest.raises(TokenizerError):
        load_tokenizer(tmp_path / "missing.txt")

def test_invalid_merges():
    with pytest.raises(TokenizerError):
        Tokenizer([("A", "CG")])
    with pytest.raises(TokenizerError):
        Tokenizer([("A", "N")])
    with pytest.raises(TokenizerError):
        Tokenizer([("A", "C"), ("A", "C")])


def test_circular_shift():
    assert circular_shift("ACGTA", 0) == "ACGTA"
    assert circular_shift("ACGTA", 2) == "TAACG"
    assert circular_shift("ACGTA", 5) == "ACGTA"
    assert circular_shift("ACGTA", 7) == circular_shift("ACGTA", 2)
    with pytest.raises(ValueError):
        circular_shift("ACGT", -1)

@given(st.text(alphabet="ACGT", min_size=1, max_size=50), st.integers(0, 200), st.integers(0, 200))
def test_circular_shift_composes(seq, a, b):
    assert circular_shift(circular_shift(seq, a), b) == circular_shift(seq, a + b)

def test_prepare_input_padding():
    tok = Tokenizer([])
    rec = DnaRecord("r", "ACG", (), 0)
    ts = prepare_input(tok, rec, 1, max_len=5)
    assert ts.ids.tolist() == [3, 1, 2, PAD_ID, PAD_ID]
    assert ts.true_len == 3

def test_prepare_input_truncates():
    tok = Tokenizer([])
    rec = DnaRecord("r", "ACGTACGT", (), 0)
    ts = prepare_input(tok, rec, 0, max_len=4)
    assert ts.ids.tolist() == [1, 2, 3, 4]
    assert ts.true_len == 4

def test_prepare_batch(tiny_ds, tiny_tok):
    records = list(tiny_ds)[:5]
    batch = prepare_batch(tiny_tok, records, [0, 1, 2, 3, 4], max_len=48)
    assert batch.ids.shape == (5, 48)
    assert batch.features.shape == (5, tiny_ds.feature_count)
    assert batch.labels.tolist() == [r.lab for r in records]
    assert np.all(batch.lengths > 0)
    sub = batch.take([1, 3])
    assert sub.ids.tolist() == batch.ids[[1, 3]].tolist()

def test_prepare_batch_no_features():
    tok = Tokenizer([])
    records = [DnaRecord("a", "ACG", (), 0), DnaRecord("b", "GG", (), 1)]
    batch = prepare_batch(tok, records, [0, 0], max_len=4)
    assert batch.features.shape == (2, 0)
