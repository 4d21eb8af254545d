#!/usr/bin/env pytest

import pytest

import os
import sys

import numpy as np
import pandas as pd

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.errors import ConfigError, DataError, LabVocabError, NumericError, ParseError
from geat.model import init_triplet, init_classifier, embed_sequence
from geat.rank import (RankConfig, Ranking, tta_offsets, rank_labs, rank_records, top_k_accuracy, detect_unknown,
        unknown_scores, auroc, lab_embedding_from_samples, record_embeddings, write_rankings, read_rankings,
        accuracy_report, write_report)
from geat.tokenize import prepare_batch
from geat.utils import split_seed

from test_utils import *


@pytest.fixture(scope="module")
def triplet(tiny_ds, tiny_tok):
    return init_triplet(tiny_model_config(tiny_ds, tiny_tok), tiny_ds.lab_vocab, tiny_tok, seed=8)

@pytest.fixture(scope="module")
def classifier(tiny_ds, tiny_tok):
    return init_classifier(tiny_model_config(tiny_ds, tiny_tok), tiny_ds.lab_vocab, tiny_tok, seed=8)

def ranking_with_truth_at(position, num_labs=12, truth=0):
    """ A ranking where lab `truth` is at the given 1-based position.
    """
    others = [l for l in range(num_labs) if l != truth]
    order = others[:position - 1] + [truth] + others[position - 1:]
    return Ranking([(l, float(num_labs - i)) for i, l in enumerate(order)], 'external')


def test_ranking_basics():
    r = Ranking.from_scores([0.2, 0.9, 0.2, -0.5], 'triplet', unseen_score=0.1)
    assert r.labs.tolist() == [1, 0, 2, 3]
    assert r.position(2) == 2
    assert r.positions().tolist() == [1, 0, 2, 3]
    assert r.top(2) == [1, 0]
    assert r.top_score == 0.9
    assert r.unseen_score == 0.1
    assert len(r) == 4

def test_ranking_validation():
    with pytest.raises(DataError):
        Ranking([(0, 1.0), (0, 0.5)], 'x')
    with pytest.raises(DataError):
        Ranking([(0, 1.0), (2, 0.5)], 'x')
    with pytest.raises(DataError):
        Ranking([(0, 0.5), (1, 1.0)], 'x')
    with pytest.raises(NumericError):
        Ranking.from_scores([0.5, np.nan], 'x')
    with pytest.raises(DataError):
        Ranking([], 'x')

def test_rank_config():
    assert RankConfig().tta_n == 8
    with pytest.raises(ConfigError):
        RankConfig({'tta_n': 0})


def test_tta_offsets():
    offs = tta_offsets(100, 8, seed=3)
    assert offs[0] == 0
    assert len(offs) == 8
    assert np.all((offs >= 0) & (offs < 100))
    assert offs.tolist() == tta_offsets(100, 8, seed=3).tolist()
    assert tta_offsets(100, 1, seed=3).tolist() == [0]
    with pytest.raises(ConfigError):
        tta_offsets(100, 0, seed=3)

def test_rank_identity_lab(tiny_tok, tiny_ds, triplet):
    rec = tiny_ds[5]
    emb = embed_sequence(triplet, prepare_batch(tiny_tok, [rec], [0], 48))[0]
    tensors = dict(triplet.tensors)
    table = triplet.lab_table.copy()
    table[3] = emb
    tensors['lab_table'] = table
    r = rank_labs(triplet.with_tensors(tensors), rec, tta_n=1)
    assert r.top(1) == [3]
    assert r.top_score == pytest.approx(1.0, abs=1e-5)

def test_rank_single_base_sequence(triplet, classifier, tiny_ds):
    rec = DnaRecord("one", "G", (0,) * tiny_ds.feature_count, 0)
    for params in (triplet, classifier):
        single = rank_labs(params, rec, tta_n=1)
        averaged = rank_labs(params, rec, tta_n=8, seed=4)
        assert single.labs.tolist() == averaged.labs.tolist()
        assert np.allclose(single.scores, averaged.scores, atol=1e-6)

def test_rank_kinds(triplet, classifier, tiny_ds):
    rt = rank_labs(triplet, tiny_ds[0], tta_n=2)
    assert rt.kind == 'triplet'
    assert rt.unseen_score is not None
    rc = rank_labs(classifier, tiny_ds[0], tta_n=2)
    assert rc.kind == 'classifier'
    assert rc.unseen_score is None
    assert rc.scores.sum() == pytest.approx(1.0, abs=1e-5)
    assert len(rc) == tiny_ds.num_labs

def test_rank_records_matches_rank_labs(triplet, tiny_ds):
    records = list(tiny_ds)[:7]
    rankings = rank_records(triplet, records, tta_n=3, seed=11, batch_size=3)
    assert len(rankings) == 7
    for i, (rec, r) in enumerate(zip(records, rankings)):
        single = rank_labs(triplet, rec, tta_n=3, seed=split_seed(11, i))
        assert r.labs.tolist() == single.labs.tolist()
        assert np.allclose(r.scores, single.scores, atol=1e-6)

def test_rank_records_batch_size_independent(classifier, tiny_ds):
    records = list(tiny_ds)[:10]
    a = rank_records(classifier, records, tta_n=2, seed=1, batch_size=4)
    b = rank_records(classifier, records, tta_n=2, seed=1, batch_size=10)
    for x, y in zip(a, b):
        assert x.labs.tolist() == y.labs.tolist()
        assert np.allclose(x.scores, y.scores, atol=1e-6)
    assert rank_records(classifier, [], tta_n=2) == []

def test_rank_lab_table_rescaling(triplet, tiny_ds):
    factors = np.random.default_rng(6).uniform(0.05, 20.0, size=(triplet.lab_table.shape[0], 1))
    tensors = dict(triplet.tensors)
    tensors['lab_table'] = (triplet.lab_table * factors).astype(triplet.lab_table.dtype)
    scaled = triplet.with_tensors(tensors)
    for rec in list(tiny_ds)[:10]:
        a = rank_labs(triplet, rec, tta_n=2, seed=1)
        b = rank_labs(scaled, rec, tta_n=2, seed=1)
        assert a.labs.tolist() == b.labs.tolist()
        assert np.allclose(a.scores, b.scores, atol=1e-5)
        assert a.unseen_score == pytest.approx(b.unseen_score, abs=1e-5)


def test_rank_feature_mismatch(triplet):
    with pytest.raises(DataError):
        rank_labs(triplet, DnaRecord("r", "ACGT", (1,), 0))


def test_top_k_accuracy():
    assert top_k_accuracy([ranking_with_truth_at(1)] * 3, [0, 0, 0], 10) == 1.0
    assert top_k_accuracy([ranking_with_truth_at(11)] * 3, [0, 0, 0], 10) == 0.0
    mixed = [ranking_with_truth_at(p) for p in (1, 10, 11)]
    assert top_k_accuracy(mixed, [0, 0, 0], 10) == pytest.approx(2 / 3)

def test_top_k_accuracy_monotone_in_k():
    rng = np.random.default_rng(12)
    rankings = [ranking_with_truth_at(int(p)) for p in rng.integers(1, 13, size=30)]
    truths = [0] * len(rankings)
    accs = [top_k_accuracy(rankings, truths, k) for k in range(1, 13)]
    assert all(b >= a for a, b in zip(accs, accs[1:]))
    assert accs[-1] == 1.0


def test_top_k_accuracy_errors():
    r = ranking_with_truth_at(1)
    with pytest.raises(DataError):
        top_k_accuracy([r, r], [0], 10)
    with pytest.raises(DataError):
        top_k_accuracy([], [], 10)
    with pytest.raises(ConfigError):
        top_k_accuracy([r], [0], 0)

def test_accuracy_report(tmp_path):
    rankings = [ranking_with_truth_at(p) for p in (1, 3, 7, 12)]
    report = accuracy_report(rankings, [0] * 4, ks=(1, 5, 10))
    assert report['k'].tolist() == [1, 5, 10]
    assert report['accuracy'].tolist() == pytest.approx([0.25, 0.5, 0.75])
    write_report(tmp_path / "r.csv", report)
    assert pd.read_csv(tmp_path / "r.csv")['accuracy'].tolist() == pytest.approx([0.25, 0.5, 0.75])


def test_detect_unknown():
    def r(top):
        return Ranking([(0, top), (1, top - 1)], 'triplet')
    assert not detect_unknown(r(0.9), 0.1, 0.5)
    assert detect_unknown(r(0.3), 0.1, 0.5)
    assert detect_unknown(r(0.6), 0.7, 0.5)

def test_unknown_scores(triplet, classifier, tiny_ds):
    rankings = rank_records(triplet, list(tiny_ds)[:3], tta_n=1)
    top, unseen = unknown_scores(rankings)
    assert top.tolist() == [r.top_score for r in rankings]
    assert unseen.tolist() == [r.unseen_score for r in rankings]
    with pytest.raises(DataError):
        unknown_scores(rank_records(classifier, list(tiny_ds)[:1], tta_n=1))

def test_auroc():
    assert auroc([3.0, 4.0], [1.0, 2.0]) == 1.0
    assert auroc([1.0, 2.0], [3.0, 4.0]) == 0.0
    assert auroc([1.0], [1.0]) == 0.5
    assert auroc([1.0, 3.0], [2.0]) == 0.5
    with pytest.raises(DataError):
        auroc([], [1.0])


def test_lab_embedding_single_record(tiny_tok, tiny_ds, triplet):
    rec = tiny_ds[2]
    emb = lab_embedding_from_samples(triplet, [rec], tta_n=1)
    direct = embed_sequence(triplet, prepare_batch(tiny_tok, [rec], [0], 48))[0]
    assert np.allclose(emb, direct / np.linalg.norm(direct), atol=1e-6)
    assert np.linalg.norm(emb) == pytest.approx(1.0)

def test_lab_embedding_duplicates(tiny_ds, triplet):
    rec = tiny_ds[2]
    one = lab_embedding_from_samples(triplet, [rec], tta_n=1)
    two = lab_embedding_from_samples(triplet, [rec, rec], tta_n=1)
    assert np.allclose(one, two, atol=1e-9)

def test_lab_embedding_errors(tiny_ds, triplet, classifier):
    with pytest.raises(DataError):
        lab_embedding_from_samples(triplet, [])
    with pytest.raises(DataError):
        lab_embedding_from_samples(classifier, [tiny_ds[0]])

def test_record_embeddings(tiny_ds, triplet):
    emb = record_embeddings(triplet, list(tiny_ds)[:9], batch_size=4)
    assert emb.shape == (9, 8)
    assert np.allclose(np.linalg.norm(emb, axis=1), 1.0)


def test_rankings_file_roundtrip(tmp_path, triplet, tiny_ds):
    records = list(tiny_ds)[:4]
    rankings = rank_records(triplet, records, tta_n=2)
    ids = [r.id for r in records]
    path = tmp_path / "rank.csv"
    write_rankings(path, ids[::-1], rankings[::-1], tiny_ds.lab_vocab)

    df = pd.read_csv(path)
    assert list(df.columns) == ['record_id', 'rank', 'lab_name', 'score']
    assert len(df) == 4 * tiny_ds.num_labs
    assert df['rank'].tolist()[:tiny_ds.num_labs] == list(range(1, tiny_ds.num_labs + 1))

    read_ids, read_rankings_, labs = read_rankings(path, tiny_ds.lab_vocab)
    assert read_ids == sorted(ids)
    by_id = dict(zip(ids, rankings))
    for rid, r in zip(read_ids, read_rankings_):
        assert r.labs.tolist() == by_id[rid].labs.tolist()
        assert np.allclose(r.scores, by_id[rid].scores, rtol=1e-8)

def test_read_rankings_default_vocab(tmp_path):
    path = write_csv(tmp_path / "r.csv", [
        "record_id,rank,lab_name,score",
        "s1,1,beta,0.9",
        "s1,2,alpha,0.1",
    ])
    ids, rankings, labs = read_rankings(path)
    assert ids == ['s1']
    assert labs.names == ('alpha', 'beta')
    assert rankings[0].labs.tolist() == [1, 0]

def test_read_rankings_errors(tmp_path):
    path = write_csv(tmp_path / "r.csv", [
        "record_id,rank,lab,score",
        "s1,1,beta,0.9",
    ])
    with pytest.raises(ParseError):
        read_rankings(path)

    path = write_csv(tmp_path / "r.csv", [
        "record_id,rank,lab_name,score",
        "s1,1,beta,0.9",
        "s1,3,alpha,0.1",
    ])
    with pytest.raises(ParseError):
        read_rankings(path)

    path = write_csv(tmp_path / "r.csv", [
        "record_id,rank,lab_name,score",
        "s1,1,beta,0.9",
        "s1,2,alpha,0.1",
        "s2,1,beta,0.9",
        "s2,2,gamma,0.1",
    ])
    with pytest.raises(LabVocabError):
        read_rankings(path)
