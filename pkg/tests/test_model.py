#!/usr/bin/env pytest

import pytest

import os
import sys

import numpy as np

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.errors import ConfigError, LabVocabError, NumericError, ShapeError
from geat.model import (ModelConfig, TripletParams, ClassifierParams, init_triplet, init_classifier, batch_inputs,
        classifier_graph, embed_sequence, classifier_probs, lab_similarities, sequence_similarities, append_lab)
from geat.numeric import evaluate
from geat.tokenize import prepare_batch

from test_utils import *


@pytest.fixture(scope="module")
def triplet(tiny_ds, tiny_tok):
    return init_triplet(tiny_model_config(tiny_ds, tiny_tok), tiny_ds.lab_vocab, tiny_tok, seed=4)

@pytest.fixture(scope="module")
def classifier(tiny_ds, tiny_tok):
    return init_classifier(tiny_model_config(tiny_ds, tiny_tok), tiny_ds.lab_vocab, tiny_tok, seed=4)

def first_batch(ds, tok, n=6, max_len=48):
    records = list(ds)[:n]
    return prepare_batch(tok, records, [0] * len(records), max_len)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig({'kernel_sizes': []})
    with pytest.raises(ConfigError):
        ModelConfig({'kernel_sizes': [3, 3]})
    with pytest.raises(ConfigError):
        ModelConfig({'max_len': 4, 'kernel_sizes': [5]})
    with pytest.raises(ConfigError):
        ModelConfig({'embed_dim': 0})
    assert ModelConfig().copy(lab_count=7).lab_count == 7

def test_init_shapes(triplet, classifier, tiny_ds):
    for p in (triplet, classifier):
        expected = type(p).expected_shapes(p.config)
        assert {k: v.shape for k, v in p.tensors.items()} == expected
        assert all(v.dtype == np.float32 for v in p.tensors.values())
    assert triplet.lab_table.shape == (tiny_ds.num_labs + 1, 8)
    assert classifier.tensors['out_w'].shape == (8, tiny_ds.num_labs)

def test_init_deterministic(tiny_ds, tiny_tok, triplet):
    again = init_triplet(tiny_model_config(tiny_ds, tiny_tok), tiny_ds.lab_vocab, tiny_tok, seed=4)
    other = init_triplet(tiny_model_config(tiny_ds, tiny_tok), tiny_ds.lab_vocab, tiny_tok, seed=5)
    for k in triplet.tensors:
        assert np.array_equal(triplet.tensors[k], again.tensors[k])
    assert not np.array_equal(triplet.tensors['proj_w'], other.tensors['proj_w'])

def test_params_shape_mismatch(triplet):
    tensors = dict(triplet.tensors)
    tensors['proj_b'] = np.zeros(3, dtype=np.float32)
    with pytest.raises(ShapeError):
        TripletParams(triplet.config, tensors, triplet.labs, triplet.tokenizer)
    with pytest.raises(ShapeError):
        ClassifierParams(triplet.config, triplet.tensors, triplet.labs, triplet.tokenizer)


def test_batch_inputs_cut_time_axis(tiny_tok, tiny_ds, triplet):
    batch = first_batch(tiny_ds, tiny_tok)
    inputs = batch_inputs(triplet.config, batch)
    width = inputs['ids'].shape[1]
    assert width <= 48
    assert width >= int(batch.lengths.max())

def test_batch_inputs_mismatch(tiny_tok, tiny_ds, triplet):
    batch = first_batch(tiny_ds, tiny_tok, max_len=40)
    with pytest.raises(ShapeError):
        batch_inputs(triplet.config, batch)

def test_embeddings_unit_norm(tiny_tok, tiny_ds, triplet):
    emb = embed_sequence(triplet, first_batch(tiny_ds, tiny_tok))
    assert emb.shape == (6, 8)
    assert np.allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5)

def test_embedding_independent_of_batch(tiny_tok, tiny_ds, triplet):
    records = list(tiny_ds)
    short = records[0]
    alone = embed_sequence(triplet, prepare_batch(tiny_tok, [short], [0], 48), precision='float64')
    together = embed_sequence(triplet, prepare_batch(tiny_tok, [short] + records[1:5], [0] * 5, 48),
            precision='float64')
    assert np.allclose(alone[0], together[0], atol=1e-9)

def test_classifier_probs(tiny_tok, tiny_ds, classifier):
    probs = classifier_probs(classifier, first_batch(tiny_ds, tiny_tok))
    assert probs.shape == (6, tiny_ds.num_labs)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    assert np.all(probs >= 0)

def test_classifier_initial_loss(tiny_tok, tiny_ds, classifier):
    # an untrained classifier is close to uniform over the labs
    batch = prepare_batch(tiny_tok, list(tiny_ds), [0] * len(tiny_ds), 48)
    inputs = dict(classifier.tensors)
    inputs.update(batch_inputs(classifier.config, batch))
    inputs['labels'] = batch.labels
    loss = evaluate(classifier_graph(classifier.config), inputs, outputs=['loss'], precision='float64')['loss']
    assert abs(float(loss) - np.log(tiny_ds.num_labs)) < 0.1 * np.log(tiny_ds.num_labs)


def test_lab_similarities(tiny_tok, tiny_ds, triplet):
    emb = embed_sequence(triplet, first_batch(tiny_ds, tiny_tok))
    sims = lab_similarities(triplet, emb)
    assert sims.shape == (6, tiny_ds.num_labs)
    assert np.all(np.abs(sims) <= 1.0 + 1e-6)

    with_unseen = lab_similarities(triplet, emb, include_unseen=True)
    assert with_unseen.shape == (6, tiny_ds.num_labs + 1)
    assert np.allclose(with_unseen[:, :-1], sims)

def test_lab_similarities_scale_invariant(tiny_tok, tiny_ds, triplet):
    emb = embed_sequence(triplet, first_batch(tiny_ds, tiny_tok), precision='float64')
    tensors = dict(triplet.tensors)
    factors = np.linspace(0.1, 10.0, triplet.lab_table.shape[0])[:, None]
    tensors['lab_table'] = (triplet.lab_table * factors).astype(np.float32)
    scaled = triplet.with_tensors(tensors)
    assert np.allclose(lab_similarities(triplet, emb), lab_similarities(scaled, emb), atol=1e-5)

def test_lab_similarities_zero_norm(triplet):
    tensors = dict(triplet.tensors)
    table = triplet.lab_table.copy()
    table[1] = 0
    tensors['lab_table'] = table
    with pytest.raises(NumericError) as e:
        lab_similarities(triplet.with_tensors(tensors), np.ones((1, 8)) / np.sqrt(8))
    assert 'zero norm' in str(e.value)

def test_sequence_similarities():
    a = np.array([[3.0, 0.0], [1.0, 1.0]])
    b = np.array([[0.0, 2.0], [5.0, 0.0]])
    sims = sequence_similarities(a, b)
    assert sims == pytest.approx(np.array([[0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)]]))


def test_append_lab(tiny_tok, tiny_ds, triplet):
    emb = embed_sequence(triplet, first_batch(tiny_ds, tiny_tok))
    new_vec = np.full(8, 0.5, dtype=np.float32)
    extended = append_lab(triplet, "new lab", new_vec)

    L = tiny_ds.num_labs
    assert extended.config.lab_count == L + 1
    assert extended.labs.names[-1] == "new lab"
    assert extended.lab_table.shape == (L + 2, 8)
    assert np.array_equal(extended.lab_table[L], new_vec)
    assert np.array_equal(extended.lab_table[-1], triplet.lab_table[-1])

    old = lab_similarities(triplet, emb)
    new = lab_similarities(extended, emb)
    assert np.allclose(new[:, :L], old)

    # the original parameters are unchanged
    assert triplet.lab_table.shape == (L + 1, 8)

def test_append_lab_errors(triplet):
    with pytest.raises(ShapeError):
        append_lab(triplet, "x", np.ones(3))
    with pytest.raises(LabVocabError):
        append_lab(triplet, triplet.labs.names[0], np.ones(8))

def test_duplicate_records_same_embedding(tiny_tok, tiny_ds, triplet):
    rec = tiny_ds[3]
    emb = embed_sequence(triplet, prepare_batch(tiny_tok, [rec, tiny_ds[0], rec], [0, 0, 0], 48))
    assert np.array_equal(emb[0], emb[2])

def test_features_reach_projection(tiny_tok, tiny_ds, triplet):
    rec = tiny_ds[0]
    flipped = DnaRecord("flipped", rec.sequence, (1 - rec.features[0],) + rec.features[1:], rec.lab)
    emb = embed_sequence(triplet, prepare_batch(tiny_tok, [rec, flipped], [0, 0], 48))
    assert not np.allclose(emb[0], emb[1])

def test_zero_output_layer_is_uniform(tiny_tok, tiny_ds, classifier):
    tensors = dict(classifier.tensors)
    tensors['out_w'] = np.zeros_like(tensors['out_w'])
    tensors['out_b'] = np.zeros_like(tensors['out_b'])
    probs = classifier_probs(classifier.with_tensors(tensors), first_batch(tiny_ds, tiny_tok))
    assert np.allclose(probs, 1.0 / tiny_ds.num_labs)

def test_single_lab_classifier(tiny_tok):
    ds = make_ds({'only': ["ACGTACGT", "GGGA"]})
    cfg = tiny_model_config(ds, tiny_tok, max_len=8)
    params = init_classifier(cfg, ds.lab_vocab, tiny_tok, seed=0)
    probs = classifier_probs(params, prepare_batch(tiny_tok, list(ds), [0, 0], 8))
    assert probs.tolist() == [[1.0], [1.0]]

def test_similarity_values(triplet):
    tensors = dict(triplet.tensors)
    table = np.zeros_like(triplet.lab_table)
    table[:, 0] = 1.0
    table[1] = 0.0
    table[1, 1] = 2.0
    tensors['lab_table'] = table
    p = triplet.with_tensors(tensors)
    seq = np.zeros((2, 8))
    seq[0, :2] = 1.0 / np.sqrt(2.0)
    seq[1, 0] = 1.0
    sims = lab_similarities(p, seq)
    assert sims[0, 0] == pytest.approx(np.sqrt(2.0) / 2, abs=1e-6)
    assert sims[1, 0] == pytest.approx(1.0, abs=1e-6)
    assert sims[1, 1] == pytest.approx(0.0, abs=1e-6)
