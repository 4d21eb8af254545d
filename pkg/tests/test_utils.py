import pytest


import os
import random as rand
import sys

import numpy as np


import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.corpus import DnaRecord, LabVocab, Dataset, make_synthetic
from geat.model import ModelConfig
from geat.tokenize import train_bpe, Tokenizer
from geat.train import TrainConfig

@pytest.fixture
def random():
    rand.seed(0)
    np.random.seed(0)

@pytest.fixture(scope="module")
def tiny_ds():
    return make_synthetic(n_labs=6, per_lab=8, motif_len=8, seq_len=60, noise=0.0, seed=3)

@pytest.fixture(scope="module")
def tiny_tok(tiny_ds):
    return train_bpe([r.sequence for r in tiny_ds], vocab_size=40)

def tiny_model_config(ds, tok, **changes):
    cfg = {
        "vocab_size": tok.vocab_size,
        "max_len": 48,
        "token_embed_dim": 8,
        "kernel_sizes": [2, 3],
        "filters_per_kernel": 6,
        "feature_count": ds.feature_count,
        "embed_dim": 8,
        "lab_count": ds.num_labs,
        "hidden_dim": 8,
    }
    cfg.update(changes)
    return ModelConfig(cfg)

def tiny_train_config(**changes):
    cfg = {
        "epochs": 2,
        "batch_size": 16,
        "learning_rate": 3e-3,
        "seed": 5,
        "prefetch": False,
    }
    cfg.update(changes)
    return TrainConfig(cfg)

def make_ds(seqs_by_lab, feature_count=0):
    """ A dataset from {lab name: [sequences]}, lab indices in dict order.
    """
    vocab = LabVocab(list(seqs_by_lab.keys()))
    records = []
    for lab, (name, seqs) in enumerate(seqs_by_lab.items()):
        for i, s in enumerate(seqs):
            records.append(DnaRecord(f"{name}_{i}", s, (0,) * feature_count, lab))
    return Dataset(records, vocab, feature_count)

def random_sequence(rng, length, alphabet="ACGTN"):
    return "".join(rng.choice(list(alphabet), size=length))

def write_csv(path, lines):
    with open(path, 'w') as f:
        f.write("\n".join(lines) + "\n")
    return path
