#!/usr/bin/env pytest

import pytest

import json
import os
import sys

import numpy as np

import_path = os.path.join(os.path.dirname(__file__), "..")
sys.path.append(import_path)

from geat.checkpoint import save_checkpoint, load_checkpoint, read_header, MAGIC
from geat.errors import CheckpointError
from geat.model import init_triplet, init_classifier, TripletParams, ClassifierParams, append_lab

from test_utils import *


@pytest.fixture(scope="module")
def models(tiny_ds, tiny_tok):
    cfg = tiny_model_config(tiny_ds, tiny_tok)
    return (init_triplet(cfg, tiny_ds.lab_vocab, tiny_tok, seed=2),
            init_classifier(cfg, tiny_ds.lab_vocab, tiny_tok, seed=2))

def assert_same_model(a, b):
    assert type(a) is type(b)
    assert a.config.get_config(skip_doc=True) == b.config.get_config(skip_doc=True)
    assert a.labs == b.labs
    assert a.tokenizer == b.tokenizer
    assert sorted(a.tensors.keys()) == sorted(b.tensors.keys())
    for k in a.tensors:
        assert np.array_equal(a.tensors[k], b.tensors[k]), k


def test_roundtrip(tmp_path, models):
    for params in models:
        path = tmp_path / f"{params.kind}.ckpt"
        save_checkpoint(params, path)
        assert_same_model(params, load_checkpoint(path))

def test_roundtrip_appended_lab(tmp_path, models):
    extended = append_lab(models[0], "late lab", np.linspace(-1, 1, 8))
    save_checkpoint(extended, tmp_path / "x.ckpt")
    loaded = load_checkpoint(tmp_path / "x.ckpt")
    assert isinstance(loaded, TripletParams)
    assert loaded.labs.names[-1] == "late lab"
    assert_same_model(extended, loaded)

def test_byte_identical(tmp_path, models):
    save_checkpoint(models[1], tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

def test_header(tmp_path, models):
    save_checkpoint(models[0], tmp_path / "a.ckpt")
    header = read_header(tmp_path / "a.ckpt")
    assert header['kind'] == 'triplet'
    assert header['labs'] == list(models[0].labs.names)
    names = [t['name'] for t in header['tensors']]
    assert names == sorted(names)
    assert (tmp_path / "a.ckpt").read_bytes()[:8] == MAGIC


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")

def test_bad_magic(tmp_path, models):
    save_checkpoint(models[0], tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[0:8] = b"NOTACKPT"
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(tmp_path / "a.ckpt")
    assert "magic" in str(e.value)

def test_bad_version(tmp_path, models):
    save_checkpoint(models[0], tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[8] = 99
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(tmp_path / "a.ckpt")
    assert "version" in str(e.value)

def test_truncated(tmp_path, models):
    save_checkpoint(models[0], tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    for cut in (5, 40, len(raw) - 3):
        (tmp_path / "b.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "b.ckpt")

def _rewrite_header(path, change):
    raw = path.read_bytes()
    header_len = int.from_bytes(raw[12:20], 'little')
    header = json.loads(raw[20:20 + header_len])
    change(header)
    new_header = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    path.write_bytes(raw[:12] + len(new_header).to_bytes(8, 'little') + new_header + raw[20 + header_len:])

def test_unknown_kind(tmp_path, models):
    save_checkpoint(models[0], tmp_path / "a.ckpt")
    _rewrite_header(tmp_path / "a.ckpt", lambda h: h.update(kind='transformer'))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "a.ckpt")

def test_inconsistent_content(tmp_path, models):
    save_checkpoint(models[0], tmp_path / "a.ckpt")
    _rewrite_header(tmp_path / "a.ckpt", lambda h: h.update(labs=h['labs'][:-1]))
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(tmp_path / "a.ckpt")
    assert "inconsistent" in str(e.value)

    save_checkpoint(models[1], tmp_path / "b.ckpt")
    _rewrite_header(tmp_path / "b.ckpt", lambda h: h.update(kind='triplet'))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "b.ckpt")
