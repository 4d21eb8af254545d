""" Storing and loading trained models.

A checkpoint file is laid out as follows:

    8 bytes   magic "GEATCKPT"
    4 bytes   format version (unsigned, little endian)
    8 bytes   header length in bytes (unsigned, little endian)
    header    UTF-8 json text: model kind, model config, lab names, tokenizer,
              and a directory of tensors (name, shape, dtype, offset)
    data      raw little endian 32-bit floats of all tensors, in directory
              order; offsets are relative to the start of this section

The header is written with sorted keys and tensors are stored in name order,
so equal models give byte-identical files.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .corpus import LabVocab
from .errors import CheckpointError, GeatError
from .model import ModelConfig, ModelParams, PARAM_CLASSES
from .tokenize import Tokenizer

import logging
logger = logging.getLogger(__name__)

MAGIC = b"GEATCKPT"
VERSION = 1

_PREFIX = struct.Struct('<8sIQ')


def save_checkpoint(params: ModelParams, path):
    directory = []
    blobs = []
    offset = 0
    for name in sorted(params.tensors.keys()):
        data = np.ascontiguousarray(params.tensors[name], dtype='<f4').tobytes()
        directory.append({
                'name': name,
                'shape': list(params.tensors[name].shape),
                'dtype': 'float32',
                'offset': offset,
            })
        blobs.append(data)
        offset += len(data)

    header = {
            'kind': params.kind,
            'config': params.config.get_config(skip_doc=True),
            'labs': list(params.labs.names),
            'tokenizer': params.tokenizer.to_text(),
            'tensors': directory,
        }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header_bytes)))
        f.write(header_bytes)
        for b in blobs:
            f.write(b)
    logger.info(f"stored {params} in '{path}'")


def read_header(path):
    """ Only the json header of a checkpoint, e.g. to inspect its kind.
    """
    with open(path, 'rb') as f:
        prefix = f.read(_PREFIX.size)
        header, _ = _parse_header(path, prefix, f.read)
    return header


def _parse_header(path, prefix, read):
    if len(prefix) != _PREFIX.size:
        raise CheckpointError(f"'{path}' is too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise CheckpointError(f"'{path}' is not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"'{path}' has unsupported checkpoint version {version}")
    header_bytes = read(header_len)
    if len(header_bytes) != header_len:
        raise CheckpointError(f"'{path}' has a truncated header")
    try:
        header = json.loads(header_bytes.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"'{path}' has a malformed header: {e}")
    return header, _PREFIX.size + header_len


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint '{path}' does not exist")
    raw = path.read_bytes()
    header, data_start = _parse_header(path, raw[:_PREFIX.size], lambda n: raw[_PREFIX.size:_PREFIX.size + n])
    data = raw[data_start:]

    kind = header.get('kind', None)
    if kind not in PARAM_CLASSES:
        raise CheckpointError(f"'{path}' holds an unknown model kind '{kind}'")

    tensors = dict()
    for entry in header['tensors']:
        if entry['dtype'] != 'float32':
            raise CheckpointError(f"tensor '{entry['name']}' has unsupported dtype {entry['dtype']}")
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry['offset']
        end = start + 4 * count
        if end > len(data):
            raise CheckpointError(f"tensor '{entry['name']}' lies outside of the file")
        tensors[entry['name']] = np.frombuffer(data[start:end], dtype='<f4').astype(np.float32).reshape(shape)

    try:
        cfg = ModelConfig(header['config'])
        tokenizer = Tokenizer.from_text(header['tokenizer'])
        params = PARAM_CLASSES[kind](cfg, tensors, LabVocab(header['labs']), tokenizer)
    except GeatError as e:
        raise CheckpointError(f"'{path}' is inconsistent: {e}")
    logger.info(f"loaded {params} from '{path}'")
    return params
