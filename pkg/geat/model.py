""" The two attribution models: a softmax classifier and a triplet network.

Both share the architecture of their encoder (but not its weights): token
embeddings, a bank of 1D convolutions with different kernel sizes followed by
max-over-time pooling, and the concatenation of the pooled features with the
binary phenotype features of the record.

The classifier continues with a hidden dense layer with ReLU and an output
layer with softmax over the labs. The triplet network projects the features
with a single dense layer to an L2-normalized sequence embedding; it also
learns a table of lab embeddings with one extra row for the "unseen" lab.
Sequences and labs are compared by cosine similarity.
"""

from typing import Dict

import numpy as np

from .configurable import ConfigMeta
from .corpus import LabVocab
from .errors import ConfigError, NumericError, ShapeError
from .numeric import Graph, evaluate, NORM_EPS
from .tokenize import Tokenizer, TokenBatch, DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE
from .utils import derive_rng, STREAM_INIT

import logging
logger = logging.getLogger(__name__)

TRIPLET = 'triplet'
CLASSIFIER = 'classifier'
MODEL_KINDS = (TRIPLET, CLASSIFIER)


class ModelConfig(metaclass=ConfigMeta):
    """ Architecture hyperparameters of both models.
    """
    config_options = dict(
        vocab_size = (DEFAULT_VOCAB_SIZE,
            'number of token ids, including the padding token'),
        max_len = (DEFAULT_MAX_LEN,
            'number of tokens that the model sees per sequence; longer '
            'sequences are cut after the circular shift'),
        token_embed_dim = (64,
            'dimension of the token embeddings'),
        kernel_sizes = ([3, 4, 5],
            'kernel sizes of the convolution bank'),
        filters_per_kernel = (128,
            'number of filters per kernel size'),
        feature_count = (0,
            'number of binary phenotype features per record'),
        embed_dim = (200,
            'dimension of sequence and lab embeddings (triplet network)'),
        lab_count = (2,
            'number of known labs'),
        hidden_dim = (256,
            'width of the hidden dense layer (classifier)'),
        margin = (0.2,
            'triplet margin the model was trained with'),
    )

    def __init__(self, config=None):
        self.configure(config)
        self.validate()

    def validate(self):
        dims = dict(vocab_size=self.vocab_size, max_len=self.max_len, token_embed_dim=self.token_embed_dim,
                filters_per_kernel=self.filters_per_kernel, embed_dim=self.embed_dim,
                lab_count=self.lab_count, hidden_dim=self.hidden_dim)
        for k, v in dims.items():
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"model option '{k}' must be a positive integer, got {v}")
        if not isinstance(self.feature_count, int) or self.feature_count < 0:
            raise ConfigError(f"model option 'feature_count' must be a non-negative integer, got {self.feature_count}")
        if len(self.kernel_sizes) == 0 or any((not isinstance(k, int)) or k <= 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be positive integers, got {self.kernel_sizes}")
        if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be distinct, got {self.kernel_sizes}")
        if max(self.kernel_sizes) > self.max_len:
            raise ConfigError(f"the largest kernel size {max(self.kernel_sizes)} exceeds max_len {self.max_len}")
        if self.embed_dim < 2:
            raise ConfigError(f"embed_dim must be at least 2, got {self.embed_dim}")
        if self.margin <= 0:
            raise ConfigError(f"the margin must be positive, got {self.margin}")

    def copy(self, **changes):
        cfg = self.get_config(skip_doc=True)
        cfg.update(changes)
        return ModelConfig(cfg)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _embedding(rng, shape):
    return rng.normal(0.0, 0.05, size=shape).astype(np.float32)


def _init_encoder(rng, cfg: ModelConfig):
    tensors = dict()
    tensors['token_embed'] = _embedding(rng, (cfg.vocab_size, cfg.token_embed_dim))
    for k in cfg.kernel_sizes:
        d, c = cfg.token_embed_dim, cfg.filters_per_kernel
        tensors[f'conv{k}_w'] = _glorot(rng, (k, d, c), k * d, k * c)
        tensors[f'conv{k}_b'] = np.zeros(c, dtype=np.float32)
    return tensors


def encoder_width(cfg: ModelConfig) -> int:
    return len(cfg.kernel_sizes) * cfg.filters_per_kernel + cfg.feature_count


class ModelParams:
    """ Trainable tensors of a model plus everything needed to apply it: its
    config, the lab vocabulary, and the tokenizer.
    """
    kind = None

    def __init__(self, config: ModelConfig, tensors: Dict[str, np.ndarray], labs: LabVocab, tokenizer: Tokenizer):
        self.config = config
        self.tensors = dict(tensors)
        self.labs = labs
        self.tokenizer = tokenizer

        expected = self.expected_shapes(config)
        if set(expected.keys()) != set(self.tensors.keys()):
            missing = sorted(set(expected.keys()) - set(self.tensors.keys()))
            extra = sorted(set(self.tensors.keys()) - set(expected.keys()))
            raise ShapeError(f"{self.kind} parameters do not fit the config (missing: {missing}, unexpected: {extra})")
        for k, shape in expected.items():
            if tuple(self.tensors[k].shape) != shape:
                raise ShapeError(f"parameter '{k}' has shape {self.tensors[k].shape}, expected {shape}")
        if len(labs) != config.lab_count:
            raise ShapeError(f"{len(labs)} lab names for a model with {config.lab_count} labs")
        if tokenizer.vocab_size > config.vocab_size:
            raise ShapeError(f"tokenizer with {tokenizer.vocab_size} tokens for a model with vocab_size {config.vocab_size}")

    @staticmethod
    def expected_shapes(cfg: ModelConfig):
        res = {'token_embed': (cfg.vocab_size, cfg.token_embed_dim)}
        for k in cfg.kernel_sizes:
            res[f'conv{k}_w'] = (k, cfg.token_embed_dim, cfg.filters_per_kernel)
            res[f'conv{k}_b'] = (cfg.filters_per_kernel,)
        return res

    def with_tensors(self, tensors):
        return type(self)(self.config, tensors, self.labs, self.tokenizer)

    def __repr__(self):
        return f"{type(self).__name__}({len(self.labs)} labs, {sum(t.size for t in self.tensors.values())} weights)"


class ClassifierParams(ModelParams):
    kind = CLASSIFIER

    @staticmethod
    def expected_shapes(cfg: ModelConfig):
        res = ModelParams.expected_shapes(cfg)
        res['hidden_w'] = (encoder_width(cfg), cfg.hidden_dim)
        res['hidden_b'] = (cfg.hidden_dim,)
        res['out_w'] = (cfg.hidden_dim, cfg.lab_count)
        res['out_b'] = (cfg.lab_count,)
        return res


class TripletParams(ModelParams):
    kind = TRIPLET

    @staticmethod
    def expected_shapes(cfg: ModelConfig):
        res = ModelParams.expected_shapes(cfg)
        res['proj_w'] = (encoder_width(cfg), cfg.embed_dim)
        res['proj_b'] = (cfg.embed_dim,)
        res['lab_table'] = (cfg.lab_count + 1, cfg.embed_dim)
        return res

    @property
    def lab_table(self) -> np.ndarray:
        return self.tensors['lab_table']


PARAM_CLASSES = {TRIPLET: TripletParams, CLASSIFIER: ClassifierParams}


def init_classifier(cfg: ModelConfig, labs: LabVocab, tokenizer: Tokenizer, seed: int) -> ClassifierParams:
    rng = derive_rng(seed, STREAM_INIT, 0)
    tensors = _init_encoder(rng, cfg)
    width = encoder_width(cfg)
    tensors['hidden_w'] = _glorot(rng, (width, cfg.hidden_dim), width, cfg.hidden_dim)
    tensors['hidden_b'] = np.zeros(cfg.hidden_dim, dtype=np.float32)
    tensors['out_w'] = _glorot(rng, (cfg.hidden_dim, cfg.lab_count), cfg.hidden_dim, cfg.lab_count)
    tensors['out_b'] = np.zeros(cfg.lab_count, dtype=np.float32)
    return ClassifierParams(cfg, tensors, labs, tokenizer)


def init_triplet(cfg: ModelConfig, labs: LabVocab, tokenizer: Tokenizer, seed: int) -> TripletParams:
    rng = derive_rng(seed, STREAM_INIT, 1)
    tensors = _init_encoder(rng, cfg)
    width = encoder_width(cfg)
    tensors['proj_w'] = _glorot(rng, (width, cfg.embed_dim), width, cfg.embed_dim)
    tensors['proj_b'] = np.zeros(cfg.embed_dim, dtype=np.float32)
    tensors['lab_table'] = _embedding(rng, (cfg.lab_count + 1, cfg.embed_dim))
    return TripletParams(cfg, tensors, labs, tokenizer)


def batch_inputs(cfg: ModelConfig, batch: TokenBatch):
    """ Graph inputs for a batch. The time axis is cut to the part that can
    influence the pooled features: windows starting past the true length are
    ignored by the pooling anyway.
    """
    if len(batch) == 0:
        raise ShapeError("empty batch")
    if batch.features.shape[1] != cfg.feature_count:
        raise ShapeError(f"batch has {batch.features.shape[1]} features, the model expects {cfg.feature_count}")
    if batch.ids.shape[1] != cfg.max_len:
        raise ShapeError(f"batch has {batch.ids.shape[1]} token positions, the model expects {cfg.max_len}")
    kmax = max(cfg.kernel_sizes)
    width = min(cfg.max_len, max(int(batch.lengths.max()) + kmax - 1, kmax))
    return {
            'ids': batch.ids[:, :width],
            'lengths': batch.lengths,
            'features': batch.features,
        }


def encode_features(tape, cfg: ModelConfig, inp):
    """ Token embedding, convolution bank with max-over-time pooling, and
    concatenation with the binary features.
    """
    emb = tape.embedding_lookup(inp['token_embed'], inp['ids'])
    pooled = []
    for k in cfg.kernel_sizes:
        conv = tape.relu(tape.conv1d(emb, inp[f'conv{k}_w'], inp[f'conv{k}_b']))
        pooled.append(tape.max_over_time(conv, inp['lengths']))
    return tape.concat(pooled + [inp['features']])


def embed_nodes(tape, cfg: ModelConfig, inp):
    feats = encode_features(tape, cfg, inp)
    return tape.l2_normalize(tape.dense(feats, inp['proj_w'], inp['proj_b']))


def logit_nodes(tape, cfg: ModelConfig, inp):
    feats = encode_features(tape, cfg, inp)
    hidden = tape.relu(tape.dense(feats, inp['hidden_w'], inp['hidden_b']))
    return tape.dense(hidden, inp['out_w'], inp['out_b'])


def embedding_graph(cfg: ModelConfig) -> Graph:
    def build(tape, inp):
        return {'embedding': embed_nodes(tape, cfg, inp)}
    return Graph(build, name='embedding')


def classifier_graph(cfg: ModelConfig) -> Graph:
    def build(tape, inp):
        logits = logit_nodes(tape, cfg, inp)
        res = {'logits': logits, 'probs': tape.softmax(logits)}
        if 'labels' in inp:
            res['loss'] = tape.mean(tape.softmax_cross_entropy(logits, inp['labels']))
        return res
    return Graph(build, name='classifier')


def embed_sequence(p: TripletParams, batch: TokenBatch, precision='float32') -> np.ndarray:
    """ L2-normalized sequence embeddings (B, E) for a batch.
    """
    inputs = dict(p.tensors)
    inputs.update(batch_inputs(p.config, batch))
    return evaluate(embedding_graph(p.config), inputs, precision=precision)['embedding']


def classifier_probs(p: ClassifierParams, batch: TokenBatch, precision='float32') -> np.ndarray:
    """ Lab probabilities (B, L) for a batch.
    """
    inputs = dict(p.tensors)
    inputs.update(batch_inputs(p.config, batch))
    return evaluate(classifier_graph(p.config), inputs, outputs=['probs'], precision=precision)['probs']


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """ numpy counterpart of `Tape.l2_normalize`.
    """
    norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    return x / np.maximum(norm, NORM_EPS)


def lab_similarities(p: TripletParams, seq_embeddings: np.ndarray, include_unseen: bool = False) -> np.ndarray:
    """ Cosine similarities between sequence embeddings (B, E) and the lab
    table, (B, L) or, with the unseen lab as last column, (B, L+1).
    """
    table = p.lab_table if include_unseen else p.lab_table[:-1]
    norms = np.sqrt(np.sum(table * table, axis=1))
    if np.any(norms == 0):
        zero = int(np.flatnonzero(norms == 0)[0])
        raise NumericError(f"lab embedding {zero} has zero norm")
    seq_embeddings = np.asarray(seq_embeddings)
    if seq_embeddings.ndim != 2 or seq_embeddings.shape[1] != table.shape[1]:
        raise ShapeError(f"sequence embeddings of shape {seq_embeddings.shape} do not fit a lab table of shape {table.shape}")
    return seq_embeddings @ (table / norms[:, None]).T


def sequence_similarities(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ Cosine similarities between two sets of sequence embeddings.
    """
    return normalize_rows(a) @ normalize_rows(b).T


def append_lab(p: TripletParams, name: str, embedding: np.ndarray) -> TripletParams:
    """ Add a lab with the given embedding to the lab table, directly before
    the unseen row. No retraining is involved.
    """
    embedding = np.asarray(embedding, dtype=p.lab_table.dtype)
    if embedding.shape != (p.config.embed_dim,):
        raise ShapeError(f"lab embedding of shape {embedding.shape}, expected ({p.config.embed_dim},)")
    labs = p.labs.extended(name)
    table = p.lab_table
    tensors = dict(p.tensors)
    tensors['lab_table'] = np.concatenate([table[:-1], embedding[None, :], table[-1:]], axis=0)
    cfg = p.config.copy(lab_count=p.config.lab_count + 1)
    return TripletParams(cfg, tensors, labs, p.tokenizer)
