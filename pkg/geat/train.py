""" Training loops for the classifier (softmax cross-entropy) and the triplet
network (margin loss with batch hard negatives and repulsion of the unseen
lab).

Every epoch draws a fresh circular shift offset for every record and a fresh
order of the records, both from streams derived from the training seed, so
that training is reproducible for a fixed seed.
"""

from multiprocessing.pool import ThreadPool
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .configurable import ConfigMeta
from .corpus import Dataset
from .errors import ConfigError, DataError, NumericError
from .mining import MiningBatch, hard_negatives
from .model import (ModelConfig, ModelParams, TripletParams, ClassifierParams,
        init_triplet, init_classifier, batch_inputs, embed_nodes, classifier_graph)
from .numeric import Graph, AdamState, adam_step, evaluate, value_and_gradients, PRECISIONS
from .tokenize import Tokenizer, TokenBatch, prepare_batch
from .utils import derive_rng, progress_bar, worker_count, Timer, STREAM_SHIFT, STREAM_SHUFFLE

import logging
logger = logging.getLogger(__name__)

LOG_COLUMNS = ['epoch', 'split', 'loss', 'top1', 'top10']


class TrainConfig(metaclass=ConfigMeta):
    config_options = dict(
        epochs = (20,
            'number of passes over the training data'),
        batch_size = (64,
            'number of records per optimization step'),
        learning_rate = (1e-3,
            'step size of the Adam optimizer'),
        margin = (0.2,
            'margin of the triplet loss'),
        unseen_weight = (1.0,
            'weight of the loss term that pushes the unseen lab away from '
            'the training sequences'),
        shifts_per_epoch = (1,
            'number of randomly shifted copies of every record per epoch; '
            '0 disables the shift augmentation'),
        seed = (0,
            'seed for initialization, shuffling and shift offsets'),
        precision = ('float32',
            'floating point precision of the forward and backward passes; the '
            'parameters and the optimizer state stay float32 as stored in checkpoints'),
        prefetch = (True,
            'prepare upcoming batches on worker threads'),
    )

    def __init__(self, config=None):
        self.configure(config)
        self.validate()

    def validate(self):
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs}")
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            raise ConfigError(f"the batch size must be at least 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"the learning rate must be positive, got {self.learning_rate}")
        if self.margin <= 0:
            raise ConfigError(f"the margin must be positive, got {self.margin}")
        if self.unseen_weight < 0:
            raise ConfigError(f"the unseen weight must not be negative, got {self.unseen_weight}")
        if not isinstance(self.shifts_per_epoch, int) or self.shifts_per_epoch < 0:
            raise ConfigError(f"shifts_per_epoch must be a non-negative integer, got {self.shifts_per_epoch}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"unknown precision '{self.precision}'")


def triplet_loss(sim_ap, sim_an, m):
    """ max(0, m - sim_ap + sim_an), elementwise for arrays.
    """
    return np.maximum(0.0, m - np.asarray(sim_ap) + np.asarray(sim_an))


def triplet_graph(cfg: ModelConfig, margin: float, unseen_weight: float) -> Graph:
    """ Loss graph of the triplet network.

    For anchor a with true lab p, mined negative n and the unseen lab u:

        loss = mean(relu(m - sim(a,p) + sim(a,n)) + w * relu(m - sim(a,p) + sim(a,u)))

    Negatives are mined on the current values of the anchors and the lab
    table while the graph is built, and treated as constants. They can also
    be given as an input named 'negatives'.
    """
    def build(tape, inp):
        anchors = embed_nodes(tape, cfg, inp)
        labs = tape.l2_normalize(inp['lab_table'])
        sims = tape.matmul_t(anchors, labs)

        labels = inp['labels']
        negatives = inp.get('negatives', None)
        if negatives is None:
            mined, _ = hard_negatives(MiningBatch(labels.value, anchors.value, inp['lab_table'].value))
            negatives = tape.input('negatives', mined)
        unseen = tape.input('unseen', np.full(labels.value.shape, cfg.lab_count, dtype=np.int64))

        sim_ap = tape.take(sims, labels)
        sim_an = tape.take(sims, negatives)
        sim_au = tape.take(sims, unseen)

        neg_term = tape.relu(tape.shift(tape.sub(sim_an, sim_ap), margin))
        unseen_term = tape.relu(tape.shift(tape.sub(sim_au, sim_ap), margin))
        loss = tape.mean(tape.add(neg_term, tape.scale(unseen_term, unseen_weight)))
        return {
                'loss': loss,
                'sims': sims,
                'sim_ap': sim_ap,
                'sim_an': sim_an,
                'sim_au': sim_au,
                'negatives': negatives,
            }
    return Graph(build, name='triplet_loss')


def rank_positions(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """ 0-based position of the true lab in the ranking of every row of
    `scores` (B, L), with ties broken by lab index.
    """
    true_scores = scores[np.arange(len(labels)), labels][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    better = (scores > true_scores) | ((scores == true_scores) & (idx < labels[:, None]))
    return np.sum(better, axis=1)


class _EpochStats:
    def __init__(self):
        self.loss_sum = 0.0
        self.count = 0
        self.top1 = 0
        self.top10 = 0

    def add(self, loss, scores, labels):
        n = len(labels)
        pos = rank_positions(scores, labels)
        self.loss_sum += float(loss) * n
        self.count += n
        self.top1 += int(np.sum(pos < 1))
        self.top10 += int(np.sum(pos < 10))

    def row(self, epoch, split):
        return {
                'epoch': epoch,
                'split': split,
                'loss': self.loss_sum / self.count,
                'top1': self.top1 / self.count,
                'top10': self.top10 / self.count,
            }


def epoch_plan(ds: Dataset, tc: TrainConfig, epoch: int) -> Tuple[np.ndarray, np.ndarray]:
    """ Record indices in training order and their shift offsets for one
    epoch.
    """
    n = len(ds)
    copies = max(tc.shifts_per_epoch, 1)
    indices = np.tile(np.arange(n), copies)
    if tc.shifts_per_epoch == 0:
        offsets = np.zeros(len(indices), dtype=np.int64)
    else:
        lengths = np.array([len(r.sequence) for r in ds], dtype=np.int64)
        offsets = derive_rng(tc.seed, STREAM_SHIFT, epoch).integers(0, np.tile(lengths, copies))
    order = derive_rng(tc.seed, STREAM_SHUFFLE, epoch).permutation(len(indices))
    return indices[order], offsets[order]


class _BatchSource:
    """ Prepares the token batches of an epoch, optionally on worker threads.
    Batches are delivered in order.
    """

    def __init__(self, ds: Dataset, tokenizer: Tokenizer, cfg: ModelConfig, batch_size: int):
        self.ds = ds
        self.tokenizer = tokenizer
        self.max_len = cfg.max_len
        self.batch_size = batch_size

    def chunks(self, indices, offsets):
        for start in range(0, len(indices), self.batch_size):
            yield indices[start:start + self.batch_size], offsets[start:start + self.batch_size]

    def prepare(self, chunk):
        idx, offs = chunk
        return prepare_batch(self.tokenizer, [self.ds[int(i)] for i in idx], offs, self.max_len)

    def batches(self, indices, offsets, pool: Optional[ThreadPool]):
        if pool is None:
            return map(self.prepare, self.chunks(indices, offsets))
        return pool.imap(self.prepare, self.chunks(indices, offsets))


def _check_dataset(ds: Dataset, tokenizer: Tokenizer, mc: ModelConfig, tc: TrainConfig) -> ModelConfig:
    if ds.num_labs < 2:
        raise DataError(f"training needs at least 2 labs, the dataset has {ds.num_labs}")
    if len(ds) == 0:
        raise DataError("cannot train on an empty dataset")
    return mc.copy(lab_count=ds.num_labs, feature_count=ds.feature_count,
            vocab_size=tokenizer.vocab_size, margin=tc.margin)


class _Trainer:
    """ The loop shared by both models; subclasses provide the loss graph and
    the scores that are ranked for the accuracy columns of the log.
    """
    kind = None

    def __init__(self, params: ModelParams, tc: TrainConfig):
        self.params = params
        self.cfg = params.config
        self.tc = tc
        self.graph = self.make_graph()

    def make_graph(self) -> Graph:
        raise NotImplementedError

    def scores(self, outputs) -> np.ndarray:
        raise NotImplementedError

    def graph_inputs(self, tensors, batch: TokenBatch):
        inputs = dict(tensors)
        inputs.update(batch_inputs(self.cfg, batch))
        inputs['labels'] = batch.labels
        return inputs

    def evaluate_split(self, ds: Dataset, source: _BatchSource, pool, epoch, split):
        stats = _EpochStats()
        indices = np.arange(len(ds))
        offsets = np.zeros(len(ds), dtype=np.int64)
        for batch in source.batches(indices, offsets, pool):
            outputs = evaluate(self.graph, self.graph_inputs(self.params.tensors, batch), precision=self.tc.precision)
            stats.add(outputs['loss'], self.scores(outputs), batch.labels)
        return stats.row(epoch, split)

    def run(self, ds: Dataset, val_ds: Optional[Dataset]):
        tc = self.tc
        tensors = dict(self.params.tensors)
        state = AdamState(lr=tc.learning_rate)
        source = _BatchSource(ds, self.params.tokenizer, self.cfg, tc.batch_size)
        val_source = None if val_ds is None else _BatchSource(val_ds, self.params.tokenizer, self.cfg, tc.batch_size)

        rows = []
        pool = ThreadPool(worker_count()) if tc.prefetch else None
        try:
            for epoch in range(tc.epochs):
                with Timer(f"{self.kind} epoch {epoch}"):
                    indices, offsets = epoch_plan(ds, tc, epoch)
                    num_batches = (len(indices) + tc.batch_size - 1) // tc.batch_size
                    stats = _EpochStats()
                    with progress_bar(f"epoch {epoch}", num_batches) as bar:
                        for b, batch in enumerate(source.batches(indices, offsets, pool)):
                            try:
                                outputs, grads = value_and_gradients(self.graph, self.graph_inputs(tensors, batch),
                                        wrt=list(tensors.keys()), precision=tc.precision)
                            except NumericError as e:
                                raise NumericError(f"epoch {epoch}, batch {b}: {e}")
                            tensors, state = adam_step(tensors, grads, state)
                            stats.add(outputs['loss'], self.scores(outputs), batch.labels)
                            bar.next()
                    self.params = self.params.with_tensors(tensors)
                    row = stats.row(epoch, 'train')
                    rows.append(row)
                    logger.info(f"epoch {epoch}: train loss {row['loss']:.5f}, top1 {row['top1']:.4f}, top10 {row['top10']:.4f}")
                    if val_ds is not None:
                        row = self.evaluate_split(val_ds, val_source, pool, epoch, 'val')
                        rows.append(row)
                        logger.info(f"epoch {epoch}: val loss {row['loss']:.5f}, top1 {row['top1']:.4f}, top10 {row['top10']:.4f}")
        finally:
            if pool is not None:
                pool.close()
                pool.join()

        return self.params, pd.DataFrame(rows, columns=LOG_COLUMNS)


class _TripletTrainer(_Trainer):
    kind = 'triplet'

    def make_graph(self):
        return triplet_graph(self.cfg, self.tc.margin, self.tc.unseen_weight)

    def scores(self, outputs):
        return outputs['sims'][:, :self.cfg.lab_count]


class _ClassifierTrainer(_Trainer):
    kind = 'classifier'

    def make_graph(self):
        return classifier_graph(self.cfg)

    def scores(self, outputs):
        return outputs['logits']


def _check_val(ds: Dataset, val_ds: Optional[Dataset]):
    if val_ds is not None and val_ds.lab_vocab != ds.lab_vocab:
        raise DataError("training and validation data use different lab vocabularies")


def train_triplet(ds: Dataset, mc: ModelConfig, tc: TrainConfig, tokenizer: Tokenizer,
        val_ds: Optional[Dataset] = None) -> Tuple[TripletParams, pd.DataFrame]:
    """ Train a triplet network on `ds`. The number of labs, the feature
    count, the vocabulary size and the margin of `mc` are taken from the
    data, the tokenizer and `tc`.

    Returns the parameters and the training log with one row per epoch and
    split.
    """
    cfg = _check_dataset(ds, tokenizer, mc, tc)
    _check_val(ds, val_ds)
    params = init_triplet(cfg, ds.lab_vocab, tokenizer, tc.seed)
    logger.info(f"training {params} on {len(ds)} records")
    return _TripletTrainer(params, tc).run(ds, val_ds)


def train_classifier(ds: Dataset, mc: ModelConfig, tc: TrainConfig, tokenizer: Tokenizer,
        val_ds: Optional[Dataset] = None) -> Tuple[ClassifierParams, pd.DataFrame]:
    """ Train a softmax classifier on `ds`; see `train_triplet`.
    """
    cfg = _check_dataset(ds, tokenizer, mc, tc)
    _check_val(ds, val_ds)
    params = init_classifier(cfg, ds.lab_vocab, tokenizer, tc.seed)
    logger.info(f"training {params} on {len(ds)} records")
    return _ClassifierTrainer(params, tc).run(ds, val_ds)


def write_training_log(log: pd.DataFrame, path):
    log.to_csv(path, index=False, float_format='%.6f')
