""" Inference: ranking the known labs for a sequence with test-time
augmentation, top-k accuracy, detection of sequences from unknown labs, and
synthesis of lab embeddings from sample sequences.

Test-time augmentation feeds several circularly shifted versions of a
sequence to the model and averages the outputs: cosine similarities for the
triplet network, probabilities for the classifier. The unshifted sequence is
always the first version.
"""

from multiprocessing.pool import ThreadPool
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .configurable import ConfigMeta
from .corpus import DnaRecord, LabVocab
from .errors import ConfigError, DataError, LabVocabError, NumericError, ParseError
from .model import (TRIPLET, CLASSIFIER, ModelParams, TripletParams, embed_sequence, classifier_probs,
        lab_similarities, normalize_rows)
from .tokenize import prepare_batch
from .utils import derive_rng, split_seed, worker_count, progress_bar, STREAM_TTA

import logging
logger = logging.getLogger(__name__)

RANKING_COLUMNS = ['record_id', 'rank', 'lab_name', 'score']
REPORT_KS = (1, 5, 10)


class RankConfig(metaclass=ConfigMeta):
    config_options = dict(
        tta_n = (8,
            'number of shifted versions per sequence that are averaged at '
            'inference time (the first one is unshifted)'),
        unknown_threshold = (None,
            'sequences whose best known-lab similarity is below this value '
            'are reported as coming from an unknown lab (triplet only); '
            'null disables the detection'),
        batch_size = (64,
            'number of records per inference batch'),
        seed = (0,
            'seed for the shift offsets of the augmentation'),
    )

    def __init__(self, config=None):
        self.configure(config)
        if not isinstance(self.tta_n, int) or self.tta_n < 1:
            raise ConfigError(f"tta_n must be a positive integer, got {self.tta_n}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"the batch size must be a positive integer, got {self.batch_size}")


class Ranking:
    """ All known labs, ordered by descending score.

    Rankings computed from model outputs (`from_scores`) break score ties by
    ascending lab index. Triplet rankings may carry the similarity to the
    unseen lab.
    """

    def __init__(self, entries: Sequence[Tuple[int, float]], kind: str, unseen_score: Optional[float] = None):
        self.labs = np.array([int(l) for l, s in entries], dtype=np.int64)
        self.scores = np.array([float(s) for l, s in entries], dtype=np.float64)
        self.kind = kind
        self.unseen_score = None if unseen_score is None else float(unseen_score)

        if len(self.labs) == 0:
            raise DataError("a ranking needs at least one lab")
        if sorted(self.labs.tolist()) != list(range(len(self.labs))):
            raise DataError("a ranking must contain every lab exactly once")
        if not np.all(np.isfinite(self.scores)):
            raise NumericError("ranking with non-finite scores")
        if np.any(np.diff(self.scores) > 0):
            raise DataError("ranking scores must not increase")

        self._positions = np.empty(len(self.labs), dtype=np.int64)
        self._positions[self.labs] = np.arange(len(self.labs))

    @staticmethod
    def from_scores(scores, kind: str, unseen_score: Optional[float] = None) -> "Ranking":
        scores = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise NumericError("ranking with non-finite scores")
        order = np.lexsort((np.arange(len(scores)), -scores))
        return Ranking([(int(l), scores[l]) for l in order], kind, unseen_score)

    def __len__(self):
        return len(self.labs)

    def __eq__(self, other):
        return (isinstance(other, Ranking) and np.array_equal(self.labs, other.labs)
                and np.array_equal(self.scores, other.scores))

    def __repr__(self):
        return f"Ranking({self.kind}, top={self.labs[:3].tolist()})"

    def position(self, lab: int) -> int:
        """ 0-based position of `lab`.
        """
        return int(self._positions[lab])

    def positions(self) -> np.ndarray:
        """ 0-based positions of all labs, indexed by lab.
        """
        return self._positions.copy()

    def top(self, k: int) -> List[int]:
        return self.labs[:k].tolist()

    @property
    def top_score(self) -> float:
        return float(self.scores[0])


def tta_offsets(sequence_length: int, tta_n: int, seed: int) -> np.ndarray:
    """ Offset 0 followed by `tta_n - 1` random offsets.
    """
    if tta_n < 1:
        raise ConfigError(f"tta_n must be at least 1, got {tta_n}")
    rng = derive_rng(seed, STREAM_TTA)
    rest = rng.integers(0, sequence_length, size=tta_n - 1)
    return np.concatenate([np.zeros(1, dtype=np.int64), rest.astype(np.int64)])


def _check_features(params: ModelParams, records: Sequence[DnaRecord]):
    for r in records:
        if len(r.features) != params.config.feature_count:
            raise DataError(f"record '{r.id}' has {len(r.features)} features, the model expects {params.config.feature_count}")


def _augmented_outputs(params: ModelParams, records: Sequence[DnaRecord], seeds: Sequence[int],
        tta_n: int, with_unseen: bool = True) -> np.ndarray:
    """ Model outputs averaged over the shifted versions of every record:
    similarities (R, L+1) including the unseen lab for the triplet network,
    probabilities (R, L) for the classifier.
    """
    reps, offsets = [], []
    for r, s in zip(records, seeds):
        reps.extend([r] * tta_n)
        offsets.append(tta_offsets(len(r.sequence), tta_n, s))
    batch = prepare_batch(params.tokenizer, reps, np.concatenate(offsets), params.config.max_len)
    if params.kind == TRIPLET:
        outputs = lab_similarities(params, embed_sequence(params, batch), include_unseen=with_unseen)
    else:
        outputs = classifier_probs(params, batch)
    outputs = outputs.astype(np.float64).reshape(len(records), tta_n, -1)
    return outputs.mean(axis=1)


def _to_ranking(params: ModelParams, row: np.ndarray) -> Ranking:
    if params.kind == TRIPLET:
        return Ranking.from_scores(row[:-1], TRIPLET, unseen_score=row[-1])
    return Ranking.from_scores(row, CLASSIFIER)


def rank_labs(params: ModelParams, record: DnaRecord, tta_n: int = 8, seed: int = 0) -> Ranking:
    _check_features(params, [record])
    row = _augmented_outputs(params, [record], [seed], tta_n)[0]
    return _to_ranking(params, row)


def rank_records(params: ModelParams, records: Sequence[DnaRecord], tta_n: int = 8, seed: int = 0,
        batch_size: int = 64) -> List[Ranking]:
    """ Rank every record like `rank_labs`, with the seed of the i-th record
    derived from `seed` and i. Batches are processed on worker threads; the
    result is in record order.
    """
    if len(records) == 0:
        return []
    _check_features(params, records)
    seeds = [split_seed(seed, i) for i in range(len(records))]
    chunks = [(records[i:i + batch_size], seeds[i:i + batch_size]) for i in range(0, len(records), batch_size)]

    def work(chunk):
        recs, chunk_seeds = chunk
        return _augmented_outputs(params, recs, chunk_seeds, tta_n)

    res = []
    pool = ThreadPool(worker_count())
    try:
        with progress_bar("ranking", len(chunks)) as bar:
            for rows in pool.imap(work, chunks):
                res.extend(_to_ranking(params, row) for row in rows)
                bar.next()
    finally:
        pool.close()
        pool.join()
    return res


def top_k_accuracy(rankings: Sequence[Ranking], truths: Sequence[int], k: int) -> float:
    if len(rankings) != len(truths):
        raise DataError(f"{len(rankings)} rankings for {len(truths)} true labs")
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    if len(rankings) == 0:
        raise DataError("cannot compute the accuracy of zero rankings")
    hits = sum(1 for r, t in zip(rankings, truths) if r.position(int(t)) < k)
    return hits / len(rankings)


def detect_unknown(r: Ranking, unseen_score: float, threshold: float) -> bool:
    """ A sequence is attributed to an unknown lab if its best known lab
    scores below `threshold` or if it is more similar to the unseen lab than
    to any known lab.
    """
    top = r.top_score
    return bool(top < threshold or unseen_score > top)


def unknown_scores(rankings: Sequence[Ranking]) -> Tuple[np.ndarray, np.ndarray]:
    """ The best known-lab score and the unseen-lab score of every triplet
    ranking.
    """
    for r in rankings:
        if r.unseen_score is None:
            raise DataError(f"{r.kind} rankings have no unseen-lab score")
    top = np.array([r.top_score for r in rankings], dtype=np.float64)
    unseen = np.array([r.unseen_score for r in rankings], dtype=np.float64)
    return top, unseen


def auroc(positive_scores, negative_scores) -> float:
    """ Area under the ROC curve for separating positives (expected to score
    higher) from negatives, computed from average ranks; ties count half.
    """
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("the AUROC needs at least one positive and one negative score")
    ranks = pd.Series(np.concatenate([pos, neg])).rank(method='average').to_numpy()
    rank_sum = ranks[:len(pos)].sum()
    return float((rank_sum - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))


def lab_embedding_from_samples(params: TripletParams, records: Sequence[DnaRecord], tta_n: int = 8,
        seed: int = 0) -> np.ndarray:
    """ Embedding for a lab that the model was not trained on: the normalized
    mean of the (augmentation averaged) embeddings of its sample sequences.
    """
    if params.kind != TRIPLET:
        raise DataError("lab embeddings can only be synthesized with a triplet model")
    if len(records) == 0:
        raise DataError("cannot synthesize a lab embedding from zero samples")
    _check_features(params, records)
    embs = []
    for i, r in enumerate(records):
        batch = prepare_batch(params.tokenizer, [r] * tta_n,
                tta_offsets(len(r.sequence), tta_n, split_seed(seed, i)), params.config.max_len)
        embs.append(embed_sequence(params, batch).astype(np.float64).mean(axis=0))
    mean = np.mean(embs, axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        raise NumericError("the sample embeddings cancel out")
    return mean / norm


def record_embeddings(params: TripletParams, records: Sequence[DnaRecord], batch_size: int = 64) -> np.ndarray:
    """ Unshifted sequence embeddings (R, E) of all records.
    """
    _check_features(params, records)
    res = []
    for i in range(0, len(records), batch_size):
        chunk = records[i:i + batch_size]
        batch = prepare_batch(params.tokenizer, chunk, np.zeros(len(chunk), dtype=np.int64), params.config.max_len)
        res.append(embed_sequence(params, batch))
    return normalize_rows(np.concatenate(res, axis=0).astype(np.float64))


def write_rankings(path, record_ids: Sequence[str], rankings: Sequence[Ranking], labs: LabVocab):
    """ Store rankings as `record_id,rank,lab_name,score` rows, sorted by
    record id, with 1-based ranks.
    """
    rows = []
    for rid, r in sorted(zip(record_ids, rankings), key=lambda x: x[0]):
        for pos, (lab, score) in enumerate(zip(r.labs, r.scores), start=1):
            rows.append((rid, pos, labs.name(int(lab)), score))
    df = pd.DataFrame(rows, columns=RANKING_COLUMNS)
    df.to_csv(path, index=False, float_format='%.9g')


def read_rankings(path, labs: Optional[LabVocab] = None, kind: str = 'external'):
    """ Read a ranking CSV file. Lab names are mapped onto `labs` or, if
    none is given, onto the sorted set of names in the file.

    Returns the record ids (in file order), the rankings and the lab
    vocabulary.
    """
    try:
        df = pd.read_csv(path, dtype={'record_id': str, 'lab_name': str}, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"malformed ranking file '{path}': {e}")
    missing = [c for c in RANKING_COLUMNS if c not in df.columns]
    if len(missing) > 0:
        raise ParseError(f"ranking file '{path}' lacks the columns {', '.join(missing)}")
    try:
        df['rank'] = pd.to_numeric(df['rank'], errors='raise').astype(np.int64)
        df['score'] = pd.to_numeric(df['score'], errors='raise').astype(np.float64)
    except (ValueError, TypeError) as e:
        raise ParseError(f"ranking file '{path}' holds a malformed rank or score: {e}")

    if labs is None:
        labs = LabVocab(sorted(set(df['lab_name'])))

    record_ids, rankings = [], []
    for rid, group in df.groupby('record_id', sort=False):
        group = group.sort_values('rank')
        if group['rank'].tolist() != list(range(1, len(group) + 1)):
            raise ParseError(f"record '{rid}' in '{path}' has non-consecutive ranks")
        names = group['lab_name'].tolist()
        if sorted(names) != sorted(labs.names):
            raise LabVocabError(f"record '{rid}' in '{path}' does not rank exactly the labs {labs}")
        entries = [(labs.index(n), s) for n, s in zip(names, group['score'].tolist())]
        record_ids.append(str(rid))
        rankings.append(Ranking(entries, kind))
    return record_ids, rankings, labs


def accuracy_report(rankings: Sequence[Ranking], truths: Sequence[int], ks: Sequence[int] = REPORT_KS) -> pd.DataFrame:
    return pd.DataFrame([(k, top_k_accuracy(rankings, truths, k)) for k in ks], columns=['k', 'accuracy'])


def write_report(path, report: pd.DataFrame):
    report.to_csv(path, index=False, float_format='%.6f')
