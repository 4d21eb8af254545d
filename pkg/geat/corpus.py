""" Datasets of labeled DNA records: loading and storing them as CSV files,
stratified splitting and the synthesis of artificial datasets with known
structure.

The CSV layout is `id,sequence,lab_id,f0,...,f{F-1}` where the feature columns
hold binary phenotype features. The lab column carries lab names; they are
mapped to indices through a `LabVocab`.
"""

from dataclasses import dataclass, field
import csv
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ConfigError, ParseError, ValidationError, SchemaError, DuplicateIdError, LabVocabError
from .utils import derive_rng, STREAM_SYNTH, STREAM_SPLIT

import logging
logger = logging.getLogger(__name__)

ALPHABET = "ACGTN"
_ALPHABET_SET = frozenset(ALPHABET)

# bases used when synthesizing sequences, 'N' is never generated
_SYNTH_BASES = np.array(list("ACGT"))

SYNTH_FEATURE_COUNT = 8


def validate_sequence(sequence: str) -> str:
    """ Return `sequence` if it is a non-empty string over the DNA alphabet,
    raise a ValidationError otherwise.
    """
    if len(sequence) == 0:
        raise ValidationError("empty sequence")
    if not _ALPHABET_SET.issuperset(sequence):
        bad = next(c for c in sequence if c not in _ALPHABET_SET)
        raise ValidationError(f"invalid character '{bad}' in sequence (allowed: {ALPHABET})")
    return sequence


@dataclass(frozen=True)
class DnaRecord:
    """ One engineered DNA sequence together with its binary phenotype
    features and the index of its lab-of-origin.
    """
    id: str
    sequence: str
    features: Tuple[int, ...]
    lab: int

    def __post_init__(self):
        validate_sequence(self.sequence)
        if any(f not in (0, 1) for f in self.features):
            raise ValidationError(f"record '{self.id}': features must be 0 or 1")


class LabVocab:
    """ Bijective mapping between lab names and lab indices.

    Index `len(names)` is reserved for the "unseen" lab of the triplet model.
    """

    def __init__(self, names: Sequence[str]):
        self.names = tuple(names)
        self._index = {n: i for i, n in enumerate(self.names)}
        if len(self._index) != len(self.names):
            dups = sorted({n for n in self.names if self.names.count(n) > 1})
            raise LabVocabError(f"duplicate lab names in vocabulary: {', '.join(dups)}")

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, LabVocab) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __contains__(self, name):
        return name in self._index

    def __repr__(self):
        return f"LabVocab({len(self)} labs)"

    @property
    def unseen_index(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LabVocabError(f"unknown lab '{name}'")

    def name(self, idx: int) -> str:
        return self.names[idx]

    def extended(self, name: str) -> "LabVocab":
        return LabVocab(self.names + (name,))


class Dataset:
    """ An immutable collection of DnaRecords that share a lab vocabulary and a
    feature width.
    """

    def __init__(self, records: Sequence[DnaRecord], lab_vocab: LabVocab, feature_count: int):
        self.records = tuple(records)
        self.lab_vocab = lab_vocab
        self.feature_count = feature_count

        seen = set()
        num_labs = len(lab_vocab)
        for r in self.records:
            if r.id in seen:
                raise DuplicateIdError(f"duplicate record id '{r.id}'")
            seen.add(r.id)
            if len(r.features) != feature_count:
                raise SchemaError(f"record '{r.id}' has {len(r.features)} features, expected {feature_count}")
            if not (0 <= r.lab < num_labs):
                raise LabVocabError(f"record '{r.id}' has lab index {r.lab} outside of [0, {num_labs})")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.records == other.records
                and self.lab_vocab == other.lab_vocab and self.feature_count == other.feature_count)

    def __repr__(self):
        return f"Dataset({len(self)} records, {len(self.lab_vocab)} labs, {self.feature_count} features)"

    @property
    def num_labs(self) -> int:
        return len(self.lab_vocab)

    def labels(self) -> np.ndarray:
        return np.array([r.lab for r in self.records], dtype=np.int64)

    def feature_matrix(self) -> np.ndarray:
        return np.array([r.features for r in self.records], dtype=np.float64).reshape(len(self), self.feature_count)

    def by_lab(self) -> Dict[int, Tuple[DnaRecord, ...]]:
        """ Group records by lab index, preserving the record order.
        """
        res = {i: [] for i in range(self.num_labs)}
        for r in self.records:
            res[r.lab].append(r)
        return {k: tuple(v) for k, v in res.items()}

    def subset(self, records: Sequence[DnaRecord]) -> "Dataset":
        return Dataset(records, self.lab_vocab, self.feature_count)

    def remap(self, vocab: LabVocab) -> "Dataset":
        """ Re-index the records onto another lab vocabulary, e.g. the one of
        a trained model. All lab names of this dataset must occur in `vocab`.
        """
        if vocab == self.lab_vocab:
            return self
        missing = sorted({self.lab_vocab.name(r.lab) for r in self.records} - set(vocab.names))
        if len(missing) > 0:
            shown = ", ".join(missing[:5]) + (", ..." if len(missing) > 5 else "")
            raise LabVocabError(f"{len(missing)} lab(s) of the dataset are unknown to the model: {shown}")
        records = [DnaRecord(r.id, r.sequence, r.features, vocab.index(self.lab_vocab.name(r.lab)))
                for r in self.records]
        return Dataset(records, vocab, self.feature_count)

    def only_labs(self, names: Sequence[str]) -> "Dataset":
        """ Restrict the dataset to the given labs, with a new vocabulary in
        the order of `names`.
        """
        vocab = LabVocab(names)
        records = [DnaRecord(r.id, r.sequence, r.features, vocab.index(self.lab_vocab.name(r.lab)))
                for r in self.records if self.lab_vocab.name(r.lab) in vocab]
        return Dataset(records, vocab, self.feature_count)

    def without_labs(self, names: Sequence[str]) -> "Dataset":
        excluded = set(names)
        return self.only_labs([n for n in self.lab_vocab.names if n not in excluded])


@dataclass(frozen=True)
class DatasetSchema:
    """ Names of the dataset columns. All further columns are binary feature
    columns, in the order of the header.
    """
    id_column: str = 'id'
    sequence_column: str = 'sequence'
    lab_column: str = 'lab_id'


def load_dataset(path, schema: Optional[DatasetSchema] = None, lab_vocab: Optional[LabVocab] = None,
        feature_count: Optional[int] = None) -> Dataset:
    """ Load a dataset from a CSV file.

    Without a `lab_vocab`, the vocabulary is built from the lab names in order
    of their first appearance. With one, lab names are resolved through it.
    If `feature_count` is given, the file must have exactly that many feature
    columns.
    """
    if schema is None:
        schema = DatasetSchema()

    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file '{path}' does not exist")

    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"dataset file '{path}' has no header row", row=1)

        header = [h.strip() for h in header]
        required = (schema.id_column, schema.sequence_column, schema.lab_column)
        for col in required:
            if col not in header:
                raise SchemaError(f"dataset file '{path}' lacks the column '{col}'")
        id_pos, seq_pos, lab_pos = (header.index(c) for c in required)
        feature_pos = [i for i, c in enumerate(header) if c not in required]

        if feature_count is not None and len(feature_pos) != feature_count:
            raise SchemaError(f"dataset file '{path}' has {len(feature_pos)} feature columns, expected {feature_count}")

        names = list(lab_vocab.names) if lab_vocab is not None else []
        name_to_idx = {n: i for i, n in enumerate(names)}

        records = []
        for row in reader:
            row_num = reader.line_num
            if len(row) == 0:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, found {len(row)}", row=row_num)

            try:
                sequence = validate_sequence(row[seq_pos].strip().upper())
            except ValidationError as e:
                raise ValidationError(f"row {row_num}: {e}")

            features = []
            for p in feature_pos:
                v = row[p].strip()
                if v not in ('0', '1'):
                    raise ValidationError(f"row {row_num}: feature column '{header[p]}' holds '{v}', expected 0 or 1")
                features.append(int(v))

            lab_name = row[lab_pos].strip()
            lab = name_to_idx.get(lab_name, None)
            if lab is None:
                if lab_vocab is not None:
                    raise LabVocabError(f"row {row_num}: lab '{lab_name}' is not in the given vocabulary")
                lab = len(names)
                names.append(lab_name)
                name_to_idx[lab_name] = lab

            records.append(DnaRecord(row[id_pos].strip(), sequence, tuple(features), lab))

    vocab = lab_vocab if lab_vocab is not None else LabVocab(names)
    ds = Dataset(records, vocab, len(feature_pos))
    logger.info(f"loaded {ds} from '{path}'")
    return ds


def save_dataset(ds: Dataset, path):
    """ Store a dataset in the CSV layout understood by `load_dataset`.
    """
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['id', 'sequence', 'lab_id'] + [f'f{i}' for i in range(ds.feature_count)])
        for r in ds.records:
            writer.writerow([r.id, r.sequence, ds.lab_vocab.name(r.lab)] + list(r.features))


def save_lab_vocab(vocab: LabVocab, path):
    """ One lab name per line, the line number is the lab index.
    """
    with open(path, 'w', encoding='utf-8') as f:
        for n in vocab.names:
            f.write(n + '\n')


def load_lab_vocab(path) -> LabVocab:
    with open(path, 'r', encoding='utf-8') as f:
        names = [l.rstrip('\n') for l in f]
    while len(names) > 0 and names[-1] == '':
        names.pop()
    return LabVocab(names)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_stratified(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """ Split a dataset into train, validation and test parts, separately for
    every lab.

    Labs with fewer than 3 records go to the training part completely. All
    three parts keep the vocabulary of `ds`, so lab indices stay comparable.
    """
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")

    order = {r.id: i for i, r in enumerate(ds.records)}
    parts = ([], [], [])
    for lab, records in ds.by_lab().items():
        n = len(records)
        if n == 0:
            continue
        if n < 3:
            parts[0].extend(records)
            continue
        n_val = _round_half_up(n * fractions[1])
        n_test = _round_half_up(n * fractions[2])
        while n_val + n_test >= n:
            # keep at least one training record
            if n_val >= n_test:
                n_val -= 1
            else:
                n_test -= 1
        rng = derive_rng(seed, STREAM_SPLIT, lab)
        perm = rng.permutation(n)
        shuffled = [records[i] for i in perm]
        parts[1].extend(shuffled[:n_val])
        parts[2].extend(shuffled[n_val:n_val + n_test])
        parts[0].extend(shuffled[n_val + n_test:])

    res = tuple(ds.subset(sorted(p, key=lambda r: order[r.id])) for p in parts)
    logger.info(f"split {len(ds)} records into {len(res[0])}/{len(res[1])}/{len(res[2])}")
    return res


def synthetic_motifs(n_labs: int, motif_len: int, seed: int):
    """ The private motif of every lab in datasets from `make_synthetic` with
    the same arguments.
    """
    rng = derive_rng(seed, STREAM_SYNTH, 0)
    return ["".join(_SYNTH_BASES[rng.integers(0, 4, size=motif_len)]) for _ in range(n_labs)]


def make_synthetic(n_labs: int, per_lab: int, motif_len: int, seq_len: int, noise: float, seed: int) -> Dataset:
    """ Create a dataset where every lab plants its own random motif at a
    random position of otherwise uniformly random sequences.

    Afterwards, every base is substituted by a different random base with
    probability `noise`. The 8 binary features are the low bits of the lab
    index, so they carry information about the lab.
    """
    if n_labs < 2:
        raise ConfigError(f"a synthetic dataset needs at least 2 labs, got {n_labs}")
    if per_lab < 1:
        raise ConfigError(f"a synthetic dataset needs at least 1 record per lab, got {per_lab}")
    if not (0 < motif_len < seq_len):
        raise ConfigError(f"the motif length must be in [1, {seq_len}), got {motif_len}")
    if not (0.0 <= noise <= 1.0):
        raise ConfigError(f"the noise rate must be a probability, got {noise}")

    motifs = synthetic_motifs(n_labs, motif_len, seed)
    base_idx = {b: i for i, b in enumerate(_SYNTH_BASES)}
    rng = derive_rng(seed, STREAM_SYNTH, 1)

    names = [f"LAB{l:04d}" for l in range(n_labs)]
    records = []
    for lab in range(n_labs):
        motif = np.array([base_idx[b] for b in motifs[lab]])
        features = tuple((lab >> bit) & 1 for bit in range(SYNTH_FEATURE_COUNT))
        for i in range(per_lab):
            seq = rng.integers(0, 4, size=seq_len)
            pos = int(rng.integers(0, seq_len - motif_len + 1))
            seq[pos:pos + motif_len] = motif
            substituted = rng.random(seq_len) < noise
            shift = rng.integers(1, 4, size=seq_len)
            seq = np.where(substituted, (seq + shift) % 4, seq)
            records.append(DnaRecord(f"{names[lab]}_{i:05d}", "".join(_SYNTH_BASES[seq]), features, lab))

    return Dataset(records, LabVocab(names), SYNTH_FEATURE_COUNT)
