""" Byte pair encoding for DNA sequences, circular shifts of sequences, and the
preparation of fixed-length model inputs.

Token ids are laid out as follows: 0 is the padding token, 1 to 5 are the
bases A, C, G, T and N, and every further id is the result of one merge, in
training order.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .corpus import ALPHABET, DnaRecord, validate_sequence
from .errors import TokenizerError, ValidationError
from .utils import TimerDeco

import logging
logger = logging.getLogger(__name__)

FILE_MAGIC = "GEAT-BPE v1"

PAD_ID = 0
PAD_STRING = "<pad>"

DEFAULT_VOCAB_SIZE = 1001
DEFAULT_MAX_LEN = 1000

_NO_MERGE = np.iinfo(np.int32).max


def _base_lut(alphabet):
    lut = np.full(256, -1, dtype=np.int32)
    for i, c in enumerate(alphabet):
        lut[ord(c)] = i + 1
    return lut


def _apply_merge(ids: np.ndarray, left: int, right: int, new_id: int) -> np.ndarray:
    """ Replace every occurrence of the pair (left, right) in `ids` by
    `new_id`, scanning from left to right without overlaps.
    """
    if len(ids) < 2:
        return ids
    pos = np.flatnonzero((ids[:-1] == left) & (ids[1:] == right))
    if len(pos) == 0:
        return ids
    if left == right and len(pos) > 1:
        # In runs like "AAAA", matches at consecutive positions overlap. Only
        # every other match of a run (starting with the first) is merged.
        run_start = np.zeros(len(pos), dtype=np.int64)
        breaks = np.flatnonzero(np.diff(pos) != 1) + 1
        run_start[breaks] = breaks
        run_start = np.maximum.accumulate(run_start)
        pos = pos[(np.arange(len(pos)) - run_start) % 2 == 0]
    res = ids.copy()
    res[pos] = new_id
    return np.delete(res, pos + 1)


class Tokenizer:
    """ A trained BPE tokenizer: the DNA alphabet plus an ordered list of
    merges. Instances are immutable.
    """

    def __init__(self, merges: Sequence[Tuple[str, str]], alphabet: str = ALPHABET):
        if alphabet != ALPHABET:
            raise TokenizerError(f"unsupported alphabet '{alphabet}', expected '{ALPHABET}'")
        self.alphabet = alphabet
        self.merges = tuple((str(l), str(r)) for l, r in merges)

        self.tokens = [PAD_STRING] + list(alphabet)
        str_to_id = {t: i for i, t in enumerate(self.tokens)}
        merge_ids = []
        for l, r in self.merges:
            if l not in str_to_id or r not in str_to_id:
                raise TokenizerError(f"merge ({l}, {r}) references an undefined token")
            if l == PAD_STRING or r == PAD_STRING:
                raise TokenizerError("the padding token cannot be merged")
            new = l + r
            if 'N' in new:
                raise TokenizerError(f"merge ({l}, {r}) spans the ambiguity symbol 'N'")
            if new in str_to_id:
                raise TokenizerError(f"merge ({l}, {r}) produces the existing token '{new}'")
            merge_ids.append((str_to_id[l], str_to_id[r]))
            str_to_id[new] = len(self.tokens)
            self.tokens.append(new)

        self._str_to_id = str_to_id
        self._merge_ids = merge_ids
        self._lut = _base_lut(alphabet)

        num = len(self.tokens)
        self._rank = np.full((num, num), _NO_MERGE, dtype=np.int32)
        for rank, (l, r) in enumerate(merge_ids):
            self._rank[l, r] = rank

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Tokenizer) and self.merges == other.merges and self.alphabet == other.alphabet

    def __hash__(self):
        return hash(self.merges)

    def __repr__(self):
        return f"Tokenizer({len(self.merges)} merges, vocab_size={self.vocab_size})"

    def token_string(self, token_id: int) -> str:
        if not (0 <= token_id < len(self.tokens)):
            raise TokenizerError(f"invalid token id {token_id}")
        return self.tokens[token_id]

    def base_ids(self, sequence: str) -> np.ndarray:
        """ Map a sequence to base token ids, without any merges.
        """
        try:
            validate_sequence(sequence)
        except ValidationError as e:
            raise TokenizerError(str(e))
        return self._lut[np.frombuffer(sequence.encode('ascii'), dtype=np.uint8)]

    def encode(self, sequence: str) -> List[int]:
        """ Tokenize `sequence`. Merges are applied in training order; this is
        done by repeatedly applying the earliest merge that is applicable,
        which gives the same result.
        """
        ids = self.base_ids(sequence)
        rank_table = self._rank
        while len(ids) >= 2:
            ranks = rank_table[ids[:-1], ids[1:]]
            rank = int(ranks.min())
            if rank == _NO_MERGE:
                break
            l, r = self._merge_ids[rank]
            ids = _apply_merge(ids, l, r, len(ALPHABET) + 1 + rank)
        return ids.tolist()

    def decode(self, ids: Sequence[int]) -> str:
        """ Concatenate the token strings of `ids`. Trailing padding is
        ignored, padding in between is an error.
        """
        ids = list(ids)
        while len(ids) > 0 and ids[-1] == PAD_ID:
            ids.pop()
        if len(ids) == 0:
            raise TokenizerError("cannot decode an empty token sequence")
        parts = []
        for i in ids:
            if i == PAD_ID:
                raise TokenizerError("padding token inside of a token sequence")
            if not (0 < i < len(self.tokens)):
                raise TokenizerError(f"invalid token id {i}")
            parts.append(self.tokens[i])
        return "".join(parts)

    def to_text(self) -> str:
        lines = [FILE_MAGIC, self.alphabet]
        for l, r in self.merges:
            lines.append(f"{l}\t{r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "Tokenizer":
        lines = text.split('\n')
        while len(lines) > 0 and lines[-1] == '':
            lines.pop()
        if len(lines) < 2 or lines[0] != FILE_MAGIC:
            raise TokenizerError(f"not a tokenizer file (expected '{FILE_MAGIC}' as first line)")
        merges = []
        for num, line in enumerate(lines[2:], start=3):
            parts = line.split('\t')
            if len(parts) != 2:
                raise TokenizerError(f"line {num}: expected 'left<TAB>right'")
            merges.append((parts[0], parts[1]))
        return Tokenizer(merges, alphabet=lines[1])


def save_tokenizer(tok: Tokenizer, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(tok.to_text())


def load_tokenizer(path) -> Tokenizer:
    path = Path(path)
    if not path.exists():
        raise TokenizerError(f"tokenizer file '{path}' does not exist")
    with open(path, 'r', encoding='utf-8') as f:
        return Tokenizer.from_text(f.read())


@TimerDeco.Timer()
def train_bpe(corpus: Sequence[str], vocab_size: int = DEFAULT_VOCAB_SIZE) -> Tokenizer:
    """ Learn BPE merges on `corpus` until the vocabulary (bases, merges and
    padding) has `vocab_size` entries or no adjacent pair occurs at least
    twice.

    The most frequent pair is merged first; ties go to the lexicographically
    smallest concatenation. Pairs involving 'N' are never merged.
    """
    min_size = len(ALPHABET) + 1
    if vocab_size < min_size:
        raise TokenizerError(f"vocab_size must be at least {min_size}, got {vocab_size}")
    if len(corpus) == 0:
        raise TokenizerError("cannot train a tokenizer on an empty corpus")

    lut = _base_lut(ALPHABET)
    n_id = ALPHABET.index('N') + 1

    # All sequences in one array, separated by -1, so that a single pass
    # handles the whole corpus.
    chunks = []
    for s in corpus:
        try:
            validate_sequence(s)
        except ValidationError as e:
            raise TokenizerError(str(e))
        chunks.append(lut[np.frombuffer(s.encode('ascii'), dtype=np.uint8)])
        chunks.append(np.array([-1], dtype=np.int32))
    ids = np.concatenate(chunks).astype(np.int64)

    tokens = [PAD_STRING] + list(ALPHABET)
    known = set(tokens)
    merges = []
    blocked = np.zeros(vocab_size * vocab_size, dtype=bool)

    while len(tokens) < vocab_size:
        left, right = ids[:-1], ids[1:]
        valid = (left > 0) & (right > 0) & (left != n_id) & (right != n_id)
        keys = left[valid] * vocab_size + right[valid]
        counts = np.bincount(keys, minlength=vocab_size * vocab_size)
        counts[blocked] = 0

        chosen = None
        while chosen is None:
            best = int(counts.max())
            if best < 2:
                break
            candidates = []
            for key in np.flatnonzero(counts == best):
                l, r = divmod(int(key), vocab_size)
                candidates.append((tokens[l] + tokens[r], l, r))
            candidates.sort()
            for new, l, r in candidates:
                if new in known:
                    # another split of the same string exists already
                    blocked[l * vocab_size + r] = True
                    counts[l * vocab_size + r] = 0
                    continue
                chosen = (new, l, r)
                break

        if chosen is None:
            logger.info(f"no pair occurs twice anymore, stopping with {len(tokens)} tokens")
            break

        new, l, r = chosen
        new_id = len(tokens)
        merges.append((tokens[l], tokens[r]))
        tokens.append(new)
        known.add(new)
        ids = _apply_merge(ids, l, r, new_id)
        logger.debug(f"merge {len(merges)}: ({tokens[l]}, {tokens[r]}) -> {new}")

    logger.info(f"trained a tokenizer with {len(merges)} merges")
    return Tokenizer(merges)


def circular_shift(sequence: str, offset: int) -> str:
    """ Rotate `sequence` to the right by `offset` positions, i.e. move the
    last `offset mod len` characters to the front.
    """
    if offset < 0:
        raise ValueError(f"shift offsets must not be negative, got {offset}")
    k = offset % len(sequence)
    if k == 0:
        return sequence
    return sequence[-k:] + sequence[:-k]


@dataclass(frozen=True)
class TokenSeq:
    """ A token sequence padded to a fixed length; positions from `true_len`
    on hold the padding id.
    """
    ids: np.ndarray
    true_len: int


def prepare_input(tok: Tokenizer, record: DnaRecord, offset: int, max_len: int = DEFAULT_MAX_LEN) -> TokenSeq:
    """ Shift the record's sequence, tokenize it, keep at most `max_len`
    tokens and pad the result to `max_len`.
    """
    encoded = tok.encode(circular_shift(record.sequence, offset))[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[:len(encoded)] = encoded
    return TokenSeq(ids, len(encoded))


@dataclass(frozen=True)
class TokenBatch:
    """ Model input for a batch of records: padded token ids (B, max_len), the
    true token counts (B,), binary features (B, F) and lab indices (B,).
    """
    ids: np.ndarray
    lengths: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.ids.shape[0]

    def take(self, rows) -> "TokenBatch":
        rows = np.asarray(rows)
        return TokenBatch(self.ids[rows], self.lengths[rows], self.features[rows], self.labels[rows])


def prepare_batch(tok: Tokenizer, records: Sequence[DnaRecord], offsets: Sequence[int], max_len: int = DEFAULT_MAX_LEN) -> TokenBatch:
    assert len(records) == len(offsets), "every record needs a shift offset"
    assert len(records) > 0, "cannot prepare an empty batch"
    seqs = [prepare_input(tok, r, int(o), max_len) for r, o in zip(records, offsets)]
    ids = np.stack([s.ids for s in seqs])
    lengths = np.array([s.true_len for s in seqs], dtype=np.int64)
    features = np.array([r.features for r in records], dtype=np.float64).reshape(len(records), len(records[0].features))
    labels = np.array([r.lab for r in records], dtype=np.int64)
    return TokenBatch(ids, lengths, features, labels)
