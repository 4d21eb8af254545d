""" Hard negative mining for triplet training.

For every anchor (a sequence embedding), the hardest negative is the known
lab, other than the anchor's own lab, whose embedding currently has the
highest cosine similarity with the anchor. The last row of the lab table (the
"unseen" lab) never takes part in mining.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import normalize_rows


@dataclass(frozen=True)
class MiningBatch:
    """ lab_indices (B,): the positive lab of every anchor; anchor_embeddings
    (B, E): unit-norm sequence embeddings; lab_table (L+1, E): lab embeddings
    with the unseen lab in the last row.
    """
    lab_indices: np.ndarray
    anchor_embeddings: np.ndarray
    lab_table: np.ndarray

    @property
    def num_labs(self) -> int:
        return self.lab_table.shape[0] - 1

    def validate(self):
        b, e = self.anchor_embeddings.shape
        if self.lab_table.ndim != 2 or self.lab_table.shape[1] != e:
            raise ShapeError(f"lab table of shape {self.lab_table.shape} does not fit anchors of shape {self.anchor_embeddings.shape}")
        if self.lab_indices.shape != (b,):
            raise ShapeError(f"{self.lab_indices.shape} lab indices for {b} anchors")
        if self.num_labs < 2:
            raise ShapeError(f"mining needs at least 2 known labs, got {self.num_labs}")
        if b > 0 and (self.lab_indices.min() < 0 or self.lab_indices.max() >= self.num_labs):
            raise ShapeError(f"positive lab indices must be in [0, {self.num_labs})")


def hard_negatives(batch: MiningBatch):
    """ Returns the hardest negative lab per anchor (B,) and its normalized
    embedding (B, E). Among equally similar labs, the lowest index wins.
    """
    batch.validate()
    labs = normalize_rows(batch.lab_table[:-1])
    sims = batch.anchor_embeddings @ labs.T
    rows = np.arange(sims.shape[0])
    sims[rows, batch.lab_indices] = -np.inf
    negatives = np.argmax(sims, axis=1)
    return negatives, labs[negatives]


def brute_force_hardest(batch: MiningBatch):
    """ Straightforward per-anchor loop with the semantics of
    `hard_negatives`, used to check it.
    """
    batch.validate()
    labs = normalize_rows(batch.lab_table[:-1])
    negatives = []
    for anchor, positive in zip(batch.anchor_embeddings, batch.lab_indices):
        best, best_sim = None, None
        for lab in range(labs.shape[0]):
            if lab == positive:
                continue
            sim = float(np.dot(anchor, labs[lab]))
            if best is None or sim > best_sim:
                best, best_sim = lab, sim
        negatives.append(best)
    negatives = np.array(negatives, dtype=np.int64)
    return negatives, labs[negatives]
