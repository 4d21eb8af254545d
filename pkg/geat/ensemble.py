""" Combining the rankings of several models by voting.

Every model ("voter") contributes a complete ranking of the same labs. The
Borda rule orders labs by their mean position; the Copeland rule orders them
by the number of pairwise majority wins minus losses.
"""

from typing import Sequence

import numpy as np

from .errors import DataError
from .rank import Ranking

import logging
logger = logging.getLogger(__name__)

BORDA = 'borda'
COPELAND = 'copeland'
RULES = (BORDA, COPELAND)


class RankingProfile:
    """ The rankings of all voters; they need to cover the same labs.
    """

    def __init__(self, rankings: Sequence[Ranking]):
        self.rankings = list(rankings)
        if len(self.rankings) == 0:
            raise DataError("a ranking profile needs at least one ranking")
        num_labs = {len(r) for r in self.rankings}
        if len(num_labs) != 1:
            raise DataError(f"the rankings of a profile cover different lab sets (sizes {sorted(num_labs)})")

    @property
    def num_labs(self) -> int:
        return len(self.rankings[0])

    @property
    def num_voters(self) -> int:
        return len(self.rankings)

    def position_matrix(self) -> np.ndarray:
        """ 1-based positions (V, L) of every lab in every ranking.
        """
        return np.stack([r.positions() + 1 for r in self.rankings])

    def margin_matrix(self) -> np.ndarray:
        """ M[a, b] = (number of voters preferring a over b) - (number
        preferring b over a).
        """
        pos = self.position_matrix()
        above = np.sum(pos[:, :, None] < pos[:, None, :], axis=0)
        return above - above.T


def borda_means(p: RankingProfile) -> np.ndarray:
    return p.position_matrix().mean(axis=0)


def copeland_scores(p: RankingProfile) -> np.ndarray:
    """ Pairwise wins minus pairwise losses of every lab.
    """
    margins = p.margin_matrix()
    return np.sum(margins > 0, axis=1) - np.sum(margins < 0, axis=1)


def borda_aggregate(p: RankingProfile) -> Ranking:
    """ Ascending mean position, reported as the negated mean position.
    """
    return Ranking.from_scores(-borda_means(p), f"ensemble-{BORDA}")


def copeland_aggregate(p: RankingProfile) -> Ranking:
    """ Descending Copeland score, ties broken by mean position and then by
    lab index.

    The reported score is the Copeland score minus mean position / (L + 1).
    Mean positions lie in [1, L], so the subtracted part stays below 1 and
    only decides between labs with equal Copeland score.
    """
    scores = copeland_scores(p).astype(np.float64) - borda_means(p) / (p.num_labs + 1)
    return Ranking.from_scores(scores, f"ensemble-{COPELAND}")


def aggregate(p: RankingProfile, rule: str) -> Ranking:
    if rule == BORDA:
        return borda_aggregate(p)
    if rule == COPELAND:
        return copeland_aggregate(p)
    raise ValueError(f"unknown voting rule '{rule}', expected one of {', '.join(RULES)}")
