""" K-means clustering of embeddings, selection of the number of clusters
with the elbow method, and a 2D projection for plotting.

Clustering works on plain point sets; callers pass unit-normalized lab (or
sequence) embeddings, where Euclidean distance is monotone in the cosine
distance.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .configurable import ConfigMeta
from .errors import ConfigError, DataError
from .utils import derive_rng, split_seed, STREAM_KMEANS

import logging
logger = logging.getLogger(__name__)

# tolerance for ties between elbow candidates
ELBOW_TIE_EPS = 1e-9

CLUSTER_TARGETS = ('labs', 'sequences')


class ClusterConfig(metaclass=ConfigMeta):
    config_options = dict(
        k_min = (1,
            'smallest number of clusters that the elbow method considers'),
        k_max = (8,
            'largest number of clusters that the elbow method considers'),
        restarts = (5,
            'number of differently seeded k-means runs per k; the run with '
            'the smallest wcss is kept'),
        max_iters = (200,
            'maximal number of Lloyd iterations per k-means run'),
        seed = (0,
            'seed for the k-means++ initializations'),
        target = ('labs',
            "what to cluster: 'labs' (the lab table of a triplet model) or "
            "'sequences' (embeddings of the records of a dataset)"),
    )

    def __init__(self, config=None):
        self.configure(config)
        if not (isinstance(self.k_min, int) and isinstance(self.k_max, int) and 1 <= self.k_min <= self.k_max):
            raise ConfigError(f"invalid k range [{self.k_min}, {self.k_max}]")
        if not isinstance(self.restarts, int) or self.restarts < 1:
            raise ConfigError(f"restarts must be a positive integer, got {self.restarts}")
        if not isinstance(self.max_iters, int) or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.target not in CLUSTER_TARGETS:
            raise ConfigError(f"unknown cluster target '{self.target}', expected one of {', '.join(CLUSTER_TARGETS)}")


@dataclass
class ClusterResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    wcss: float
    # wcss after every iteration
    history: List[float] = field(default_factory=list)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


@dataclass
class ElbowResult:
    k: int
    ks: List[int]
    wcss: List[float]
    runs: Dict[int, ClusterResult]

    @property
    def best(self) -> ClusterResult:
        return self.runs[self.k]


def _sq_distances(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def _wcss(points, centroids, assignments):
    diff = points - centroids[assignments]
    return float(np.sum(diff * diff))


def _kmeanspp(points, k, rng):
    n = points.shape[0]
    chosen = [int(rng.integers(0, n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with chosen centroids
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(0, len(free))])
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _repair_empty(points, centroids, assignments, k):
    """ Give every empty cluster the point that lies farthest from its
    centroid, taken from a cluster with more than one point.
    """
    sizes = np.bincount(assignments, minlength=k)
    for c in np.flatnonzero(sizes == 0):
        dist = np.sum((points - centroids[assignments]) ** 2, axis=1)
        donors = sizes[assignments] > 1
        dist[~donors] = -1.0
        idx = int(np.argmax(dist))
        sizes[assignments[idx]] -= 1
        sizes[c] += 1
        assignments[idx] = c
        centroids[c] = points[idx]
    return centroids, assignments


def _update(points, assignments, k):
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, assignments, points)
    counts = np.bincount(assignments, minlength=k)
    return sums / counts[:, None]


def _check_points(points, k):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise DataError(f"expected a non-empty 2D point set, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DataError("points must be finite")
    if k < 1 or k > points.shape[0]:
        raise DataError(f"cannot form {k} clusters from {points.shape[0]} points")
    return points


def kmeans(points, k: int, seed: int, max_iters: int = 200, init: Optional[np.ndarray] = None) -> ClusterResult:
    """ Lloyd's algorithm with k-means++ initialization, or starting from the
    given `init` centroids (k, D). Iterates until the assignments no longer
    change or `max_iters` is reached.
    """
    points = _check_points(points, k)
    if init is None:
        centroids = _kmeanspp(points, k, derive_rng(seed, STREAM_KMEANS))
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, points.shape[1]):
            raise DataError(f"initial centroids of shape {centroids.shape} do not fit k={k} and {points.shape[1]} dimensions")
    assignments = np.argmin(_sq_distances(points, centroids), axis=1)
    centroids, assignments = _repair_empty(points, centroids, assignments, k)
    history = [_wcss(points, centroids, assignments)]

    for it in range(max_iters):
        centroids = _update(points, assignments, k)
        new_assignments = np.argmin(_sq_distances(points, centroids), axis=1)
        centroids, new_assignments = _repair_empty(points, centroids, new_assignments, k)
        history.append(_wcss(points, centroids, new_assignments))
        logger.debug(f"k-means (k={k}) iteration {it}: wcss {history[-1]:.6f}")
        converged = np.array_equal(new_assignments, assignments)
        assignments = new_assignments
        if converged:
            break

    return ClusterResult(k, assignments, centroids, history[-1], history)


def best_of_restarts(points, k: int, seed: int, restarts: int = 5, max_iters: int = 200) -> ClusterResult:
    best = None
    for r in range(restarts):
        res = kmeans(points, k, split_seed(seed, k, r), max_iters)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


def chord_elbow(ks: Sequence[int], wcss: Sequence[float]) -> int:
    """ The k whose point on the normalized wcss curve lies farthest from the
    straight line between the first and the last point. Ties go to the
    smaller k.
    """
    ks = np.asarray(ks, dtype=np.float64)
    w = np.asarray(wcss, dtype=np.float64)
    if len(ks) == 0 or len(ks) != len(w):
        raise DataError("the elbow method needs one wcss value per k")
    if len(ks) <= 2 or ks[-1] == ks[0] or w.max() == w.min():
        return int(ks[0])
    x = (ks - ks[0]) / (ks[-1] - ks[0])
    y = (w - w.min()) / (w.max() - w.min())
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    dist = np.abs(dx * (y - y[0]) - dy * (x - x[0])) / np.hypot(dx, dy)
    best = int(np.flatnonzero(dist >= dist.max() - ELBOW_TIE_EPS)[0])
    return int(ks[best])


def _split_init(points, res: ClusterResult) -> np.ndarray:
    dist = np.sum((points - res.centroids[res.assignments]) ** 2, axis=1)
    return np.concatenate([res.centroids, points[int(np.argmax(dist))][None, :]], axis=0)


def elbow_k(points, k_range: Tuple[int, int], seed: int, restarts: int = 5, max_iters: int = 200) -> ElbowResult:
    k_min, k_max = k_range
    points = np.asarray(points, dtype=np.float64)
    if k_min < 1 or k_max < k_min:
        raise ConfigError(f"invalid k range [{k_min}, {k_max}]")
    if k_max > points.shape[0]:
        raise DataError(f"k_max={k_max} exceeds the number of points ({points.shape[0]})")
    ks = list(range(k_min, k_max + 1))
    runs = dict()
    prev = None
    for k in ks:
        best = best_of_restarts(points, k, seed, restarts, max_iters)
        if prev is not None:
            # from the previous solution plus a centroid at its worst fitted
            # point; this run cannot end above the wcss for k - 1
            split = kmeans(points, k, seed, max_iters, init=_split_init(points, prev))
            if split.wcss < best.wcss:
                best = split
        runs[k] = best
        prev = best
    curve = [runs[k].wcss for k in ks]
    chosen = chord_elbow(ks, curve)
    logger.info(f"elbow method chose k={chosen} (wcss curve: {', '.join(f'{c:.4f}' for c in curve)})")
    return ElbowResult(chosen, ks, curve, runs)


def pca_2d(points) -> np.ndarray:
    """ Projection onto the first two principal components (N, 2). The sign
    of each component is fixed such that its largest loading is positive.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise DataError(f"expected a non-empty 2D point set, got shape {points.shape}")
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    signs = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    signs[signs == 0] = 1.0
    proj = centered @ (comps * signs[:, None]).T
    if proj.shape[1] < 2:
        proj = np.concatenate([proj, np.zeros((proj.shape[0], 2 - proj.shape[1]))], axis=1)
    return proj


def write_embeddings(path, names: Sequence[str], embeddings: np.ndarray, name_column: str = 'lab_name'):
    df = pd.DataFrame(embeddings, columns=[f"e{i}" for i in range(embeddings.shape[1])])
    df.insert(0, name_column, list(names))
    df.to_csv(path, index=False, float_format='%.9g')


def write_clusters(path, names: Sequence[str], assignments: np.ndarray, name_column: str = 'lab_name'):
    pd.DataFrame({name_column: list(names), 'cluster': assignments}).to_csv(path, index=False)


def write_wcss(path, ks: Sequence[int], wcss: Sequence[float]):
    pd.DataFrame({'k': list(ks), 'wcss': list(wcss)}).to_csv(path, index=False, float_format='%.9g')


def write_projection(path, names: Sequence[str], xy: np.ndarray, name_column: str = 'lab_name'):
    pd.DataFrame({name_column: list(names), 'x': xy[:, 0], 'y': xy[:, 1]}).to_csv(path, index=False, float_format='%.9g')
