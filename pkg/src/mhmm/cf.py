"""Neighbourhood collaborative filtering on user x artist play counts.

All similarities are cosine similarities; a zero vector is similar to
nothing (similarity 0).  Neighbourhoods never contain the query entity
itself, and similarity ties are broken by ascending index.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ItemKNN",
    "Neighborhood",
    "RatingMatrix",
    "ScoreVector",
    "SimilarityCacheError",
    "UserKNN",
    "cosine_similarity",
    "item_cf_scores",
    "load_similarity_cache",
    "pseudo_scores",
    "pseudo_scores_binary",
    "save_similarity_cache",
    "similarity_matrix",
    "user_cf_scores",
    "user_neighborhood",
]

DEFAULT_K = 30
# rows per block when ranking neighbours; bounds the temporary memory
_BLOCK = 512


class SimilarityCacheError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Play counts ``values[u, a]`` and plain per-user means over all M columns."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("rating matrix must be 2-d")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("ratings must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def row_means(self):
        return self.values.sum(axis=1) / self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def binarized(self):
        return RatingMatrix((self.values > 0).astype(np.float64))

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.asarray(self.values.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Neighborhood:
    ids: np.ndarray
    sims: np.ndarray


@dataclass(frozen=True)
class ScoreVector:
    """Predicted preference per artist; unscorable entries hold ``-inf``."""

    scores: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_parts(cls, scores, mask):
        scores = np.where(mask, scores, -np.inf)
        return cls(scores=scores, mask=np.asarray(mask, dtype=bool))


def cosine_similarity(a, b):
    """Cosine of the angle between two count vectors; 0 if either is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(min(1.0, max(0.0, np.dot(a, b) / denom)))


def similarity_matrix(rows):
    """Pairwise cosine similarity between the rows of ``rows``."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    denom = np.outer(norms, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(denom > 0, (rows @ rows.T) / denom, 0.0)
    return np.clip(sims, 0.0, 1.0)


def _rank_neighbors(sims, k):
    """Indices of the ``k`` most similar other entities for every row."""
    n = sims.shape[0]
    k = min(k, n - 1)
    idx = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _BLOCK):
        block = -sims[start:start + _BLOCK]
        rows = np.arange(block.shape[0])
        block[rows, start + rows] = np.inf
        idx[start:start + _BLOCK] = np.argsort(block, axis=1, kind="stable")[:, :k]
    return idx


def _check_k(k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


def _check_user(matrix, u):
    if not 0 <= u < matrix.shape[0]:
        raise IndexError(f"user index {u} out of range for {matrix.shape[0]} users")


class UserKNN:
    """User-based CF with user-user similarities computed once."""

    def __init__(self, matrix, k=DEFAULT_K):
        _check_k(k)
        self.matrix = matrix
        self.k = k
        self.sims = similarity_matrix(matrix.values)
        self.neighbors = _rank_neighbors(self.sims, k)
        self._means = matrix.row_means

    def neighborhood(self, u):
        _check_user(self.matrix, u)
        ids = self.neighbors[u]
        return Neighborhood(ids=ids, sims=self.sims[u, ids])

    def scores(self, u):
        """Mean-centred weighted average of the neighbours' deviations."""
        nb = self.neighborhood(u)
        denom = np.abs(nb.sims).sum()
        M = self.matrix.shape[1]
        if denom == 0:
            return ScoreVector.from_parts(np.zeros(M), np.zeros(M, dtype=bool))
        dev = self.matrix.values[nb.ids] - self._means[nb.ids, None]
        pred = self._means[u] + (nb.sims @ dev) / denom
        return ScoreVector.from_parts(pred, np.ones(M, dtype=bool))


class ItemKNN:
    """Item-based CF with the item-item similarity table precomputed.

    ``scores`` predicts ``P[u, i] = sum_j s(i, j) r[u, j] / sum_j |s(i, j)|``
    over the ``k`` items most similar to ``i``.  ``pseudo_scores`` sums the
    similarities of the ``k`` consumed items most similar to ``i``.
    """

    def __init__(self, matrix, k=DEFAULT_K, sims=None):
        _check_k(k)
        self.matrix = matrix
        self.k = k
        self.sims = similarity_matrix(matrix.values.T) if sims is None else np.asarray(sims)
        M = matrix.shape[1]
        if self.sims.shape != (M, M):
            raise ValueError(f"similarity table must be {M}x{M}, got {self.sims.shape}")
        self.neighbors = _rank_neighbors(self.sims, k)
        self._nbr_sims = np.take_along_axis(self.sims, self.neighbors, axis=1)
        self._denom = np.abs(self._nbr_sims).sum(axis=1)

    def neighborhood(self, i):
        ids = self.neighbors[i]
        return Neighborhood(ids=ids, sims=self.sims[i, ids])

    def scores(self, u):
        _check_user(self.matrix, u)
        r = self.matrix.values[u]
        num = (self._nbr_sims * r[self.neighbors]).sum(axis=1)
        mask = self._denom > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            pred = num / self._denom
        return ScoreVector.from_parts(pred, mask)

    def pseudo_scores(self, u):
        _check_user(self.matrix, u)
        consumed = np.flatnonzero(self.matrix.values[u] > 0)
        M = self.matrix.shape[1]
        if consumed.size == 0:
            return ScoreVector.from_parts(np.zeros(M), np.ones(M, dtype=bool))
        sub = self.sims[:, consumed].copy()
        sub[consumed, np.arange(consumed.size)] = -np.inf
        k = min(self.k, consumed.size)
        top = -np.sort(-sub, axis=1)[:, :k]
        top[np.isneginf(top)] = 0.0
        return ScoreVector.from_parts(top.sum(axis=1), np.ones(M, dtype=bool))


def user_neighborhood(matrix, u, k=DEFAULT_K):
    """The ``k`` users most cosine-similar to user ``u``."""
    return UserKNN(matrix, k).neighborhood(u)


def user_cf_scores(matrix, u, k=DEFAULT_K):
    return UserKNN(matrix, k).scores(u)


def item_cf_scores(matrix, u, k=DEFAULT_K):
    return ItemKNN(matrix, k).scores(u)


def pseudo_scores(matrix, u, k=DEFAULT_K, binary=False):
    """Implicit-feedback scores: summed similarity to the user's consumed items."""
    if binary:
        matrix = matrix.binarized()
    return ItemKNN(matrix, k).pseudo_scores(u)


def pseudo_scores_binary(matrix, u, k=DEFAULT_K):
    return pseudo_scores(matrix, u, k, binary=True)


def save_similarity_cache(path, sims, content_hash):
    """Store an item-similarity table keyed by the hash of its source matrix."""
    with open(path, "wb") as fh:
        np.savez(fh, sims=np.asarray(sims, dtype=np.float64),
                 content_hash=np.array(content_hash))


def load_similarity_cache(path, content_hash):
    """Load a cached table; ``None`` if missing or built from other data."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as data:
            if str(data["content_hash"]) != content_hash:
                return None
            return data["sims"]
    except (OSError, KeyError, ValueError) as exc:
        raise SimilarityCacheError(f"{path}: unreadable similarity cache ({exc})") from None
