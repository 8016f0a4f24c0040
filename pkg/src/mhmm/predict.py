"""Top-n artist rankings from frequency baselines, CF, the HMM and their mixture.

Every ranker orders candidates by ``(score desc, corpus frequency desc, id
asc)``, so exact score ties go to the globally more popular artist.  Rankers
that can run out of scorable candidates are backfilled from the global
popularity order so that a ranking always holds ``n`` distinct artists when
the vocabulary allows it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import hmm as _hmm
from .cf import DEFAULT_K, ItemKNN, ScoreVector, UserKNN
from .corpus import artist_frequencies, to_rating_matrix

_log = logging.getLogger(__name__)

MODELS = ("hf-corpus", "hf-current", "cf-user", "cf-item", "hmm", "mhmm")
CF_VARIANTS = ("user", "item", "pseudo", "binary-pseudo")


class MixtureConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Ranking:
    items: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if items.shape != scores.shape or items.ndim != 1:
            raise ValueError("items and scores must be matching 1-d arrays")
        if np.unique(items).size != items.size:
            raise ValueError("ranking contains duplicate artists")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return self.items.size

    def __eq__(self, other):
        if not isinstance(other, Ranking):
            return NotImplemented
        return np.array_equal(self.items, other.items)

    __hash__ = None


@dataclass(frozen=True)
class MixtureConfig:
    """``n`` candidates: ``n1`` from the HMM, then ``n2`` from CF."""

    n: int = 10
    n1: int = 7
    n2: int = 3

    def __post_init__(self):
        if self.n1 < 0 or self.n2 < 0:
            raise MixtureConfigError("n1 and n2 must be >= 0")
        if self.n1 + self.n2 != self.n:
            raise MixtureConfigError(f"n1 + n2 = {self.n1 + self.n2} but n = {self.n}")


def _counts(freqs):
    return np.asarray(getattr(freqs, "counts", freqs), dtype=np.float64)


def top_n(scores, n, freqs, blend=0.0):
    """The ``n`` best-scoring artists.

    ``scores`` is a :class:`ScoreVector` or a plain vector (non-finite
    entries count as unscorable).  ``blend > 0`` is experimental: it adds
    ``blend * frequency / total`` to every score instead of using frequency
    only to break ties.  Returns fewer than ``n`` items when fewer are
    scorable.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(scores, ScoreVector):
        values, mask = scores.scores, scores.mask
    else:
        values = np.asarray(scores, dtype=np.float64)
        mask = np.isfinite(values)
    counts = _counts(freqs)
    primary = values
    if blend:
        primary = values + blend * counts / max(counts.sum(), 1.0)
    cand = np.flatnonzero(mask)
    order = np.lexsort((cand, -counts[cand], -primary[cand]))[:n]
    chosen = cand[order]
    return Ranking(chosen, values[chosen])


def _extend(items, scores, n, source_items, source_scores):
    seen = set(items)
    for item, score in zip(source_items, source_scores):
        if len(items) >= n:
            break
        item = int(item)
        if item not in seen:
            seen.add(item)
            items.append(item)
            scores.append(float(score))


def backfill(ranking, n, freqs):
    """Pad ``ranking`` to ``n`` items from the corpus popularity order."""
    if len(ranking) >= n:
        return ranking
    items, scores = ranking.items.tolist(), ranking.scores.tolist()
    pop = hf_corpus(freqs, n + len(ranking))
    _extend(items, scores, n, pop.items, np.full(len(pop), -np.inf))
    return Ranking(items, scores)


def hf_corpus(freqs, n):
    counts = _counts(freqs)
    order = np.lexsort((np.arange(counts.size), -counts))[:n]
    return Ranking(order, counts[order])


def hf_current(user_seq, n, freqs):
    """Most played artists within this user's own sequence."""
    seq = np.asarray(user_seq, dtype=np.int64)
    if seq.size == 0:
        raise ValueError("user sequence is empty")
    local = np.bincount(seq, minlength=_counts(freqs).size).astype(np.float64)
    ranking = top_n(ScoreVector(local, local > 0), n, freqs)
    return backfill(ranking, n, freqs)


def cf_predict(scores, n, freqs):
    return backfill(top_n(scores, n, freqs), n, freqs)


def hmm_predict(model, user_seq, n, freqs):
    return top_n(_hmm.next_symbol_distribution(model, user_seq), n, freqs)


def mhmm_predict(hmm_rank, cf_rank, config, freqs):
    """Concatenate the HMM and CF rankings.

    The first ``n1`` HMM items come first, then the first ``n2`` CF items
    that the HMM block did not already contain.  Slots lost to duplicates
    are filled from the rest of the HMM ranking, then the rest of the CF
    ranking, then corpus popularity.
    """
    items, scores = [], []
    _extend(items, scores, config.n1, hmm_rank.items[:config.n1], hmm_rank.scores[:config.n1])
    head = len(items)
    _extend(items, scores, head + config.n2, cf_rank.items[:config.n2], cf_rank.scores[:config.n2])
    _extend(items, scores, config.n, hmm_rank.items[config.n1:], hmm_rank.scores[config.n1:])
    _extend(items, scores, config.n, cf_rank.items[config.n2:], cf_rank.scores[config.n2:])
    return backfill(Ranking(items, scores), config.n, freqs)


@dataclass(frozen=True)
class PredictConfig:
    """Hyperparameters shared by ``predict`` and ``bench``."""

    n: int = 10
    n1: int = 7
    n2: int = 3
    k_user: int = DEFAULT_K
    k_item: int = DEFAULT_K
    cf_variant: str = "pseudo"
    n_states: int = _hmm.DEFAULT_STATES
    max_iters: int = _hmm.DEFAULT_MAX_ITERS
    tol: float = _hmm.DEFAULT_TOL
    smoothing: float = _hmm.DEFAULT_SMOOTHING
    seed: int = 0
    blend: float = 0.0

    def __post_init__(self):
        MixtureConfig(self.n, self.n1, self.n2)
        for name in ("n", "k_user", "k_item", "n_states", "max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {self.smoothing}")
        if self.cf_variant not in CF_VARIANTS:
            raise ValueError(f"cf_variant must be one of {CF_VARIANTS}")

    @property
    def mixture(self):
        return MixtureConfig(self.n, self.n1, self.n2)

    def to_dict(self):
        return asdict(self)


def train_hmm(corpus, config, threads=1):
    init = _hmm.init_random(config.n_states, corpus.vocab_size, config.seed)
    return _hmm.baum_welch(init, corpus.sequences, config.max_iters, config.tol,
                           config.smoothing, threads=threads)


class Predictor:
    """Ranks the next artist for every user of a training corpus.

    Models are fitted lazily and shared between rankers, so the HMM used by
    ``mhmm`` is the one used by ``hmm``.
    """

    def __init__(self, corpus, config=PredictConfig(), threads=1, hmm_model=None,
                 item_sims=None):
        self.corpus = corpus
        self.config = config
        self.threads = threads
        self.freqs = artist_frequencies(corpus)
        self.hmm_model = hmm_model
        self.train_report = None
        self._item_sims = item_sims
        self._matrix = None
        self._fitted = {}

    @property
    def matrix(self):
        if self._matrix is None:
            self._matrix = to_rating_matrix(self.corpus)
        return self._matrix

    def _fit(self, key, build):
        if key not in self._fitted:
            self._fitted[key] = build()
        return self._fitted[key]

    def user_knn(self):
        return self._fit("user", lambda: UserKNN(self.matrix, self.config.k_user))

    def item_knn(self):
        return self._fit("item", lambda: ItemKNN(self.matrix, self.config.k_item, self._item_sims))

    def binary_item_knn(self):
        return self._fit("binary", lambda: ItemKNN(self.matrix.binarized(), self.config.k_item))

    def hmm(self):
        if self.hmm_model is None:
            self.hmm_model, self.train_report = train_hmm(self.corpus, self.config, self.threads)
        if self.hmm_model.vocab_size != self.corpus.vocab_size:
            raise ValueError(
                f"model has {self.hmm_model.vocab_size} symbols, corpus has {self.corpus.vocab_size}"
            )
        return self.hmm_model

    def _per_user(self, fn):
        users = range(self.corpus.n_users)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(fn, users))
        return [fn(u) for u in users]

    def _cf_scores(self, variant):
        if variant == "user":
            return self.user_knn().scores
        if variant == "item":
            return self.item_knn().scores
        if variant == "pseudo":
            return self.item_knn().pseudo_scores
        return self.binary_item_knn().pseudo_scores

    def cf_rankings(self, variant):
        score = self._cf_scores(variant)
        n, freqs = self.config.n, self.freqs
        return self._per_user(lambda u: cf_predict(score(u), n, freqs))

    def hmm_rankings(self):
        dists = _hmm.next_symbol_distributions(self.hmm(), self.corpus.sequences)
        n, freqs, blend = self.config.n, self.freqs, self.config.blend
        return self._per_user(lambda u: top_n(dists[u], n, freqs, blend))

    def rankings(self, name):
        """Rankings of ``n`` artists per user for model ``name``."""
        n, freqs = self.config.n, self.freqs
        if name == "hf-corpus":
            shared = hf_corpus(freqs, n)
            return [shared] * self.corpus.n_users
        if name == "hf-current":
            seqs = self.corpus.sequences
            return self._per_user(lambda u: hf_current(seqs[u], n, freqs))
        if name == "cf-user":
            return self.cf_rankings("user")
        if name == "cf-item":
            return self.cf_rankings("item")
        if name == "hmm":
            return self.hmm_rankings()
        if name == "mhmm":
            mix = self.config.mixture
            hmm_ranks = self.hmm_rankings()
            cf_ranks = self.cf_rankings(self.config.cf_variant)
            return [mhmm_predict(h, c, mix, freqs) for h, c in zip(hmm_ranks, cf_ranks)]
        raise ValueError(f"unknown model {name!r}; expected one of {MODELS}")


def write_predictions(path, rankings, corpus):
    """One row per user: row index, then the ranked artists' external codes."""
    lines = []
    for u, ranking in enumerate(rankings):
        codes = corpus.to_external(ranking.items)
        lines.append(",".join([str(u)] + [str(int(c)) for c in codes]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path):
    """Inverse of :func:`write_predictions`: list of code lists by row index."""
    rows = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            fields = [int(f) for f in line.split(",")]
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-integer field") from None
        rows[fields[0]] = fields[1:]
    return [rows[u] for u in sorted(rows)]
