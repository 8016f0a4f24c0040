"""Play-sequence corpora: loading, synthetic generation, counts and hold-out.

A corpus is a rectangular table of artist plays, one row per user.  Artist
codes found in the input are re-indexed to dense ids ``0..M-1`` by order of
first appearance (row-major), so that emission and rating matrices can be
plain dense arrays.  The original codes are kept in ``Corpus.codes``.

The CSV format is headerless: every line holds the plays of one user as
comma separated non-negative integers.  Neither a header row nor a leading
user-id column is recognised; strip them before loading.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cf import RatingMatrix
from .hmm import HmmModel

__all__ = [
    "Corpus",
    "CorpusError",
    "CorpusFormatError",
    "EmptyCorpusError",
    "FrequencyTable",
    "HoldoutSplit",
    "artist_frequencies",
    "generate_synthetic",
    "load_csv",
    "sample_sequences",
    "split_holdout",
    "to_rating_matrix",
    "write_csv",
]


class CorpusError(ValueError):
    """Base class for corpus input problems."""


class CorpusFormatError(CorpusError):
    """Ragged rows or unparsable fields in a corpus file."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class EmptyCorpusError(CorpusError):
    """The input holds no rows."""


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Corpus:
    """Per-user play sequences over a dense artist vocabulary.

    Attributes
    ----------
    sequences : ndarray of shape (U, T)
        Dense artist ids, read-only.
    vocab_size : int
        Number of representable artists ``M``; every id is ``< M``.
    codes : ndarray of shape (M,)
        External artist code of each dense id.
    """

    sequences: np.ndarray
    vocab_size: int
    codes: np.ndarray = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seqs = np.asarray(self.sequences)
        if seqs.ndim != 2:
            raise CorpusError("sequences must form a rectangular 2-d table")
        if seqs.shape[0] < 1 or seqs.shape[1] < 1:
            raise CorpusError(f"corpus needs at least one user and one play, got shape {seqs.shape}")
        if self.vocab_size < 1:
            raise CorpusError("vocab_size must be >= 1")
        seqs = _frozen(seqs, np.int64)
        if seqs.min() < 0 or seqs.max() >= self.vocab_size:
            raise CorpusError(f"artist ids must lie in [0, {self.vocab_size})")
        codes = np.arange(self.vocab_size) if self.codes is None else self.codes
        codes = _frozen(codes, np.int64)
        if codes.shape != (self.vocab_size,):
            raise CorpusError("codes must hold one external code per artist id")
        index = {int(c): i for i, c in enumerate(codes)}
        if len(index) != self.vocab_size:
            raise CorpusError("external artist codes must be unique")
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "_index", index)

    @property
    def n_users(self):
        return self.sequences.shape[0]

    @property
    def seq_len(self):
        return self.sequences.shape[1]

    def to_external(self, ids):
        """Map dense ids back to the codes found in the input file."""
        return self.codes[np.asarray(ids, dtype=np.int64)]

    def to_internal(self, codes, missing=None):
        """Map external codes to dense ids.

        Unknown codes raise ``KeyError`` unless ``missing`` is given, in which
        case they map to that value.
        """
        if missing is None:
            return np.array([self._index[int(c)] for c in codes], dtype=np.int64)
        return np.array([self._index.get(int(c), missing) for c in codes], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and np.array_equal(self.sequences, other.sequences)
            and np.array_equal(self.codes, other.codes)
        )

    __hash__ = None


@dataclass(frozen=True)
class FrequencyTable:
    """Occurrence counts of every artist over a whole corpus."""

    counts: np.ndarray
    total: int

    def order(self):
        """Artist ids by descending count, ties by ascending id."""
        return np.lexsort((np.arange(len(self.counts)), -self.counts))


@dataclass(frozen=True)
class HoldoutSplit:
    prefixes: Corpus
    targets: np.ndarray


def load_csv(path):
    """Read a headerless integer CSV into a :class:`Corpus`.

    Raises
    ------
    EmptyCorpusError
        The file holds no non-blank rows.
    CorpusFormatError
        A field is not a non-negative integer, rows differ in length, or
        there are fewer than two columns.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
            if width < 2:
                raise CorpusFormatError(f"need at least 2 columns, found {width}", line=lineno)
        elif len(fields) != width:
            raise CorpusFormatError(
                f"expected {width} fields, found {len(fields)}", line=lineno
            )
        row = []
        for col, raw in enumerate(fields, start=1):
            raw = raw.strip()
            if not raw.isdigit():
                raise CorpusFormatError(f"not a non-negative integer: {raw!r}", line=lineno, column=col)
            row.append(int(raw))
        rows.append(row)
    if not rows:
        raise EmptyCorpusError(f"{path}: no rows")
    return _from_codes(np.array(rows, dtype=np.int64))


def _from_codes(raw):
    # np.unique sorts; recover first-appearance order from the first indices
    uniq, first, inverse = np.unique(raw.ravel(), return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    dense = rank[inverse].reshape(raw.shape)
    return Corpus(dense, vocab_size=len(uniq), codes=uniq[order])


def write_csv(corpus, path):
    """Write ``corpus`` in external codes; inverse of :func:`load_csv`."""
    ext = corpus.to_external(corpus.sequences)
    lines = [",".join(str(int(v)) for v in row) for row in ext]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sample_sequences(model, n_users, seq_len, rng):
    """Draw ``n_users`` independent sequences of length ``seq_len`` from ``model``."""
    def draw(cdf, u):
        # cdf rows are cumulative; count how many thresholds u passes
        idx = (u[:, None] >= cdf).sum(axis=1)
        return np.minimum(idx, cdf.shape[-1] - 1)

    pi_cdf = np.cumsum(model.pi)
    trans_cdf = np.cumsum(model.trans, axis=1)
    emit_cdf = np.cumsum(model.emit, axis=1)
    out = np.empty((n_users, seq_len), dtype=np.int64)
    state = draw(np.broadcast_to(pi_cdf, (n_users, model.n_states)), rng.random(n_users))
    for t in range(seq_len):
        if t > 0:
            state = draw(trans_cdf[state], rng.random(n_users))
        out[:, t] = draw(emit_cdf[state], rng.random(n_users))
    return out


def generate_synthetic(n_users, seq_len, n_artists, n_states, seed):
    """Sample a corpus from a randomly drawn ("planted") HMM.

    Returns ``(corpus, model)``.  The output is a pure function of the
    arguments.  Artist codes equal dense ids, and ``vocab_size`` is
    ``n_artists`` even when some artists are never drawn.
    """
    for name, value in [("n_users", n_users), ("seq_len", seq_len),
                        ("n_artists", n_artists), ("n_states", n_states)]:
        if int(value) < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    if n_states > n_artists:
        warnings.warn(
            f"n_states={n_states} exceeds n_artists={n_artists}; states will be hard to identify",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    model = HmmModel.random(n_states, n_artists, rng)
    seqs = sample_sequences(model, n_users, seq_len, rng)
    return Corpus(seqs, vocab_size=n_artists), model


def artist_frequencies(corpus):
    counts = np.bincount(corpus.sequences.ravel(), minlength=corpus.vocab_size)
    counts.setflags(write=False)
    return FrequencyTable(counts=counts, total=int(counts.sum()))


def split_holdout(corpus):
    """Hold out the last play of every sequence as the prediction target."""
    if corpus.seq_len < 2:
        raise ValueError(f"hold-out needs sequences of length >= 2, got {corpus.seq_len}")
    prefixes = Corpus(corpus.sequences[:, :-1], corpus.vocab_size, corpus.codes)
    return HoldoutSplit(prefixes=prefixes, targets=_frozen(corpus.sequences[:, -1], np.int64))


def to_rating_matrix(corpus):
    """User x artist play-count matrix of ``corpus``."""
    U, M = corpus.n_users, corpus.vocab_size
    flat = (np.arange(U)[:, None] * M + corpus.sequences).ravel()
    values = np.bincount(flat, minlength=U * M).reshape(U, M).astype(np.float64)
    return RatingMatrix(values)
