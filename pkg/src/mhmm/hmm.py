"""Discrete hidden Markov models.

Forward and backward passes use per-step rescaling.  With ``c_t`` the sum of
the forward variables at step ``t`` *before* normalisation, the scaled
forward rows sum to one and ``log P(O | model) = sum_t log c_t``.  The scaled
backward variables are divided by the same ``c_{t+1}``, so that
``alpha_hat[t] * beta_hat[t]`` is the state posterior at ``t`` and sums to
one for every ``t``.

Training pools expected counts over all sequences (one global model for
every user).  Sequences are processed in fixed-size chunks and the chunk
statistics are summed in a fixed order, so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_log = logging.getLogger(__name__)

FORMAT_VERSION = 1
#: Row-sum tolerance for stochastic vectors.
STOCHASTIC_ATOL = 1e-9
#: Sequences per E-step work unit; fixed so the reduction order is too.
CHUNK_SIZE = 128

DEFAULT_STATES = 20
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6
DEFAULT_SMOOTHING = 1e-6


class SymbolError(ValueError):
    """An observation lies outside the model's vocabulary."""

    def __init__(self, symbol, position, vocab_size):
        self.symbol = symbol
        self.position = position
        super().__init__(
            f"symbol {symbol} at position {position} outside vocabulary of size {vocab_size}"
        )


class NumericalError(ArithmeticError):
    """Likelihood became zero or non-finite."""


class ModelFileError(ValueError):
    """Malformed model file."""


class ModelVersionError(ModelFileError):
    pass


class NonStochasticError(ModelFileError):
    pass


def _check_stochastic(name, arr, atol=STOCHASTIC_ATOL):
    if not np.all(np.isfinite(arr)):
        return f"{name} has non-finite entries"
    if np.any(arr < 0):
        return f"{name} has negative entries"
    sums = arr.sum(axis=-1)
    bad = np.flatnonzero(np.abs(np.atleast_1d(sums) - 1.0) > atol)
    if bad.size:
        return f"{name} row {int(bad[0])} sums to {np.atleast_1d(sums)[bad[0]]!r}"
    return None


def _normalize_rows(arr):
    return arr / arr.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class HmmModel:
    """Initial distribution ``pi`` (N,), transitions ``trans`` (N, N) with
    ``trans[i, j] = P(q_{t+1}=j | q_t=i)``, emissions ``emit`` (N, M)."""

    pi: np.ndarray
    trans: np.ndarray
    emit: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64)
        trans = np.array(self.trans, dtype=np.float64)
        emit = np.array(self.emit, dtype=np.float64)
        if pi.ndim != 1 or pi.size < 1:
            raise ValueError("pi must be a non-empty vector")
        n = pi.size
        if trans.shape != (n, n):
            raise ValueError(f"trans must be {n}x{n}, got {trans.shape}")
        if emit.ndim != 2 or emit.shape[0] != n or emit.shape[1] < 1:
            raise ValueError(f"emit must be {n}xM with M >= 1, got {emit.shape}")
        for name, arr in [("pi", pi), ("trans", trans), ("emit", emit)]:
            problem = _check_stochastic(name, arr)
            if problem:
                raise ValueError(problem)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self):
        return self.pi.size

    @property
    def vocab_size(self):
        return self.emit.shape[1]

    @classmethod
    def random(cls, n_states, vocab_size, rng):
        """Uniform(0, 1] entries, each row normalised."""
        if n_states < 1 or vocab_size < 1:
            raise ValueError("n_states and vocab_size must be >= 1")
        pi = 1.0 - rng.random(n_states)
        trans = 1.0 - rng.random((n_states, n_states))
        emit = 1.0 - rng.random((n_states, vocab_size))
        return cls(_normalize_rows(pi), _normalize_rows(trans), _normalize_rows(emit))

    def __eq__(self, other):
        if not isinstance(other, HmmModel):
            return NotImplemented
        return (np.array_equal(self.pi, other.pi) and np.array_equal(self.trans, other.trans)
                and np.array_equal(self.emit, other.emit))

    __hash__ = None


def init_random(n_states, vocab_size, seed):
    return HmmModel.random(n_states, vocab_size, np.random.default_rng(seed))


@dataclass(frozen=True)
class ForwardResult:
    scaled_alpha: np.ndarray
    scale_factors: np.ndarray
    log_likelihood: float


@dataclass
class TrainReport:
    iterations_run: int = 0
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False


def _as_obs(model, seq):
    obs = np.asarray(seq)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("sequence must be a non-empty 1-d array of symbols")
    bad = np.flatnonzero((obs < 0) | (obs >= model.vocab_size))
    if bad.size:
        pos = int(bad[0])
        raise SymbolError(int(obs[pos]), pos, model.vocab_size)
    return obs.astype(np.int64)


def _as_batch(model, seqs):
    obs = np.asarray(seqs)
    if obs.ndim != 2 or obs.shape[1] == 0:
        raise ValueError("expected a 2-d array of equal-length sequences")
    bad = np.argwhere((obs < 0) | (obs >= model.vocab_size))
    if bad.size:
        s, pos = (int(v) for v in bad[0])
        raise SymbolError(int(obs[s, pos]), pos, model.vocab_size)
    return obs.astype(np.int64)


def _emission_probs(model, obs):
    # (S, T, N): b_j(o_t) for every sequence, step and state
    return np.moveaxis(model.emit[:, obs], 0, -1)


def _forward_batch(model, obs, probs):
    S, T = obs.shape
    alpha = np.empty((S, T, model.n_states))
    scale = np.empty((S, T))
    raw = model.pi * probs[:, 0]
    for t in range(T):
        if t > 0:
            raw = (alpha[:, t - 1] @ model.trans) * probs[:, t]
        c = raw.sum(axis=1)
        scale[:, t] = c
        np.divide(raw, c[:, None], out=alpha[:, t], where=c[:, None] > 0)
        alpha[c == 0, t] = 0.0
    return alpha, scale


def _backward_batch(model, probs, scale):
    S, T, N = probs.shape
    beta = np.empty((S, T, N))
    beta[:, T - 1] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(T - 2, -1, -1):
            beta[:, t] = ((probs[:, t + 1] * beta[:, t + 1]) @ model.trans.T) / scale[:, t + 1, None]
    return beta


def _log_likelihoods(scale):
    with np.errstate(divide="ignore"):
        return np.log(scale).sum(axis=1)


def forward(model, seq):
    """Scaled forward pass over one sequence."""
    obs = _as_obs(model, seq)[None, :]
    alpha, scale = _forward_batch(model, obs, _emission_probs(model, obs))
    return ForwardResult(alpha[0], scale[0], float(_log_likelihoods(scale)[0]))


def backward(model, seq, scale_factors):
    """Scaled backward pass; ``scale_factors`` must come from :func:`forward`.

    Returns a (T, N) array whose last row is all ones.
    """
    obs = _as_obs(model, seq)[None, :]
    scale = np.asarray(scale_factors, dtype=np.float64)
    if scale.shape != (obs.shape[1],):
        raise ValueError(
            f"scale_factors has length {scale.size}, sequence has length {obs.shape[1]}"
        )
    return _backward_batch(model, _emission_probs(model, obs), scale[None, :])[0]


def posteriors(model, seq):
    """State posteriors ``P(q_t = i | O)`` as a (T, N) array."""
    fw = forward(model, seq)
    return fw.scaled_alpha * backward(model, seq, fw.scale_factors)


def log_likelihood(model, sequences):
    """Total log-likelihood over ``sequences`` (any mix of lengths)."""
    return float(sum(_chunk_stats(model, obs)[3] for obs in _chunks(model, sequences)))


def _chunks(model, sequences):
    if isinstance(sequences, np.ndarray) and sequences.ndim == 2:
        groups = [_as_batch(model, sequences)]
    else:
        by_len = {}
        for seq in sequences:
            obs = _as_obs(model, seq)
            by_len.setdefault(obs.size, []).append(obs)
        groups = [np.stack(by_len[k]) for k in sorted(by_len)]
    return [g[i:i + CHUNK_SIZE] for g in groups for i in range(0, len(g), CHUNK_SIZE)]


def _chunk_stats(model, obs):
    probs = _emission_probs(model, obs)
    alpha, scale = _forward_batch(model, obs, probs)
    beta = _backward_batch(model, probs, scale)
    gamma = alpha * beta
    pi_num = gamma[:, 0].sum(axis=0)
    N, M = model.n_states, model.vocab_size
    if obs.shape[1] > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            right = probs[:, 1:] * beta[:, 1:] / scale[:, 1:, None]
        trans_num = np.einsum("sti,stj->ij", alpha[:, :-1], right) * model.trans
    else:
        trans_num = np.zeros((N, N))
    flat = (np.arange(N) * M + obs[..., None]).ravel()
    emit_num = np.bincount(flat, weights=gamma.ravel(), minlength=N * M).reshape(N, M)
    return pi_num, trans_num, emit_num, float(_log_likelihoods(scale).sum())


def _expected_counts(model, chunks, pool):
    stats = pool.map(lambda c: _chunk_stats(model, c), chunks) if pool else map(
        lambda c: _chunk_stats(model, c), chunks)
    pi_num = trans_num = emit_num = None
    total = 0.0
    for p, a, b, ll in stats:
        if pi_num is None:
            pi_num, trans_num, emit_num = p.copy(), a.copy(), b.copy()
        else:
            pi_num += p
            trans_num += a
            emit_num += b
        total += ll
    return pi_num, trans_num, emit_num, total


def _reestimate(model, pi_num, trans_num, emit_num, smoothing):
    def rows(num, prev):
        num = num + smoothing
        sums = num.sum(axis=1, keepdims=True)
        # states never visited (possible only without smoothing) keep their row
        return np.where(sums > 0, num / np.where(sums > 0, sums, 1.0), prev)

    pi = pi_num / pi_num.sum()
    return HmmModel(pi, rows(trans_num, model.trans), rows(emit_num, model.emit))


def baum_welch(init, sequences, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL,
               smoothing=DEFAULT_SMOOTHING, threads=1, verbose=False):
    """Fit an HMM to many sequences by expectation-maximisation.

    Parameters
    ----------
    init : HmmModel
        Starting parameters.
    sequences : 2-d int array or list of 1-d int arrays
        Training sequences; lengths may differ.
    max_iters : int
        Maximum number of re-estimation steps.
    tol : float
        Stop once ``(ll_new - ll_old) / (|ll_old| + 1) < tol``.
    smoothing : float
        Pseudo-count added to every expected transition and emission count
        before normalising.  The initial distribution is not smoothed.
    threads : int
        Worker threads for the E-step.  Does not change the result.

    Returns
    -------
    model : HmmModel
    report : TrainReport
        ``log_likelihood_trace[0]`` is the log-likelihood of ``init`` and
        entry ``k`` that of the model after ``k`` updates; the last entry
        belongs to the returned model.

    Raises
    ------
    NumericalError
        If the total log-likelihood is not finite.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if len(sequences) == 0:
        raise ValueError("need at least one training sequence")
    chunks = _chunks(init, sequences)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        model = init
        stats = _expected_counts(model, chunks, pool)
        ll = _finite(stats[3], 0)
        report = TrainReport(log_likelihood_trace=[ll])
        for it in range(1, max_iters + 1):
            model = _reestimate(model, *stats[:3], smoothing)
            stats = _expected_counts(model, chunks, pool)
            new_ll = _finite(stats[3], it)
            report.log_likelihood_trace.append(new_ll)
            report.iterations_run = it
            if verbose:
                _log.info("iter %4d  log-likelihood %.6f  delta %+.6g", it, new_ll, new_ll - ll)
            if (new_ll - ll) / (abs(ll) + 1.0) < tol:
                report.converged = True
                break
            ll = new_ll
    finally:
        if pool:
            pool.shutdown()
    return model, report


def _finite(ll, iteration):
    if not np.isfinite(ll):
        raise NumericalError(f"log-likelihood {ll} at iteration {iteration}")
    return ll


def next_symbol_distributions(model, seqs):
    """Next-symbol distributions for a 2-d batch of equal-length sequences.

    The filtered state distribution after the last observation is pushed
    through one transition and one emission.
    """
    obs = _as_batch(model, seqs)
    alpha, scale = _forward_batch(model, obs, _emission_probs(model, obs))
    if np.any(scale == 0):
        s = int(np.flatnonzero((scale == 0).any(axis=1))[0])
        raise NumericalError(f"sequence {s} has zero probability under the model")
    return alpha[:, -1] @ model.trans @ model.emit


def next_symbol_distribution(model, seq):
    return next_symbol_distributions(model, _as_obs(model, seq)[None, :])[0]


def _model_doc(model, meta=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "n_states": model.n_states,
        "m_symbols": model.vocab_size,
        "pi": model.pi.tolist(),
        "trans": model.trans.tolist(),
        "emit": model.emit.tolist(),
    }
    if meta is not None:
        doc["meta"] = meta
    return doc


def save_model(model, path, meta=None):
    """Write ``model`` as JSON.

    Floats are written with ``repr``, the shortest string that parses back
    to the same double, so save/load round-trips bit-exactly.  ``meta`` is
    an optional JSON-serialisable dict stored alongside (ignored on load).
    """
    Path(path).write_text(json.dumps(_model_doc(model, meta)) + "\n", encoding="utf-8")


def load_model(path):
    """Read a model written by :func:`save_model`.

    Raises
    ------
    ModelVersionError
        Unknown ``format_version``.
    NonStochasticError
        Some row of ``pi``, ``trans`` or ``emit`` is not a probability vector.
    ModelFileError
        Anything else malformed.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ModelFileError(f"{path}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    try:
        n, m = int(doc["n_states"]), int(doc["m_symbols"])
        pi = np.array(doc["pi"], dtype=np.float64)
        trans = np.array(doc["trans"], dtype=np.float64)
        emit = np.array(doc["emit"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: missing or malformed field ({exc})") from None
    for name, arr, shape in [("pi", pi, (n,)), ("trans", trans, (n, n)), ("emit", emit, (n, m))]:
        if arr.shape != shape:
            raise ModelFileError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
        problem = _check_stochastic(name, arr)
        if problem:
            raise NonStochasticError(f"{path}: {problem}")
    return HmmModel(pi, trans, emit)
