"""MAP@K and the six-model comparison.

The metric averages, over users, the reciprocal 1-based rank of the true
next artist within the top-K candidates, with a miss contributing 0.  In
information-retrieval terms this is mean reciprocal rank at K; the MAP@K
name is kept because that is what the competition called it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import split_holdout
from .predict import MODELS, PredictConfig, Predictor

DISPLAY_NAMES = {
    "hf-corpus": "HF_corpus",
    "hf-current": "HF_current",
    "cf-user": "CF_user",
    "cf-item": "CF_item",
    "hmm": "HMM",
    "mhmm": "MHMM",
}


class BenchError(RuntimeError):
    def __init__(self, model, cause):
        self.model = model
        super().__init__(f"model {model} failed: {cause}")


def _items(ranking):
    return np.asarray(getattr(ranking, "items", ranking), dtype=np.int64)


def ap_at_k(target, ranking, k=None):
    """``1 / rank`` of ``target`` in the first ``k`` items, or 0 on a miss."""
    items = _items(ranking)
    if np.unique(items).size != items.size:
        raise ValueError("ranking contains duplicate items")
    if k is not None:
        items = items[:k]
    hits = np.flatnonzero(items == target)
    return 1.0 / (hits[0] + 1) if hits.size else 0.0


def map_at_k(targets, rankings, k=None):
    if len(targets) != len(rankings):
        raise ValueError(f"{len(targets)} targets but {len(rankings)} rankings")
    if len(targets) == 0:
        raise ValueError("need at least one user")
    terms = [ap_at_k(t, r, k) for t, r in zip(targets, rankings)]
    return float(np.mean(terms))


@dataclass
class EvalReport:
    per_model: dict
    config: dict
    k: int
    n_users: int
    protocol: str = "leave-last-out"
    seconds: dict = field(default_factory=dict, compare=False)

    def to_dict(self, timings=False):
        doc = {
            "protocol": self.protocol,
            "K": self.k,
            "N_users": self.n_users,
            "config": self.config,
            "per_model": self.per_model,
        }
        if timings:
            doc["seconds"] = self.seconds
        return doc

    def to_json(self, timings=False):
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True) + "\n"

    def to_text(self, timings=True):
        width = max(len("Model"), *(len(DISPLAY_NAMES.get(m, m)) for m in self.per_model))
        head = f"| {'Model':<{width}} | {'MAP@K':>8} |"
        if timings:
            head += f" {'seconds':>8} |"
        rule = "+" + "-" * (len(head) - 2) + "+"
        lines = [rule, head, rule]
        for name, score in self.per_model.items():
            line = f"| {DISPLAY_NAMES.get(name, name):<{width}} | {score:>8.5f} |"
            if timings:
                line += f" {self.seconds.get(name, float('nan')):>8.2f} |"
            lines.append(line)
        lines.append(rule)
        return "\n".join(lines) + "\n"


def bench_all(corpus, config=PredictConfig(), k=10, models=MODELS, targets=None, threads=1):
    """Train every model and score it with MAP@K.

    Without ``targets`` the last play of each sequence is held out and the
    models see only the prefixes.  With ``targets`` (dense ids, one per
    user, ``-1`` for artists outside the vocabulary) the models are trained
    on the full sequences and asked for the following play.
    """
    if targets is None:
        split = split_holdout(corpus)
        train, truth, protocol = split.prefixes, split.targets, "leave-last-out"
    else:
        truth = np.asarray(targets, dtype=np.int64)
        if truth.shape != (corpus.n_users,):
            raise ValueError(f"{truth.size} targets for {corpus.n_users} users")
        train, protocol = corpus, "external-targets"
    predictor = Predictor(train, config, threads=threads)
    scores, seconds = {}, {}
    for name in models:
        start = time.perf_counter()
        try:
            rankings = predictor.rankings(name)
        except Exception as exc:
            raise BenchError(name, exc) from exc
        scores[name] = map_at_k(truth, rankings, k)
        seconds[name] = time.perf_counter() - start
    snapshot = config.to_dict()
    if predictor.train_report is not None:
        report = predictor.train_report
        snapshot["em_iterations_run"] = report.iterations_run
        snapshot["em_converged"] = report.converged
        snapshot["em_final_log_likelihood"] = report.log_likelihood_trace[-1]
    return EvalReport(per_model=scores, config=snapshot, k=k, n_users=corpus.n_users,
                      protocol=protocol, seconds=seconds)


def load_targets(path, corpus):
    """Read one external artist code per line; unknown codes map to -1."""
    codes = [int(line) for line in Path(path).read_text(encoding="utf-8").split()]
    return corpus.to_internal(codes, missing=-1)
