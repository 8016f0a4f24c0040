import numpy as np

from mhmm.hmm import HmmModel


def random_model(rng, n, m):
    def rows(shape):
        x = rng.uniform(0.05, 1.0, size=shape)
        return x / x.sum(axis=-1, keepdims=True)

    return HmmModel(rows(n), rows((n, n)), rows((n, m)))


def as_lists(model):
    return model.pi.tolist(), model.trans.tolist(), model.emit.tolist()
