"""Softmax-regression topic classifier over mean-pooled region features."""

import numpy as np

from ..autodiff import ParameterStore, Tape, Tensor, backward, ops
from ..errors import DataError
from ..optim import adam_update


class TopicProbe:
    def __init__(self, feature_dim, n_topics):
        self.store = ParameterStore()
        self.W = self.store.add_zeros("topic_probe.W", (n_topics, feature_dim))
        self.b = self.store.add_zeros("topic_probe.b", (n_topics,))

    @property
    def n_topics(self):
        return self.W.shape[0]

    def logits(self, pooled):
        return ops.linear(Tensor(pooled), self.W, self.b)


def _pool(features):
    features = np.asarray(features, dtype=np.float64)
    return features.mean(axis=-2) if features.ndim >= 2 else features


def train_topic_probe(features, labels, n_topics, epochs=300, lr=0.05):
    """Fit the probe by full-batch Adam on cross-entropy.

    ``features`` is ``(N, m, D)``; returns ``(probe, train_accuracy)``.
    """
    pooled = _pool(features)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_topics):
        raise DataError(f"topic labels must lie in [0, {n_topics})")
    probe = TopicProbe(pooled.shape[-1], n_topics)
    n = len(labels)
    for _ in range(epochs):
        with Tape() as tape:
            logp = ops.log_softmax(probe.logits(pooled))
            loss = ops.scale(ops.total(ops.take_last(logp, labels)), -1.0 / n)
        backward(tape, loss)
        adam_update(probe.store, lr=lr)
    pred = np.argmax(probe.logits(pooled).value, axis=-1)
    return probe, float((pred == labels).mean())


def predict_topic_vector(features, probe):
    """softmax(W * mean_regions(features) + b); batch axes are preserved."""
    return ops.softmax(probe.logits(_pool(features))).value
