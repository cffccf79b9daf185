"""Attribute vocabulary, caption-derived targets, and a linear multi-label probe."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..autodiff import ParameterStore, Tape, Tensor, backward, ops
from ..errors import ConfigError, ContractError, DimensionError
from ..optim import adam_update
from .text import STOPWORDS, content_tokens


@dataclass
class AttributeVocabulary:
    names: list
    merge_map: dict
    counts: dict

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ContractError("attribute names must be unique")
        listed = set(self.names)
        bad = [t for t in self.merge_map.values() if t not in listed]
        if bad:
            raise ContractError(f"merge targets not in attribute list: {sorted(set(bad))}")
        self.index = {n: i for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def lookup(self, word):
        """Attribute index for a surface word, or None."""
        return self.index.get(self.merge_map.get(word, word))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for n in self.names:
                fh.write(f"{n}\t{self.counts.get(n, 0)}\n")
            for surface, target in sorted(self.merge_map.items()):
                fh.write(f"={surface}\t{target}\n")

    @classmethod
    def load(cls, path):
        names, counts, merge = [], {}, {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                a, b = line.split("\t")
                if a.startswith("="):
                    merge[a[1:]] = b
                else:
                    names.append(a)
                    counts[a] = int(b)
        return cls(names, merge, counts)


def read_merge_map(path):
    """Parse ``surface<TAB>attribute`` lines; ``#`` starts a comment line."""
    merge = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ConfigError(f"{path}:{lineno}: expected 'surface<TAB>attribute'")
            merge[parts[0].strip().lower()] = parts[1].strip().lower()
    return merge


def build_attribute_vocabulary(captions, c, merge_map=None):
    """Top-``c`` content words folded through ``merge_map``.

    Frequency ties are broken alphabetically. Folding keeps the position of
    the first surface form that maps to each attribute, so the result never
    has more than ``c`` entries.
    """
    if c < 1:
        raise ContractError("c must be at least 1")
    merge_map = dict(merge_map or {})
    for k, v in merge_map.items():
        if not isinstance(k, str) or not isinstance(v, str) or not k or not v:
            raise ConfigError(f"malformed merge map entry {k!r} -> {v!r}")
    counts = Counter(t for cap in captions for t in content_tokens(cap))
    top = sorted(counts, key=lambda w: (-counts[w], w))[:c]
    names = []
    for w in top:
        target = merge_map.get(w, w)
        if target not in names:
            names.append(target)
    listed = set(names)
    folded = Counter()
    for w, n in counts.items():
        target = merge_map.get(w, w)
        if target in listed:
            folded[target] += n
    used_merge = {s: t for s, t in merge_map.items() if t in listed}
    return AttributeVocabulary(names, used_merge, dict(folded))


def _frequency_order(vocab, indices):
    return sorted(indices, key=lambda i: (-vocab.counts.get(vocab.names[i], 0), vocab.names[i]))


def extract_attribute_targets(captions, vocab, top_k=10):
    """Indicator vector of attributes mentioned in any caption.

    When more than ``top_k`` fire, the most frequent in the corpus are kept
    (ties alphabetical).
    """
    fired = set()
    for cap in captions:
        for t in content_tokens(cap):
            i = vocab.lookup(t)
            if i is not None:
                fired.add(i)
    out = np.zeros(len(vocab))
    for i in _frequency_order(vocab, fired)[:top_k]:
        out[i] = 1.0
    return out


def attributes_from_names(names, vocab, top_k=10):
    """Indicator vector from explicit attribute names (unknown names ignored)."""
    idx = {vocab.lookup(n) for n in names} - {None}
    out = np.zeros(len(vocab))
    for i in _frequency_order(vocab, idx)[:top_k]:
        out[i] = 1.0
    return out


def select_top_k(scores, vocab, top_k=10):
    """Keep the ``top_k`` highest scores and zero the rest.

    Equal scores are ordered by corpus frequency, then alphabetically.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] != len(vocab):
        raise DimensionError(f"score width {scores.shape[-1]} vs {len(vocab)} attributes")
    if scores.ndim == 2:
        return np.stack([select_top_k(s, vocab, top_k) for s in scores])
    rank = {i: r for r, i in enumerate(_frequency_order(vocab, range(len(vocab))))}
    order = sorted(range(len(vocab)), key=lambda i: (-scores[i], rank[i]))
    out = np.zeros_like(scores)
    keep = order[:top_k]
    out[keep] = scores[keep]
    return out


class AttributeProbe:
    """Per-attribute logistic regression on mean-pooled region features."""

    def __init__(self, feature_dim, n_attributes, seed=0):
        self.store = ParameterStore()
        self.W = self.store.add_zeros("attribute_probe.W", (n_attributes, feature_dim))
        self.b = self.store.add_zeros("attribute_probe.b", (n_attributes,))
        self.seed = seed

    def scores(self, features):
        pooled = np.asarray(features, dtype=np.float64).mean(axis=-2)
        return ops.sigmoid(ops.linear(Tensor(pooled), self.W, self.b)).value

    def fit(self, features, targets, epochs=200, lr=0.05):
        pooled = np.asarray(features, dtype=np.float64).mean(axis=-2)
        y = np.asarray(targets, dtype=np.float64)
        n = pooled.shape[0]
        for _ in range(epochs):
            with Tape() as tape:
                z = ops.linear(Tensor(pooled), self.W, self.b)
                # binary cross-entropy with logits: softplus(z) - y*z
                loss = ops.scale(ops.total(ops.add(ops.softplus(z), ops.scale(z, -y))), 1.0 / n)
            backward(tape, loss)
            adam_update(self.store, lr=lr)
        return float(((self.scores(features) > 0.5) == (y > 0.5)).mean())


def train_attribute_probe(features, targets, epochs=200, lr=0.05, seed=0):
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    probe = AttributeProbe(features.shape[-1], targets.shape[-1], seed)
    probe.fit(features, targets, epochs, lr)
    return probe


def predict_attributes(features, probe, vocab, top_k=10):
    return select_top_k(probe.scores(features), vocab, top_k)


__all__ = [
    "STOPWORDS",
    "AttributeProbe",
    "AttributeVocabulary",
    "attributes_from_names",
    "build_attribute_vocabulary",
    "extract_attribute_targets",
    "predict_attributes",
    "read_merge_map",
    "select_top_k",
    "train_attribute_probe",
]
