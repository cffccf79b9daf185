"""Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

The per-token sampling loop runs in :mod:`tgcap.kernels`. Uniform draws are
generated here with numpy, so the compiled and pure-Python backends make
identical choices under the same seed.
"""

import logging
import struct
from collections import Counter
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.special import gammaln

from .. import kernels
from ..data.text import content_tokens
from ..errors import ContractError, FormatError

log = logging.getLogger(__name__)

MAGIC = b"TGLD"


@dataclass
class LdaModel:
    phi: np.ndarray          # (K, V) topic-word distributions
    alpha: float
    eta: float
    doc_topic: np.ndarray    # (n_docs, K) final counts of the fitted corpus
    topic_word: np.ndarray   # (K, V) final counts
    log_likelihood: float = float("nan")

    @property
    def n_topics(self):
        return self.phi.shape[0]

    @property
    def vocab_size(self):
        return self.phi.shape[1]

    def doc_distributions(self):
        """Smoothed topic mixtures of the training documents."""
        n = self.doc_topic.sum(axis=1, keepdims=True)
        return (self.doc_topic + self.alpha) / (n + self.n_topics * self.alpha)


@dataclass
class TopicAssignment:
    label: int
    distribution: np.ndarray
    flagged: bool = False

    def __iter__(self):
        return iter((self.label, self.distribution))


def _flatten(corpus, vocab_size):
    words, docs = [], []
    kept = 0
    for d, doc in enumerate(corpus):
        doc = [w for w in doc if 0 <= w < vocab_size]
        if not doc:
            log.warning("skipping empty document %d", d)
            continue
        words.extend(doc)
        docs.extend([kept] * len(doc))
        kept += 1
    return np.asarray(words, dtype=np.int32), np.asarray(docs, dtype=np.int32), kept


def joint_log_likelihood(topic_word, doc_topic, alpha, eta):
    """Collapsed log p(words, assignments) of a Gibbs state."""
    K, V = topic_word.shape
    nk = topic_word.sum(axis=1)
    nd = doc_topic.sum(axis=1)
    word_part = K * (gammaln(V * eta) - V * gammaln(eta)) + (
        gammaln(topic_word + eta).sum() - gammaln(nk + V * eta).sum()
    )
    doc_part = doc_topic.shape[0] * (gammaln(K * alpha) - K * gammaln(alpha)) + (
        gammaln(doc_topic + alpha).sum() - gammaln(nd + K * alpha).sum()
    )
    return float(word_part + doc_part)


def fit_lda(corpus, n_topics, alpha=None, eta=0.01, iterations=500, seed=0,
            vocab_size=None, callback=None, restarts=1):
    """Fit LDA to ``corpus`` (a list of token-id lists).

    ``alpha`` defaults to 50/K. ``callback(sweep, topic_word, topic_totals,
    doc_topic)`` is invoked after every sweep when given. Documents that are
    empty are skipped, so ``doc_topic`` rows follow the non-empty documents.
    With ``restarts > 1`` independent chains are run from seeds derived from
    ``seed`` and the one with the highest joint log-likelihood is kept.
    """
    if n_topics < 2:
        raise ContractError("LDA needs at least two topics")
    if restarts < 1:
        raise ContractError("restarts must be at least 1")
    corpus = [list(doc) for doc in corpus]
    if not corpus:
        raise ContractError("empty corpus")
    if vocab_size is None:
        vocab_size = 1 + max((max(doc) for doc in corpus if doc), default=0)
    if alpha is None:
        alpha = 50.0 / n_topics
    words, docs, n_docs = _flatten(corpus, vocab_size)
    if n_docs == 0:
        raise ContractError("every document is empty")
    seeds = [seed] if restarts == 1 else np.random.SeedSequence(seed).generate_state(restarts)
    best = None
    for chain_seed in seeds:
        model = _run_chain(words, docs, n_docs, n_topics, vocab_size, alpha, eta,
                           iterations, int(chain_seed), callback)
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return best


def _run_chain(words, docs, n_docs, K, V, alpha, eta, iterations, seed, callback):
    rng = np.random.default_rng(seed)
    z = rng.integers(K, size=words.size).astype(np.int32)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)
    ndk = np.zeros((n_docs, K), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    for sweep in range(iterations):
        u = rng.random(words.size)
        kernels.gibbs_sweep(words, docs, z, nkw, nk, ndk, float(alpha), float(eta), u)
        if callback is not None:
            callback(sweep, nkw, nk, ndk)
    phi = (nkw + eta) / (nk[:, None] + V * eta)
    return LdaModel(phi=phi, alpha=float(alpha), eta=float(eta), doc_topic=ndk, topic_word=nkw,
                    log_likelihood=joint_log_likelihood(nkw, ndk, alpha, eta))


def infer_topic_label(doc, model, iterations=50, seed=0):
    """Topic mixture of a new document with the topic-word table held fixed.

    Out-of-vocabulary ids are dropped; a document with nothing left gets the
    uniform mixture, label 0, and ``flagged=True``. Ties in the argmax go to
    the lowest topic index.
    """
    K, V = model.n_topics, model.vocab_size
    words = np.asarray([w for w in doc if 0 <= w < V], dtype=np.int32)
    if words.size == 0:
        return TopicAssignment(0, np.full(K, 1.0 / K), flagged=True)
    rng = np.random.default_rng(seed)
    z = rng.integers(K, size=words.size).astype(np.int32)
    ndk = np.bincount(z, minlength=K).astype(np.int64)
    phi = np.ascontiguousarray(model.phi)
    for _ in range(iterations):
        kernels.infer_sweep(words, z, ndk, phi, model.alpha, rng.random(words.size))
    dist = (ndk + model.alpha) / (words.size + K * model.alpha)
    return TopicAssignment(int(np.argmax(dist)), dist)


class LdaVocabulary:
    """Content-word ids for LDA documents (stopwords removed)."""

    def __init__(self, words):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, documents_text):
        counts = Counter(t for text in documents_text for t in content_tokens(text))
        return cls(sorted(counts, key=lambda w: (-counts[w], w)))

    def __len__(self):
        return len(self.words)

    def encode(self, text):
        return [self.index[t] for t in content_tokens(text) if t in self.index]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(w + "\n" for w in self.words)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.strip()])


def caption_documents(records):
    """One document per image: all of its captions joined."""
    return [" ".join(r.captions) for r in records]


def purity(predicted, truth):
    """Fraction of items whose cluster's majority true label matches theirs."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.size == 0:
        return 0.0
    hits = 0
    for c in np.unique(predicted):
        members = truth[predicted == c]
        hits += np.bincount(members).max()
    return hits / predicted.size


def best_match_purity(predicted, truth):
    """Accuracy under the best one-to-one relabelling of predicted topics.

    Falls back to :func:`purity` when there are too many labels to enumerate.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    pred_labels = np.unique(predicted)
    true_labels = np.unique(truth)
    if max(len(pred_labels), len(true_labels)) > 7:
        return purity(predicted, truth)
    best = 0
    slots = list(true_labels) + [None] * max(0, len(pred_labels) - len(true_labels))
    for perm in permutations(slots, len(pred_labels)):
        mapping = dict(zip(pred_labels, perm))
        best = max(best, sum(mapping[p] == t for p, t in zip(predicted, truth)))
    return best / predicted.size


def encode_lda_model(model):
    phi = np.ascontiguousarray(model.phi, dtype="<f8")
    head = MAGIC + struct.pack("<II", *phi.shape)
    return head + phi.tobytes()


def decode_lda_model(data, path=None, alpha=None, eta=0.01):
    if len(data) < 12:
        raise FormatError("LDA header truncated", path, len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad LDA magic {data[:4]!r}", path, 0)
    K, V = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 8 * K * V:
        raise FormatError(f"LDA payload size mismatch for K={K}, V={V}", path, min(len(data), 12 + 8 * K * V))
    phi = np.frombuffer(data, dtype="<f8", count=K * V, offset=12).astype(np.float64).reshape(K, V)
    if alpha is None:
        alpha = 50.0 / K
    return LdaModel(phi=phi, alpha=alpha, eta=eta,
                    doc_topic=np.zeros((0, K), dtype=np.int64), topic_word=np.zeros((K, V), dtype=np.int64))


def save_lda_model(path, model):
    with open(path, "wb") as fh:
        fh.write(encode_lda_model(model))


def load_lda_model(path, alpha=None, eta=0.01):
    with open(path, "rb") as fh:
        return decode_lda_model(fh.read(), path, alpha, eta)


def save_topic_assignments(path, assignments):
    """``image_id<TAB>label<TAB>p_0 ... p_{K-1}`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, a in assignments.items():
            probs = " ".join(repr(float(p)) for p in a.distribution)
            fh.write(f"{image_id}\t{a.label}\t{probs}\n")


def load_topic_assignments(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise FormatError(f"line {lineno}: expected 3 tab-separated fields", path)
            out[parts[0]] = TopicAssignment(int(parts[1]), np.array([float(x) for x in parts[2].split()]))
    return out
