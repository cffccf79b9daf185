"""Corpus BLEU-1..4 and ROUGE-L for generated captions."""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data.text import tokenize
from .errors import ContractError

METRICS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L")


def _tokens(s):
    return tokenize(s) if isinstance(s, str) else list(s)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(candidates, references):
    if not candidates:
        raise ContractError("no candidates to score")
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates but {len(references)} reference sets")
    for refs in references:
        if not refs:
            raise ContractError("every candidate needs at least one reference")


def bleu(candidates, references, max_n=4, smooth=False):
    """Corpus BLEU-1..``max_n``.

    Clipped n-gram matches and candidate n-gram counts are pooled over the
    corpus. The brevity penalty compares total candidate length with the sum
    of per-sentence closest reference lengths (ties to the shorter). With
    ``smooth`` orders above 1 get add-one smoothing. Returns a list of
    ``max_n`` scores.
    """
    _check(candidates, references)
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        c = _tokens(cand)
        rs = [_tokens(r) for r in refs]
        cand_len += len(c)
        ref_len += min((len(r) for r in rs), key=lambda L: (abs(L - len(c)), L))
        for n in range(1, max_n + 1):
            cand_counts = _ngrams(c, n)
            max_ref = Counter()
            for r in rs:
                for g, k in _ngrams(r, n).items():
                    if k > max_ref[g]:
                        max_ref[g] = k
            matches[n - 1] += sum(min(k, max_ref[g]) for g, k in cand_counts.items())
            totals[n - 1] += sum(cand_counts.values())
    if cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    log_sum = 0.0
    for n in range(max_n):
        num, den = matches[n], totals[n]
        if smooth and n > 0:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            log_sum = -math.inf
        else:
            log_sum += math.log(num / den)
        scores.append(0.0 if log_sum == -math.inf else bp * math.exp(log_sum / (n + 1)))
    return scores


def lcs_length(a, b):
    """Longest common subsequence length of two token lists."""
    ids = {}
    ia = np.array([ids.setdefault(t, len(ids)) for t in a], dtype=np.int64)
    ib = np.array([ids.setdefault(t, len(ids)) for t in b], dtype=np.int64)
    return int(kernels.lcs_length(ia, ib))


def rouge_l_sentence(candidate, refs, beta=1.2):
    """ROUGE-L F for one candidate: best precision and best recall over refs."""
    c = _tokens(candidate)
    if not c:
        return 0.0
    precisions, recalls = [], []
    for r in refs:
        r = _tokens(r)
        lcs = lcs_length(c, r)
        precisions.append(lcs / len(c))
        recalls.append(lcs / len(r) if r else 0.0)
    p, r = max(precisions), max(recalls)
    if p == 0 or r == 0:
        return 0.0
    return ((1 + beta ** 2) * p * r) / (r + beta ** 2 * p)


def rouge_l(candidates, references, beta=1.2):
    """Corpus ROUGE-L: mean of sentence scores."""
    _check(candidates, references)
    return float(np.mean([rouge_l_sentence(c, refs, beta) for c, refs in zip(candidates, references)]))


@dataclass
class EvalReport:
    scores: dict
    per_image: list = field(default_factory=list)  # (image_id, candidate, refs, rouge_l)
    n_images: int = 0

    def format(self):
        lines = [f"images\t{self.n_images}"]
        lines += [f"{name}\t{self.scores[name]:.6f}" for name in METRICS]
        return "\n".join(lines) + "\n"

    def format_dump(self):
        out = []
        for image_id, cand, refs, _ in self.per_image:
            out.append(f"{image_id}\t{cand}\t{' || '.join(refs)}")
        return "\n".join(out) + "\n"


def score_corpus(image_ids, candidates, references, smooth=False):
    b = bleu(candidates, references, 4, smooth)
    per = [rouge_l_sentence(c, r) for c, r in zip(candidates, references)]
    scores = {f"BLEU-{n}": b[n - 1] for n in range(1, 5)}
    scores["ROUGE-L"] = float(np.mean(per))
    per_image = [(i, c, list(r), s) for i, c, r, s in zip(image_ids, candidates, references, per)]
    return EvalReport(scores, per_image, len(candidates))


def evaluate(model, data, vocab, max_len=16, batch_size=64, smooth=False):
    """Greedy-decode every image of ``data`` and score against its references."""
    if not data.image_ids:
        raise ContractError("empty evaluation split")
    candidates = []
    for start in range(0, len(data.image_ids), batch_size):
        sl = slice(start, start + batch_size)
        out = model.greedy_decode(data.features[sl], data.topics[sl], data.attributes[sl], max_len)
        candidates.extend(vocab.decode(o) for o in out)
    return score_corpus(data.image_ids, candidates, data.references, smooth)
