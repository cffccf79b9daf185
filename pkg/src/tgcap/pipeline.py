"""Glue between manifests, vocabularies, topic sources and the model."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data.attributes import (
    AttributeVocabulary,
    attributes_from_names,
    build_attribute_vocabulary,
    extract_attribute_targets,
)
from .data.vocab import Vocabulary
from .decoder import VARIANTS, CaptionModel, ModelConfig
from .errors import DataError
from .evaluation import evaluate
from .topics import (
    LdaVocabulary,
    caption_documents,
    fit_lda,
    infer_topic_label,
    predict_topic_vector,
    train_topic_probe,
)
from .training import CaptionData, train


def annotation_attribute_vocabulary(records, c, declared=None):
    """Attribute vocabulary ranked by how many images carry each annotation.

    ``declared`` names (e.g. from the manifest header) are included even when
    no record carries them.
    """
    counts = Counter(name for r in records for name in set(r.attributes or ()))
    for name in declared or ():
        counts.setdefault(name, 0)
    names = sorted(counts, key=lambda w: (-counts[w], w))[:c]
    return AttributeVocabulary(names, {}, {n: counts[n] for n in names})


def build_vocabularies(records, min_count=1, n_attributes=256, merge_map=None,
                       attribute_source="auto", declared_attributes=None):
    """Word vocabulary plus attribute vocabulary for ``records``.

    ``attribute_source`` is ``captions`` (most common caption words),
    ``annotations`` (the manifest ``attributes`` lists) or ``auto`` (the
    latter when every record is annotated).
    """
    captions = [c for r in records for c in r.captions]
    vocab = Vocabulary.build(captions, min_count)
    if attribute_source == "auto":
        attribute_source = "annotations" if all(r.attributes for r in records) else "captions"
    if attribute_source == "annotations":
        attrs = annotation_attribute_vocabulary(records, n_attributes, declared_attributes)
    elif attribute_source == "captions":
        attrs = build_attribute_vocabulary(captions, n_attributes, merge_map)
    else:
        raise DataError(f"unknown attribute source {attribute_source!r}")
    if len(attrs) == 0:
        raise DataError("attribute vocabulary is empty")
    return vocab, attrs


def oracle_attributes(record, attr_vocab, top_k=10):
    if record.attributes is not None:
        return attributes_from_names(record.attributes, attr_vocab, top_k)
    return extract_attribute_targets(record.captions, attr_vocab, top_k)


def fit_caption_topics(records, n_topics, alpha=0.1, eta=0.01, iterations=300, restarts=5, seed=0):
    """LDA over each image's joined captions.

    Returns ``(model, lda_vocab, assignments)`` with ``assignments`` mapping
    image id to a :class:`TopicAssignment` of the fitted chain.
    """
    from .topics.lda import TopicAssignment

    docs = caption_documents(records)
    lda_vocab = LdaVocabulary.build(docs)
    corpus = [lda_vocab.encode(d) for d in docs]
    model = fit_lda(corpus, n_topics, alpha=alpha, eta=eta, iterations=iterations, seed=seed,
                    vocab_size=len(lda_vocab), restarts=restarts)
    dists = model.doc_distributions()
    out = {}
    row = 0
    for r, doc in zip(records, corpus):
        if doc:
            out[r.image_id] = TopicAssignment(int(np.argmax(dists[row])), dists[row])
            row += 1
        else:
            out[r.image_id] = infer_topic_label(doc, model)
    return model, lda_vocab, out


def stack_features(manifest, records):
    if not records:
        return np.zeros((0, manifest.m, manifest.D))
    return np.stack([manifest.features_for(r) for r in records])


def topic_vectors(manifest, records, assignments, source="probe", probe=None, n_topics=None):
    """Topic inputs for ``records``: probe predictions or LDA mixtures."""
    if source == "probe":
        if probe is None:
            raise DataError("topic source 'probe' needs a trained probe")
        return predict_topic_vector(stack_features(manifest, records), probe)
    if source == "lda":
        missing = [r.image_id for r in records if r.image_id not in assignments]
        if missing:
            raise DataError(f"no topic assignment for image {missing[0]!r}")
        return np.stack([assignments[r.image_id].distribution for r in records])
    if source == "manifest":
        out = []
        for r in records:
            if r.topic_dist is None:
                raise DataError(f"image {r.image_id!r} has no topic_dist in the manifest")
            out.append(r.topic_dist)
        return np.asarray(out, dtype=np.float64)
    raise DataError(f"unknown topic source {source!r}")


def fit_topic_probe(manifest, records, assignments, n_topics, epochs=300, lr=0.05):
    labels = [assignments[r.image_id].label for r in records]
    return train_topic_probe(stack_features(manifest, records), labels, n_topics, epochs, lr)


def build_caption_data(manifest, records, vocab, attr_vocab, topics, top_k=10, max_len=16):
    """Assemble :class:`CaptionData`; captions longer than ``max_len`` are cut."""
    if not records:
        raise DataError("no records selected")
    features = stack_features(manifest, records)
    attributes = np.stack([oracle_attributes(r, attr_vocab, top_k) for r in records])
    examples = []
    for i, r in enumerate(records):
        if not r.captions:
            raise DataError(f"image {r.image_id!r} has no captions")
        for cap in r.captions[:5]:
            ids = vocab.encode(cap)[:max_len]
            if ids:
                examples.append((i, ids))
    return CaptionData(
        image_ids=[r.image_id for r in records],
        features=features,
        topics=np.asarray(topics, dtype=np.float64),
        attributes=attributes,
        examples=examples,
        references=[list(r.captions[:5]) for r in records],
    )


@dataclass
class PreparedData:
    """Everything a caption model needs for one manifest and seed."""

    vocab: Vocabulary
    attributes: AttributeVocabulary
    train: CaptionData
    val: CaptionData
    n_topics: int
    probe: object = None
    probe_accuracy: float = float("nan")


def prepare_data(manifest, n_topics, seed=0, topic_source="probe", lda_alpha=0.1, lda_eta=0.01,
                 lda_iterations=300, lda_restarts=5, probe_epochs=300, probe_lr=0.05,
                 min_count=1, n_attributes=256, top_k=10, max_len=16, merge_map=None,
                 attribute_source="auto"):
    """Topics, vocabularies and train/val caption data from a manifest."""
    train_recs, val_recs = manifest.split("train"), manifest.split("val")
    if not train_recs or not val_recs:
        raise DataError("manifest needs both a 'train' and a 'val' split")
    vocab, attrs = build_vocabularies(
        train_recs, min_count, n_attributes, merge_map, attribute_source,
        manifest.header.get("attribute_names"),
    )
    probe, acc = None, float("nan")
    assignments = {}
    if topic_source in ("probe", "lda"):
        _, _, assignments = fit_caption_topics(
            manifest.records, n_topics, lda_alpha, lda_eta, lda_iterations, lda_restarts, seed
        )
    if topic_source == "probe":
        probe, acc = fit_topic_probe(manifest, train_recs, assignments, n_topics, probe_epochs, probe_lr)

    def data(recs):
        topics = topic_vectors(manifest, recs, assignments, topic_source, probe)
        return build_caption_data(manifest, recs, vocab, attrs, topics, top_k, max_len)

    return PreparedData(vocab, attrs, data(train_recs), data(val_recs), n_topics, probe, acc)


def model_config(prepared, variant, topic_init=True, **dims):
    return ModelConfig.for_variant(
        variant,
        topic_init=topic_init,
        vocab_size=len(prepared.vocab),
        n_attributes=len(prepared.attributes),
        topic_dim=prepared.n_topics,
        feature_dim=prepared.train.features.shape[-1],
        **dims,
    )


def train_and_evaluate(prepared, variant, train_config, topic_init=True, smooth=False, **dims):
    """Train one variant on the train split; returns ``(model, result, report)``."""
    model = CaptionModel(model_config(prepared, variant, topic_init, **dims), seed=train_config.seed)
    result = train(model, prepared.train, train_config)
    report = evaluate(model, prepared.val, prepared.vocab, train_config.max_len, smooth=smooth)
    return model, result, report


def run_ablation(prepared, train_config, topic_init=True, variants=None, **dims):
    """Train every variant from the same seed; returns ``{variant: EvalReport}``."""
    out = {}
    for variant in variants or VARIANTS:
        _, _, out[variant] = train_and_evaluate(prepared, variant, train_config, topic_init, **dims)
    return out
