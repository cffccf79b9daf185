from .lda import (
    LdaModel,
    LdaVocabulary,
    TopicAssignment,
    best_match_purity,
    caption_documents,
    fit_lda,
    infer_topic_label,
    load_lda_model,
    load_topic_assignments,
    purity,
    save_lda_model,
    save_topic_assignments,
)
from .probe import TopicProbe, predict_topic_vector, train_topic_probe

__all__ = [
    "LdaModel",
    "LdaVocabulary",
    "TopicAssignment",
    "TopicProbe",
    "best_match_purity",
    "caption_documents",
    "fit_lda",
    "infer_topic_label",
    "load_lda_model",
    "load_topic_assignments",
    "predict_topic_vector",
    "purity",
    "save_lda_model",
    "save_topic_assignments",
    "train_topic_probe",
]
