from .attributes import (
    AttributeProbe,
    AttributeVocabulary,
    attributes_from_names,
    build_attribute_vocabulary,
    extract_attribute_targets,
    predict_attributes,
    read_merge_map,
    select_top_k,
    train_attribute_probe,
)
from .io import (
    DatasetManifest,
    FeatureRecord,
    ManifestRecord,
    load_features,
    load_manifest,
    save_features,
    save_manifest,
)
from .synth import SyntheticConfig, SyntheticDataset, generate_synthetic_dataset
from .text import STOPWORDS, content_tokens, tokenize
from .vocab import END, PAD, START, UNK, Vocabulary

build_vocabulary = Vocabulary.build
