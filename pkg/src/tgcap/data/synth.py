"""Synthetic images-as-region-features with topic-determined captions.

Every image belongs to one planted topic. Topic ``k`` owns a scene word, a
verb and a share of the object words. An image holds one or two objects of
its own topic plus visually louder distractor objects borrowed from other
topics, a scene region, and background noise. Objects carry a colour
signature, and captions name the colour of each topic object, so a model
must both pick the topic-relevant region and read that region (not the
region average) to get the words right.
"""

import os
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .io import DatasetManifest, FeatureRecord, ManifestRecord, save_features, save_manifest

OBJECTS = (
    "dog cat horse bird cow sheep bear zebra giraffe elephant boat car bus train "
    "truck plane bike kite pizza cake laptop phone clock vase chair couch bed bench "
    "umbrella surfboard skateboard frisbee"
).split()
COLORS = "red blue green yellow white black brown orange".split()
SCENES = (
    "park street kitchen beach field room river city farm yard lake road market "
    "hill garden station"
).split()
VERBS = (
    "standing sitting running resting playing waiting parked lying walking flying "
    "floating shining sleeping posing jumping leaning"
).split()
TEMPLATES_ONE = (
    "a {c} {o} {v} in the {s}",
    "the {c} {o} is {v} in the {s}",
    "a {c} {o} {v} at the {s}",
)
TEMPLATES_TWO = (
    "a {c} {o} and a {c2} {o2} {v} in the {s}",
    "the {c} {o} and the {c2} {o2} are {v} in the {s}",
)
MAX_CAPTION_LEN = 12


@dataclass
class SyntheticConfig:
    seed: int = 0
    n_images: int = 500
    n_topics: int = 8
    n_objects: int = 16
    n_colors: int = 4
    m: int = 9
    D: int = 32
    captions_per_image: int = 5
    distractors: int = 2
    second_object_prob: float = 0.3
    noise: float = 0.3
    val_fraction: float = 0.2
    grid: tuple = None

    def validate(self):
        for name in ("n_images", "n_topics", "n_objects", "n_colors", "m", "D", "captions_per_image"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_objects > len(OBJECTS):
            raise ConfigError(f"n_objects={self.n_objects} exceeds the {len(OBJECTS)} object words")
        if self.n_topics > min(len(SCENES), len(VERBS)):
            raise ConfigError(f"n_topics={self.n_topics} exceeds the available scene/verb words")
        if self.n_colors > len(COLORS):
            raise ConfigError(f"n_colors={self.n_colors} exceeds {len(COLORS)}")
        if self.n_objects < self.n_topics:
            raise ConfigError("need at least one object word per topic (n_objects >= n_topics)")
        if self.m < 2 + self.distractors + 1:
            raise ConfigError(
                f"m={self.m} regions cannot hold two objects, {self.distractors} distractors and a scene"
            )
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.grid is not None and self.grid[0] * self.grid[1] != self.m:
            raise ConfigError(f"grid {self.grid} does not multiply to m={self.m}")


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    features: dict  # image_id -> (m, D) array
    planted: dict   # image_id -> topic index
    objects: list   # attribute names (object words)

    def write(self, out_dir, manifest_name="manifest.jsonl"):
        feat_dir = os.path.join(out_dir, "features")
        os.makedirs(feat_dir, exist_ok=True)
        for rec in self.manifest.records:
            save_features(os.path.join(out_dir, rec.features), FeatureRecord(rec.image_id, self.features[rec.image_id]))
        path = os.path.join(out_dir, manifest_name)
        save_manifest(path, self.manifest)
        with open(os.path.join(out_dir, "planted_topics.tsv"), "w", encoding="utf-8") as fh:
            for rec in self.manifest.records:
                fh.write(f"{rec.image_id}\t{self.planted[rec.image_id]}\n")
        return path


def _grid_for(m):
    w = int(round(np.sqrt(m)))
    return (w, m // w) if w * (m // w) == m else (m, 1)


def generate_synthetic_dataset(config=None, **overrides):
    """Build a seeded dataset; identical configs give identical outputs."""
    cfg = config or SyntheticConfig()
    if overrides:
        cfg = SyntheticConfig(**{**cfg.__dict__, **overrides})
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    K, D = cfg.n_topics, cfg.D
    objects = OBJECTS[:cfg.n_objects]
    colors = COLORS[:cfg.n_colors]
    owner = [j % K for j in range(cfg.n_objects)]
    owned = [[j for j in range(cfg.n_objects) if owner[j] == k] for k in range(K)]

    def unit(n):
        v = rng.normal(size=(n, D))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    obj_sig = 3.0 * unit(cfg.n_objects)
    color_sig = 2.0 * unit(cfg.n_colors)
    scene_sig = 3.0 * unit(K)

    records, feats, planted = [], {}, {}
    n_val = int(round(cfg.n_images * cfg.val_fraction))
    n_train = cfg.n_images - n_val
    width = len(str(cfg.n_images - 1))
    for idx in range(cfg.n_images):
        image_id = f"img{idx:0{width}d}"
        k = int(rng.integers(K))
        mine = owned[k]
        main = [int(rng.choice(mine))]
        if len(mine) > 1 and rng.random() < cfg.second_object_prob:
            main.append(int(rng.choice([j for j in mine if j != main[0]])))
            main.sort()
        others = [j for j in range(cfg.n_objects) if owner[j] != k]
        n_dis = min(cfg.distractors, len(others))
        distract = [int(j) for j in rng.choice(others, size=n_dis, replace=False)] if n_dis else []
        col = {j: int(rng.integers(cfg.n_colors)) for j in main + distract}

        regions = rng.normal(scale=cfg.noise, size=(cfg.m, D))
        slots = rng.permutation(cfg.m)
        regions[slots[0]] += scene_sig[k]
        for s, j in zip(slots[1:], main + distract):
            gain = 1.0 if j in main else 1.5
            regions[s] += gain * (obj_sig[j] + color_sig[col[j]])

        words = {"v": VERBS[k], "s": SCENES[k], "o": objects[main[0]], "c": colors[col[main[0]]]}
        if len(main) == 2:
            words.update(o2=objects[main[1]], c2=colors[col[main[1]]])
            templates = TEMPLATES_TWO
        else:
            templates = TEMPLATES_ONE
        caps = [templates[int(rng.integers(len(templates)))].format(**words)
                for _ in range(cfg.captions_per_image)]
        present = sorted(objects[j] for j in main + distract)
        records.append(ManifestRecord(
            image_id=image_id,
            features=f"features/{image_id}.tgfv",
            captions=caps,
            attributes=present,
            split="train" if idx < n_train else "val",
        ))
        feats[image_id] = regions
        planted[image_id] = k

    header = {
        "m": cfg.m,
        "D": cfg.D,
        "grid": list(cfg.grid or _grid_for(cfg.m)),
        "attribute_names": list(objects),
        "synthetic": {
            "seed": cfg.seed,
            "n_topics": K,
            "n_objects": cfg.n_objects,
            "n_colors": cfg.n_colors,
            "captions_per_image": cfg.captions_per_image,
        },
    }
    manifest = DatasetManifest(header, records, _cache=dict(feats))
    return SyntheticDataset(manifest, feats, planted, list(objects))
