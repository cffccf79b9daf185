"""Command-line interface: ``tgcap <command> [options]``.

Settings resolve in increasing priority: built-in defaults, a ``--config``
file of ``key = value`` lines, ``TGCAP_<KEY>`` environment variables, then
command-line flags. Every output lands under ``--out-dir`` in this layout::

    data/manifest.jsonl, data/features/, data/planted_topics.tsv   (synth)
    topics/lda.tgld, topics/lda_vocab.txt, topics/assignments.tsv,
    topics/probe.tgcp                                               (lda)
    vocab/words.txt, vocab/attributes.txt                           (vocab)
    model/model.tgcp, model/model.json, model/loss.csv              (train)
    captions.tsv                                                    (caption)
    eval/report.txt, eval/per_image.tsv                             (eval)
    attention/<image_id>.txt, attention/<image_id>_step<t>.pgm      (export-attention)
    ablation/table.tsv                                              (ablate)

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 numeric failure.
"""

import argparse
import json
import logging
import os
import statistics
import sys

import numpy as np

from . import pipeline
from .autodiff import load_checkpoint, save_checkpoint
from .data import (
    AttributeVocabulary,
    SyntheticConfig,
    Vocabulary,
    generate_synthetic_dataset,
    load_manifest,
    read_merge_map,
)
from .decoder import VARIANTS, CaptionModel, ModelConfig
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    VocabularyError,
)
from .evaluation import METRICS, evaluate
from .topics import (
    LdaVocabulary,
    TopicProbe,
    best_match_purity,
    load_topic_assignments,
    save_lda_model,
    save_topic_assignments,
)
from .training import TrainConfig, evaluate_nll, train

log = logging.getLogger("tgcap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def _int_list(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


def _str_list(text):
    return [x for x in str(text).replace(",", " ").split() if x]


# name -> (type, default, help)
OPTIONS = {
    "seed": (int, 0, "random seed shared by every stage"),
    "out_dir": (str, "run", "root directory for all outputs"),
    "manifest": (str, None, "dataset manifest (default: <out-dir>/data/manifest.jsonl)"),
    "log_level": (str, "WARNING", "logging level"),
    # synth
    "n_images": (int, 500, "number of synthetic images"),
    "n_objects": (int, 16, "object words (one attribute each)"),
    "n_colors": (int, 4, "colour words"),
    "m": (int, 9, "regions per image"),
    "D": (int, 32, "feature width"),
    "captions_per_image": (int, 5, "captions per synthetic image"),
    "distractors": (int, 2, "off-topic objects per synthetic image"),
    "noise": (float, 0.3, "region noise scale"),
    "val_fraction": (float, 0.2, "share of images in the val split"),
    # topics
    "n_topics": (int, 8, "number of LDA topics"),
    "lda_alpha": (float, 0.1, "document-topic Dirichlet prior"),
    "lda_eta": (float, 0.01, "topic-word Dirichlet prior"),
    "lda_iterations": (int, 300, "Gibbs sweeps per chain"),
    "lda_restarts": (int, 5, "chains; the most likely one is kept"),
    "probe_epochs": (int, 300, "topic probe training epochs"),
    "probe_lr": (float, 0.05, "topic probe learning rate"),
    "topic_source": (str, "probe", "topic vectors fed to the model: probe, lda or manifest"),
    # vocab
    "min_count": (int, 1, "minimum word count for the caption vocabulary"),
    "n_attributes": (int, 256, "attribute vocabulary size"),
    "attribute_source": (str, "auto", "attributes from captions, annotations or auto"),
    "merge_map": (str, None, "surface_word<TAB>attribute file"),
    "top_k": (int, 10, "attributes kept per image"),
    # model
    "variant": (str, "t-va", "one of base, t-v, t-a, t-va"),
    "no_topic_init": (_bool, False, "drop the topic from the first LSTM input"),
    "hidden_dim": (int, 128, "LSTM width"),
    "input_dim": (int, 128, "LSTM input width"),
    "word_dim": (int, 64, "word embedding width"),
    "proj_dim": (int, 256, "attention projection width"),
    # training
    "lr": (float, 1e-3, "Adam learning rate"),
    "batch_size": (int, 128, "captions per mini-batch"),
    "dropout": (float, 0.5, "dropout rate"),
    "reg": (float, 1e-5, "L2 weight"),
    "epochs": (int, 10, "training epochs"),
    "max_len": (int, 16, "maximum caption length"),
    "clip_norm": (_optional_float, None, "global gradient norm clip"),
    "patience": (int, None, "stop after this many epochs without improvement"),
    # caption / eval / attention
    "split": (str, None, "manifest split to use"),
    "images": (_str_list, None, "comma-separated image ids"),
    "smooth": (_bool, False, "add-one smoothing for BLEU orders above 1"),
    "checkpoint": (str, None, "checkpoint path (default: <out-dir>/model/model.tgcp)"),
    # ablate
    "seeds": (_int_list, None, "seeds for ablate (default: --seed)"),
}

COMMANDS = {
    "synth": ["n_images", "n_topics", "n_objects", "n_colors", "m", "D", "captions_per_image",
              "distractors", "noise", "val_fraction"],
    "lda": ["n_topics", "lda_alpha", "lda_eta", "lda_iterations", "lda_restarts",
            "probe_epochs", "probe_lr"],
    "vocab": ["min_count", "n_attributes", "attribute_source", "merge_map"],
    "train": ["variant", "no_topic_init", "hidden_dim", "input_dim", "word_dim", "proj_dim",
              "lr", "batch_size", "dropout", "reg", "epochs", "max_len", "clip_norm", "patience",
              "topic_source", "top_k"],
    "caption": ["split", "images", "checkpoint", "max_len"],
    "eval": ["split", "images", "smooth", "checkpoint", "max_len"],
    "export-attention": ["split", "images", "checkpoint", "max_len"],
    "ablate": ["seeds", "n_topics", "lda_alpha", "lda_eta", "lda_iterations", "lda_restarts",
               "probe_epochs", "probe_lr", "topic_source", "min_count", "n_attributes",
               "attribute_source", "merge_map", "top_k", "no_topic_init", "hidden_dim",
               "input_dim", "word_dim", "proj_dim", "lr", "batch_size", "dropout", "reg",
               "epochs", "max_len", "clip_norm", "patience", "smooth"],
}
COMMON = ["seed", "out_dir", "manifest", "log_level"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="tgcap", description="Topic-guided attention image captioning.")
    parser.add_argument("--config", help="key = value settings file")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for command, names in COMMANDS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=argparse.SUPPRESS, help="key = value settings file")
        for name in COMMON + names:
            typ, default, text = OPTIONS[name]
            flag = "--" + name.replace("_", "-")
            if "(default" not in text:
                text = f"{text} (default: {default})"
            if typ is _bool:
                p.add_argument(flag, nargs="?", const="true", default=None, help=text)
            else:
                p.add_argument(flag, default=None, help=text)
    return parser


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = value
    return values


def resolve_settings(command, args, environ=None):
    """Merge defaults, config file, ``TGCAP_*`` variables and flags."""
    environ = os.environ if environ is None else environ
    names = COMMON + COMMANDS[command]
    layers = [("default", {n: OPTIONS[n][1] for n in names})]
    if args.config:
        layers.append((args.config, read_config_file(args.config)))
    env = {}
    for n in names:
        key = "TGCAP_" + n.upper()
        if key in environ:
            env[n] = environ[key]
    layers.append(("environment", env))
    layers.append(("flag", {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}))
    out = {}
    for source, values in layers:
        for n, value in values.items():
            if n not in names:
                continue  # settings for other commands may share one config file
            if source == "default" or value is None:
                out[n] = value
                continue
            try:
                out[n] = OPTIONS[n][0](value)
            except ValueError as exc:
                where = "--" + n.replace("_", "-") if source == "flag" else source
                raise ConfigError(f"bad value {value!r} for {n} ({where}): {exc}") from exc
    return argparse.Namespace(**out)


# ---------------------------------------------------------------- helpers

def _path(s, *parts):
    return os.path.join(s.out_dir, *parts)


def _manifest(s):
    path = s.manifest or _path(s, "data", "manifest.jsonl")
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    return load_manifest(path)


def _require(path, hint):
    if not os.path.exists(path):
        raise DataError(f"missing {path} (run '{hint}' first)")
    return path


def _train_config(s):
    cfg = TrainConfig(lr=s.lr, batch_size=s.batch_size, dropout=s.dropout, reg=s.reg,
                      epochs=s.epochs, seed=s.seed, max_len=s.max_len, clip_norm=s.clip_norm,
                      patience=s.patience)
    try:
        cfg.validate()
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _check_choice(name, value, choices):
    if value not in choices:
        raise ConfigError(f"--{name.replace('_', '-')} must be one of {', '.join(choices)}, got {value!r}")


def _dims(s):
    return dict(hidden_dim=s.hidden_dim, input_dim=s.input_dim, word_dim=s.word_dim,
                spatial_proj=s.proj_dim, spatial_mlp=s.proj_dim, semantic_proj=s.proj_dim)


def _load_probe(path, manifest, n_topics):
    probe = TopicProbe(manifest.D, n_topics)
    probe.store.load_state_dict(load_checkpoint(path), source=path)
    return probe


def _topics_for(s, manifest, records, source, n_topics):
    if source == "manifest":
        return pipeline.topic_vectors(manifest, records, {}, "manifest")
    if source == "lda":
        assignments = load_topic_assignments(_require(_path(s, "topics", "assignments.tsv"), "lda"))
        return pipeline.topic_vectors(manifest, records, assignments, "lda")
    probe = _load_probe(_require(_path(s, "topics", "probe.tgcp"), "lda"), manifest, n_topics)
    return pipeline.topic_vectors(manifest, records, {}, "probe", probe)


def _vocabularies(s):
    vocab = Vocabulary.load(_require(_path(s, "vocab", "words.txt"), "vocab"))
    attrs = AttributeVocabulary.load(_require(_path(s, "vocab", "attributes.txt"), "vocab"))
    return vocab, attrs


def _load_model(s):
    ckpt = s.checkpoint or _path(s, "model", "model.tgcp")
    meta_path = os.path.splitext(ckpt)[0] + ".json"
    _require(ckpt, "train")
    _require(meta_path, "train")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    model = CaptionModel(ModelConfig(**meta["model"]), seed=0)
    model.store.load_state_dict(load_checkpoint(ckpt), source=ckpt)
    return model, meta


def _select(s, manifest, default_split="val"):
    if s.images:
        index = manifest.by_id()
        missing = [i for i in s.images if i not in index]
        if missing:
            raise DataError(f"image {missing[0]!r} is not in the manifest")
        return [index[i] for i in s.images]
    records = manifest.split(s.split or default_split)
    if not records:
        raise DataError(f"split {s.split or default_split!r} is empty")
    return records


def _model_inputs(s, manifest, records, meta, attrs):
    features = pipeline.stack_features(manifest, records)
    topics = _topics_for(s, manifest, records, meta["topic_source"], meta["model"]["topic_dim"])
    attributes = np.stack([pipeline.oracle_attributes(r, attrs, meta["top_k"]) for r in records])
    return features, topics, attributes


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands

def cmd_synth(s):
    cfg = SyntheticConfig(seed=s.seed, n_images=s.n_images, n_topics=s.n_topics,
                          n_objects=s.n_objects, n_colors=s.n_colors, m=s.m, D=s.D,
                          captions_per_image=s.captions_per_image, distractors=s.distractors,
                          noise=s.noise, val_fraction=s.val_fraction)
    ds = generate_synthetic_dataset(cfg)
    path = ds.write(_path(s, "data"))
    print(f"wrote {len(ds.manifest.records)} images to {path}")


def cmd_lda(s):
    manifest = _manifest(s)
    train_recs = manifest.split("train") or manifest.records
    model, lda_vocab, assignments = pipeline.fit_caption_topics(
        manifest.records, s.n_topics, s.lda_alpha, s.lda_eta, s.lda_iterations, s.lda_restarts, s.seed
    )
    probe, acc = pipeline.fit_topic_probe(manifest, train_recs, assignments, s.n_topics,
                                          s.probe_epochs, s.probe_lr)
    out = _path(s, "topics")
    os.makedirs(out, exist_ok=True)
    save_lda_model(os.path.join(out, "lda.tgld"), model)
    lda_vocab.save(os.path.join(out, "lda_vocab.txt"))
    save_topic_assignments(os.path.join(out, "assignments.tsv"), assignments)
    save_checkpoint(os.path.join(out, "probe.tgcp"), probe.store.state_dict())
    print(f"topics: K={s.n_topics} vocabulary={len(lda_vocab)} log-likelihood={model.log_likelihood:.3f}")
    print(f"topic probe train accuracy: {acc:.4f}")
    planted = _path(s, "data", "planted_topics.tsv")
    if os.path.exists(planted):
        truth = {}
        with open(planted, encoding="utf-8") as fh:
            for line in fh:
                image_id, k = line.split()
                truth[image_id] = int(k)
        ids = [r.image_id for r in manifest.records if r.image_id in truth]
        if ids:
            p = best_match_purity([assignments[i].label for i in ids], [truth[i] for i in ids])
            print(f"purity against planted topics: {p:.4f}")


def cmd_vocab(s):
    manifest = _manifest(s)
    records = manifest.split("train") or manifest.records
    merge = read_merge_map(s.merge_map) if s.merge_map else None
    _check_choice("attribute_source", s.attribute_source, ("auto", "captions", "annotations"))
    vocab, attrs = pipeline.build_vocabularies(
        records, s.min_count, s.n_attributes, merge, s.attribute_source,
        manifest.header.get("attribute_names"),
    )
    out = _path(s, "vocab")
    os.makedirs(out, exist_ok=True)
    vocab.save(os.path.join(out, "words.txt"))
    attrs.save(os.path.join(out, "attributes.txt"))
    print(f"vocabulary: {len(vocab)} words, {len(attrs)} attributes")


def cmd_train(s):
    _check_choice("variant", s.variant, tuple(VARIANTS))
    _check_choice("topic_source", s.topic_source, ("probe", "lda", "manifest"))
    config = _train_config(s)
    manifest = _manifest(s)
    vocab, attrs = _vocabularies(s)
    n_topics = _n_topics(s, manifest)
    records = manifest.split("train")
    if not records:
        raise DataError("manifest has no 'train' split")
    topics = _topics_for(s, manifest, records, s.topic_source, n_topics)
    data = pipeline.build_caption_data(manifest, records, vocab, attrs, topics, s.top_k, s.max_len)
    model_cfg = ModelConfig.for_variant(
        s.variant, topic_init=not s.no_topic_init, vocab_size=len(vocab), n_attributes=len(attrs),
        topic_dim=n_topics, feature_dim=manifest.D, **_dims(s),
    )
    model = CaptionModel(model_cfg, seed=s.seed)
    out = _path(s, "model")
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "model.tgcp")
    meta = {"model": model_cfg.to_dict(), "train": config.to_dict(),
            "topic_source": s.topic_source, "top_k": s.top_k}
    _write(os.path.join(out, "model.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    result = train(model, data, config, checkpoint_path=ckpt)
    if config.epochs == 0:
        save_checkpoint(ckpt, model.store.state_dict())
    result.write_csv(os.path.join(out, "loss.csv"))
    print(f"trained {s.variant} for {len(result.epoch_losses)} epochs; "
          f"final loss {result.epoch_losses[-1] if result.epoch_losses else float('nan'):.5f}")
    print(f"train per-token NLL {evaluate_nll(model, data):.5f}")


def _n_topics(s, manifest):
    if s.topic_source == "manifest":
        dists = [r.topic_dist for r in manifest.records if r.topic_dist is not None]
        if not dists:
            raise DataError("manifest records carry no topic_dist")
        return len(dists[0])
    if s.topic_source == "lda":
        assignments = load_topic_assignments(_require(_path(s, "topics", "assignments.tsv"), "lda"))
        return len(next(iter(assignments.values())).distribution)
    state = load_checkpoint(_require(_path(s, "topics", "probe.tgcp"), "lda"))
    return state["topic_probe.b"].shape[0]


def cmd_caption(s):
    manifest = _manifest(s)
    model, meta = _load_model(s)
    vocab, attrs = _vocabularies(s)
    records = _select(s, manifest)
    features, topics, attributes = _model_inputs(s, manifest, records, meta, attrs)
    outputs = model.greedy_decode(features, topics, attributes, s.max_len)
    lines = [f"{r.image_id}\t{vocab.decode(o)}" for r, o in zip(records, outputs)]
    _write(_path(s, "captions.tsv"), "\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_eval(s):
    manifest = _manifest(s)
    model, meta = _load_model(s)
    vocab, attrs = _vocabularies(s)
    records = _select(s, manifest)
    topics = _topics_for(s, manifest, records, meta["topic_source"], meta["model"]["topic_dim"])
    data = pipeline.build_caption_data(manifest, records, vocab, attrs, topics, meta["top_k"], s.max_len)
    report = evaluate(model, data, vocab, s.max_len, smooth=s.smooth)
    _write(_path(s, "eval", "report.txt"), report.format())
    _write(_path(s, "eval", "per_image.tsv"), report.format_dump())
    print(report.format(), end="")


def _pgm(weights, grid):
    rows, cols = grid
    top = float(weights.max()) or 1.0
    pixels = np.rint(255.0 * weights.reshape(rows, cols) / top).astype(int)
    body = "\n".join(" ".join(str(v) for v in row) for row in pixels)
    return f"P2\n{cols} {rows}\n255\n{body}\n"


def cmd_export_attention(s):
    manifest = _manifest(s)
    model, meta = _load_model(s)
    vocab, attrs = _vocabularies(s)
    records = _select(s, manifest)
    grid = manifest.grid
    if grid[0] * grid[1] != manifest.m:
        raise DataError(f"manifest grid {grid} does not match m={manifest.m}")
    features, topics, attributes = _model_inputs(s, manifest, records, meta, attrs)
    _, traces = model.greedy_decode(features, topics, attributes, s.max_len, record_attention=True)
    out = _path(s, "attention")
    os.makedirs(out, exist_ok=True)
    for rec, trace in zip(records, traces):
        lines = [f"# image {rec.image_id} grid {grid[0]}x{grid[1]} attributes {len(attrs)}",
                 "step\ttoken\talpha\tbeta"]
        for t, (token, alpha, beta) in enumerate(trace, 1):
            word = vocab.itos[token] if token < len(vocab.itos) else str(token)
            lines.append(f"{t}\t{word}\t{' '.join(f'{a:.6f}' for a in alpha)}\t"
                         f"{' '.join(f'{b:.6f}' for b in beta)}")
            _write(os.path.join(out, f"{rec.image_id}_step{t}.pgm"), _pgm(alpha, grid))
        _write(os.path.join(out, f"{rec.image_id}.txt"), "\n".join(lines) + "\n")
    print(f"wrote attention for {len(records)} images to {out}")


def format_ablation_table(rows):
    """``rows`` is a list of ``(label, variant, scores)``; one TSV line each."""
    lines = ["seed\tvariant\t" + "\t".join(METRICS)]
    for label, variant, scores in rows:
        lines.append(f"{label}\t{variant}\t" + "\t".join(f"{scores[m]:.4f}" for m in METRICS))
    return "\n".join(lines) + "\n"


def cmd_ablate(s):
    _check_choice("topic_source", s.topic_source, ("probe", "lda", "manifest"))
    _check_choice("attribute_source", s.attribute_source, ("auto", "captions", "annotations"))
    manifest = _manifest(s)
    seeds = s.seeds or [s.seed]
    merge = read_merge_map(s.merge_map) if s.merge_map else None
    rows = []
    per_variant = {v: [] for v in VARIANTS}
    for seed in seeds:
        s.seed = seed
        config = _train_config(s)
        prepared = pipeline.prepare_data(
            manifest, s.n_topics, seed, s.topic_source, s.lda_alpha, s.lda_eta, s.lda_iterations,
            s.lda_restarts, s.probe_epochs, s.probe_lr, s.min_count, s.n_attributes, s.top_k,
            s.max_len, merge, s.attribute_source,
        )
        reports = pipeline.run_ablation(prepared, config, not s.no_topic_init, **_dims(s))
        for variant in VARIANTS:
            rows.append((str(seed), variant, reports[variant].scores))
            per_variant[variant].append(reports[variant].scores)
    if len(seeds) > 1:
        for variant in VARIANTS:
            med = {m: statistics.median(sc[m] for sc in per_variant[variant]) for m in METRICS}
            rows.append(("median", variant, med))
    table = format_ablation_table(rows)
    _write(_path(s, "ablation", "table.tsv"), table)
    print(table, end="")


HANDLERS = {
    "synth": cmd_synth,
    "lda": cmd_lda,
    "vocab": cmd_vocab,
    "train": cmd_train,
    "caption": cmd_caption,
    "eval": cmd_eval,
    "export-attention": cmd_export_attention,
    "ablate": cmd_ablate,
}


def main(argv=None, environ=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("tgcap: a command is required (" + ", ".join(COMMANDS) + ")")
        settings = resolve_settings(args.command, args, environ)
        logging.basicConfig(level=getattr(logging, str(settings.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        HANDLERS[args.command](settings)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionError, VocabularyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
