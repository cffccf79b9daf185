"""Regularized caption NLL, dropout, Adam, and the mini-batch training loop."""

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tape, backward, ops, save_checkpoint
from .decoder import END, PAD, START, lstm_cell
from .errors import ContractError, DataError, NumericError
from .optim import adam_update

log = logging.getLogger(__name__)

dropout = ops.dropout


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    dropout: float = 0.5
    reg: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    seed: int = 0
    max_len: int = 16
    clip_norm: Optional[float] = None
    patience: Optional[int] = None

    def validate(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if self.reg < 0:
            raise ContractError("reg (lambda) must be non-negative")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class CaptionData:
    """Per-image inputs plus one training example per (image, caption) pair."""

    image_ids: list
    features: np.ndarray     # (N, m, D)
    topics: np.ndarray       # (N, K)
    attributes: np.ndarray   # (N, n)
    examples: list           # (image index, token ids without START/END)
    references: list = field(default_factory=list)  # per image, raw caption strings

    def __post_init__(self):
        n = len(self.image_ids)
        if not (len(self.features) == len(self.topics) == len(self.attributes) == n):
            raise DataError("features, topics and attributes must cover the same images")
        for img, tokens in self.examples:
            if not 0 <= img < n:
                raise DataError(f"example refers to image index {img} of {n}")
            if not tokens:
                raise DataError(f"empty caption for image {self.image_ids[img]!r}")

    def batch(self, example_indices):
        rows = [self.examples[i] for i in example_indices]
        img = np.array([r[0] for r in rows], dtype=np.int64)
        return Batch(self.features[img], self.topics[img], self.attributes[img], [r[1] for r in rows])


class Batch:
    def __init__(self, features, topics, attributes, sequences):
        if not sequences:
            raise ContractError("empty batch")
        if any(len(s) == 0 for s in sequences):
            raise ContractError("every caption must contain at least one token")
        self.features = np.asarray(features, dtype=np.float64)
        self.topics = np.asarray(topics, dtype=np.float64)
        self.attributes = np.asarray(attributes, dtype=np.float64)
        self.sequences = [list(s) for s in sequences]
        steps = max(len(s) for s in self.sequences) + 1
        B = len(self.sequences)
        self.inputs = np.full((B, steps), PAD, dtype=np.int64)
        self.targets = np.full((B, steps), PAD, dtype=np.int64)
        self.mask = np.zeros((B, steps))
        for b, seq in enumerate(self.sequences):
            L = len(seq)
            self.inputs[b, 0] = START
            self.inputs[b, 1:L + 1] = seq
            self.targets[b, :L] = seq
            self.targets[b, L] = END
            self.mask[b, :L + 1] = 1.0

    def __len__(self):
        return len(self.sequences)

    @property
    def n_tokens(self):
        return int(self.mask.sum())


def regularizer(store, lam):
    if lam == 0:
        return None
    return ops.scale(ops.add_scalars([ops.sum_squares(p) for _, p in store.items()]), lam)


def caption_loss(model, batch, lam=0.0, dropout_rate=0.0, rng=None, training=False):
    """Teacher-forced negative log-likelihood averaged over captions, plus L2.

    Returns ``(loss, stats)`` where ``stats`` holds ``nll`` (the averaged
    data term), ``reg`` and ``tokens`` (supervised positions, END included).
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    drop = None
    if training and dropout_rate > 0:
        if rng is None:
            raise ContractError("dropout in training mode needs an rng")

        def drop(x):
            return ops.dropout(x, dropout_rate, rng, True)

    spatial, semantic = model.contexts(batch.features, batch.topics, batch.attributes)
    state = model.init_step(batch.topics, drop)
    hs, a_hats = [], []
    for t in range(batch.inputs.shape[1]):
        _, v_hat = spatial.attend(state.h)
        _, a_hat = semantic.attend(state.h)
        x = model.step_input(batch.inputs[:, t], v_hat, drop)
        state = lstm_cell(x, state, model.lstm)
        hs.append(state.h)
        a_hats.append(a_hat)
    logits = model.output_logits(ops.stack(hs), ops.stack(a_hats), drop)
    picked = ops.take_last(ops.log_softmax(logits), batch.targets)
    nll = ops.scale(ops.total(ops.scale(picked, batch.mask)), -1.0 / len(batch))
    reg = regularizer(model.store, lam)
    loss = nll if reg is None else ops.add_scalars([nll, reg])
    stats = {
        "nll": float(nll.value),
        "reg": 0.0 if reg is None else float(reg.value),
        "tokens": batch.n_tokens,
        "token_nll": float(nll.value) * len(batch) / batch.n_tokens,
    }
    return loss, stats


def evaluate_nll(model, data, batch_size=64):
    """Per-token NLL of ``data`` in evaluation mode (no dropout, no tape)."""
    total = 0.0
    tokens = 0
    for start in range(0, len(data.examples), batch_size):
        batch = data.batch(range(start, min(start + batch_size, len(data.examples))))
        _, stats = caption_loss(model, batch)
        total += stats["nll"] * len(batch)
        tokens += stats["tokens"]
    return total / max(tokens, 1)


@dataclass
class TrainResult:
    loss_log: list    # (epoch, batch, nll, reg, total)
    epoch_losses: list

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,batch,nll,reg,total\n")
            for epoch, b, nll, reg, tot in self.loss_log:
                fh.write(f"{epoch},{b},{nll!r},{reg!r},{tot!r}\n")


def train(model, data, config, checkpoint_path=None, on_epoch=None):
    """Shuffled mini-batch Adam on :func:`caption_loss`.

    Batch order and dropout masks are fixed by ``config.seed``. The
    checkpoint (if a path is given) is rewritten after every epoch.
    ``on_epoch(epoch, mean_loss)`` may return True to stop early.
    """
    config.validate()
    if not data.examples:
        raise DataError("no training examples")
    if data.features.shape[-1] != model.config.feature_dim:
        raise DataError(
            f"feature width {data.features.shape[-1]} does not match model ({model.config.feature_dim})"
        )
    if data.attributes.shape[-1] != model.config.n_attributes:
        raise DataError("attribute width does not match the model")
    vocab_size = model.config.vocab_size
    for _, seq in data.examples:
        if max(seq) >= vocab_size or min(seq) < 0:
            raise DataError("caption token id outside the model vocabulary")
    order_rng = np.random.default_rng([config.seed, 0])
    drop_rng = np.random.default_rng([config.seed, 1])
    store = model.store
    result = TrainResult([], [])
    best, stale = np.inf, 0
    for epoch in range(config.epochs):
        perm = order_rng.permutation(len(data.examples))
        totals = []
        for b, start in enumerate(range(0, len(perm), config.batch_size)):
            batch = data.batch(perm[start:start + config.batch_size])
            with Tape() as tape:
                loss, stats = caption_loss(
                    model, batch, config.reg, config.dropout, drop_rng, training=True
                )
            total = float(loss.value)
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            backward(tape, loss)
            adam_update(store, config.lr, config.beta1, config.beta2, config.eps, config.clip_norm)
            result.loss_log.append((epoch, b, stats["nll"], stats["reg"], total))
            totals.append(total)
        mean = float(np.mean(totals))
        result.epoch_losses.append(mean)
        log.info("epoch %d loss %.5f", epoch, mean)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, store.state_dict())
        if on_epoch is not None and on_epoch(epoch, mean):
            break
        if config.patience is not None:
            if mean < best - 1e-12:
                best, stale = mean, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return result


__all__ = [
    "Batch",
    "CaptionData",
    "TrainConfig",
    "TrainResult",
    "adam_update",
    "caption_loss",
    "dropout",
    "evaluate_nll",
    "regularizer",
    "train",
]
