"""LSTM caption generator with the topic-first input schedule.

Step 0 feeds only the projected topic vector. Every later step first attends
over regions and attributes with the current hidden state, then feeds
``[W_xo * embed(prev_token), W_xv * v_hat]`` to the LSTM, and scores the
vocabulary with ``W_oh * h + W_oA * A_hat``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import attention
from .autodiff import ParameterStore, Tensor, ops
from .errors import ContractError, DimensionError, VocabularyError

PAD, START, END, UNK = 0, 1, 2, 3

VARIANTS = {
    "base": (False, False),
    "t-v": (True, False),
    "t-a": (False, True),
    "t-va": (True, True),
}


@dataclass
class ModelConfig:
    vocab_size: int
    n_attributes: int
    topic_dim: int
    feature_dim: int
    hidden_dim: int = 128
    input_dim: int = 128
    word_dim: int = 64
    spatial_proj: int = 256
    spatial_mlp: int = 256
    semantic_proj: int = 256
    spatial_topic: bool = True
    semantic_topic: bool = True
    topic_init: bool = True

    @classmethod
    def for_variant(cls, variant, topic_init=True, **kwargs):
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        spatial, semantic = VARIANTS[variant]
        return cls(spatial_topic=spatial, semantic_topic=semantic, topic_init=topic_init, **kwargs)

    @property
    def variant(self):
        for name, gates in VARIANTS.items():
            if gates == (self.spatial_topic, self.semantic_topic):
                return name
        raise AssertionError("unreachable")

    def to_dict(self):
        return asdict(self)


@dataclass
class LstmParams:
    W: Tensor  # (4H, input + H), gate rows ordered input, forget, output, candidate
    b: Tensor

    @property
    def hidden_dim(self):
        return self.W.shape[0] // 4


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    step: int
    prev_token: np.ndarray = field(default=None)


class CaptionModel:
    """All trainable parameters plus the forward pieces that use them."""

    def __init__(self, config, seed=0):
        self.config = config
        cfg = config
        if cfg.input_dim < 2:
            raise ContractError("input_dim must be at least 2")
        rng = np.random.default_rng(seed)
        store = self.store = ParameterStore()
        self.word_part = cfg.input_dim // 2
        self.visual_part = cfg.input_dim - self.word_part

        self.W_xT = (
            store.add_uniform("decoder.W_xT", (cfg.input_dim, cfg.topic_dim), rng)
            if cfg.topic_init else None
        )
        self.b_x0 = store.add_zeros("decoder.b_x0", (cfg.input_dim,))
        self.embedding = store.add_uniform(
            "decoder.embed", (cfg.vocab_size, cfg.word_dim), rng, fan_in=cfg.word_dim
        )
        self.W_xo = store.add_uniform("decoder.W_xo", (self.word_part, cfg.word_dim), rng)
        self.b_xo = store.add_zeros("decoder.b_xo", (self.word_part,))
        self.W_xv = store.add_uniform("decoder.W_xv", (self.visual_part, cfg.feature_dim), rng)
        self.b_xv = store.add_zeros("decoder.b_xv", (self.visual_part,))
        self.lstm = LstmParams(
            W=store.add_uniform(
                "lstm.W", (4 * cfg.hidden_dim, cfg.input_dim + cfg.hidden_dim), rng
            ),
            b=store.add_zeros("lstm.b", (4 * cfg.hidden_dim,)),
        )
        self.W_oh = store.add_uniform("output.W_oh", (cfg.vocab_size, cfg.hidden_dim), rng)
        self.b_o = store.add_zeros("output.b_o", (cfg.vocab_size,))
        self.W_oA = store.add_uniform("output.W_oA", (cfg.vocab_size, cfg.n_attributes), rng)
        self.spatial = attention.init_spatial(
            store, rng,
            topic_dim=cfg.topic_dim, feature_dim=cfg.feature_dim, hidden_dim=cfg.hidden_dim,
            proj_dim=cfg.spatial_proj, mlp_dim=cfg.spatial_mlp, use_topic=cfg.spatial_topic,
        )
        self.semantic = attention.init_semantic(
            store, rng,
            topic_dim=cfg.topic_dim, n_attributes=cfg.n_attributes, hidden_dim=cfg.hidden_dim,
            proj_dim=cfg.semantic_proj, use_topic=cfg.semantic_topic,
        )

    # -- pieces -----------------------------------------------------------

    def init_step(self, topic, dropout=None):
        """Run the topic-only first LSTM step from a zero state."""
        topic = _as_tensor(topic)
        cfg = self.config
        if topic.shape[-1] != cfg.topic_dim:
            raise DimensionError(f"topic width {topic.shape[-1]} vs K={cfg.topic_dim}")
        lead = topic.shape[:-1]
        zeros = Tensor(np.zeros(lead + (cfg.hidden_dim,)))
        state = DecoderState(h=zeros, c=zeros, step=0)
        if self.W_xT is not None:
            x0 = ops.linear(topic, self.W_xT, self.b_x0)
        else:
            x0 = _bias_rows(self.b_x0, lead)
        if dropout is not None:
            x0 = dropout(x0)
        state = lstm_cell(x0, state, self.lstm)
        state.prev_token = np.full(lead, START, dtype=np.int64)
        return state

    def step_input(self, prev_token, v_hat, dropout=None):
        prev_token = np.asarray(prev_token, dtype=np.int64)
        if prev_token.size and (prev_token.min() < 0 or prev_token.max() >= self.config.vocab_size):
            raise VocabularyError(
                f"token id outside vocabulary of size {self.config.vocab_size}"
            )
        word = ops.linear(ops.embed(self.embedding, prev_token), self.W_xo, self.b_xo)
        visual = ops.linear(v_hat, self.W_xv, self.b_xv)
        x = ops.concat([word, visual])
        if dropout is not None:
            x = dropout(x)
        return x

    def output_logits(self, h, a_hat, dropout=None):
        if dropout is not None:
            h = dropout(h)
        return ops.add(ops.linear(h, self.W_oh, self.b_o), ops.linear(a_hat, self.W_oA))

    def contexts(self, features, topic, attributes):
        return (
            attention.SpatialContext(features, topic, self.spatial),
            attention.SemanticContext(attributes, topic, self.semantic),
        )

    def decode_step(self, state, v_hat, a_hat, dropout=None):
        """Advance one step given attended features; returns (state, p_t)."""
        new_state, logits = self.decode_step_logits(state, v_hat, a_hat, dropout)
        return new_state, ops.softmax(logits)

    def decode_step_logits(self, state, v_hat, a_hat, dropout=None):
        if state.step < 1:
            raise ContractError("decode_step requires a state produced by init_step")
        x = self.step_input(state.prev_token, v_hat, dropout)
        new_state = lstm_cell(x, state, self.lstm)
        logits = self.output_logits(new_state.h, a_hat, dropout)
        return new_state, logits

    def greedy_decode(self, features, topic, attributes, max_len, record_attention=False):
        """Greedy argmax decoding for a single image or a batch.

        Returns token lists without START/END (one list per image, or a single
        list for unbatched input). With ``record_attention`` also returns the
        per-step ``(alpha, beta)`` arrays. Ties go to the lowest token id.
        """
        if max_len < 1:
            raise ContractError("max_len must be at least 1")
        features = np.asarray(features, dtype=np.float64)
        single = features.ndim == 2
        if single:
            features = features[None]
            topic = np.asarray(topic, dtype=np.float64)[None]
            attributes = np.asarray(attributes, dtype=np.float64)[None]
        n = features.shape[0]
        spatial_ctx, semantic_ctx = self.contexts(features, topic, attributes)
        state = self.init_step(topic)
        outputs = [[] for _ in range(n)]
        trace = [[] for _ in range(n)]
        done = np.zeros(n, dtype=bool)
        for t in range(1, max_len + 1):
            alpha, v_hat = spatial_ctx.attend(state.h)
            beta, a_hat = semantic_ctx.attend(state.h)
            state, logits = self.decode_step_logits(state, v_hat, a_hat)
            tokens = np.argmax(logits.value, axis=-1)
            for i in range(n):
                if done[i]:
                    continue
                if record_attention:
                    trace[i].append((int(tokens[i]), alpha.value[i].copy(), beta.value[i].copy()))
                if tokens[i] == END:
                    done[i] = True
                else:
                    outputs[i].append(int(tokens[i]))
            if done.all():
                break
            state.prev_token = tokens.astype(np.int64)
        if single:
            return (outputs[0], trace[0]) if record_attention else outputs[0]
        return (outputs, trace) if record_attention else outputs


def lstm_cell(x, state, params):
    """Standard LSTM update: sigmoid gates, tanh candidate and output squash."""
    x = _as_tensor(x)
    H = params.hidden_dim
    if x.shape[-1] + H != params.W.shape[1]:
        raise DimensionError(f"LSTM input {x.shape} incompatible with weights {params.W.shape}")
    if state.h.shape[:-1] != x.shape[:-1]:
        raise DimensionError(f"LSTM state {state.h.shape} vs input {x.shape}")
    gates = ops.linear(ops.concat([x, state.h]), params.W, params.b)
    i_pre, f_pre, o_pre, g_pre = ops.split(gates, [H, H, H, H])
    i, f, o = ops.sigmoid(i_pre), ops.sigmoid(f_pre), ops.sigmoid(o_pre)
    g = ops.tanh(g_pre)
    c = ops.add(ops.multiply(f, state.c), ops.multiply(i, g))
    h = ops.multiply(o, ops.tanh(c))
    return DecoderState(h=h, c=c, step=state.step + 1, prev_token=state.prev_token)


def _bias_rows(bias, lead):
    flat = int(np.prod(lead))
    return ops.reshape(ops.repeat(bias, flat), lead + (bias.shape[0],))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def init_step(topic, model):
    return model.init_step(topic)


def decode_step(state, v_hat, a_hat, model):
    return model.decode_step(state, v_hat, a_hat)


def greedy_decode(features, topic, attributes, model, max_len):
    return model.greedy_decode(features, topic, attributes, max_len)
