"""Topic-guided spatial and semantic attention heads.

Both heads accept arbitrary leading batch axes: features ``(..., m, D)``,
topic ``(..., K)``, hidden state ``(..., H)``, attributes ``(..., n)``.
A head built with ``use_topic=False`` has no topic projection at all, so its
output cannot depend on the topic vector.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, ops
from .errors import ContractError, DimensionError


@dataclass
class AttentionWeights:
    """One attention distribution captured during decoding."""

    weights: np.ndarray
    step: int

    def check(self, tol=1e-9):
        w = self.weights
        return bool((w >= 0).all() and abs(w.sum() - 1.0) <= tol)


@dataclass
class SpatialAttentionParams:
    W_ev: Tensor
    b_ev: Tensor
    W_eh: Tensor
    b_eh: Tensor
    W_mlp: Tensor
    b_mlp: Tensor
    W_alpha: Tensor
    b_alpha: Tensor
    W_eT: Optional[Tensor] = None
    b_eT: Optional[Tensor] = None

    @property
    def use_topic(self):
        return self.W_eT is not None


@dataclass
class SemanticAttentionParams:
    W_bA: Tensor
    b_bA: Tensor
    W_bh: Tensor
    b_bh: Tensor
    W_beta: Tensor
    b_beta: Tensor
    W_bT: Optional[Tensor] = None
    b_bT: Optional[Tensor] = None

    @property
    def use_topic(self):
        return self.W_bT is not None


def init_spatial(store, rng, *, topic_dim, feature_dim, hidden_dim, proj_dim=256,
                 mlp_dim=256, use_topic=True, prefix="spatial"):
    """Register spatial-head parameters in ``store`` and return them."""
    p = {}

    def w(name, shape):
        p[name] = store.add_uniform(f"{prefix}.{name}", shape, rng)

    def b(name, size):
        p[name] = store.add_zeros(f"{prefix}.{name}", (size,))

    if use_topic:
        w("W_eT", (proj_dim, topic_dim))
        b("b_eT", proj_dim)
    w("W_ev", (proj_dim, feature_dim))
    b("b_ev", proj_dim)
    w("W_eh", (proj_dim, hidden_dim))
    b("b_eh", proj_dim)
    n_parts = 3 if use_topic else 2
    w("W_mlp", (mlp_dim, n_parts * proj_dim))
    b("b_mlp", mlp_dim)
    w("W_alpha", (1, mlp_dim))
    b("b_alpha", 1)
    return SpatialAttentionParams(**p)


def init_semantic(store, rng, *, topic_dim, n_attributes, hidden_dim, proj_dim=256,
                  use_topic=True, prefix="semantic"):
    """Register semantic-head parameters in ``store`` and return them."""
    p = {}

    def w(name, shape):
        p[name] = store.add_uniform(f"{prefix}.{name}", shape, rng)

    def b(name, size):
        p[name] = store.add_zeros(f"{prefix}.{name}", (size,))

    if use_topic:
        w("W_bT", (proj_dim, topic_dim))
        b("b_bT", proj_dim)
    w("W_bA", (proj_dim, n_attributes))
    b("b_bA", proj_dim)
    w("W_bh", (proj_dim, hidden_dim))
    b("b_bh", proj_dim)
    n_parts = 3 if use_topic else 2
    w("W_beta", (n_attributes, n_parts * proj_dim))
    b("b_beta", n_attributes)
    return SemanticAttentionParams(**p)


class SpatialContext:
    """Step-independent projections of the regions (and topic) for one batch."""

    def __init__(self, features, topic, params):
        features = _as_tensor(features)
        if features.value.ndim < 2:
            raise DimensionError(f"features must be (..., m, D), got {features.shape}")
        m = features.shape[-2]
        if m == 0:
            raise ContractError("empty feature map: no regions to attend over")
        if features.shape[-1] != params.W_ev.shape[1]:
            raise DimensionError(
                f"feature width {features.shape[-1]} vs W_ev {params.W_ev.shape}"
            )
        self.params = params
        self.features = features
        self.m = m
        self.parts = []
        if params.use_topic:
            if topic is None:
                raise ContractError("topic-guided spatial head needs a topic vector")
            topic = _as_tensor(topic)
            if topic.shape[:-1] != features.shape[:-2]:
                raise DimensionError(f"topic {topic.shape} vs features {features.shape}")
            self.parts.append(ops.repeat(ops.linear(topic, params.W_eT, params.b_eT), m))
        self.region_proj = ops.linear(features, params.W_ev, params.b_ev)

    def attend(self, h_prev):
        p = self.params
        h_prev = _as_tensor(h_prev)
        if h_prev.shape[:-1] != self.features.shape[:-2]:
            raise DimensionError(f"hidden state {h_prev.shape} vs features {self.features.shape}")
        h_part = ops.repeat(ops.linear(h_prev, p.W_eh, p.b_eh), self.m)
        joint = ops.concat(self.parts + [self.region_proj, h_part])
        hidden = ops.tanh(ops.linear(joint, p.W_mlp, p.b_mlp))
        logits = ops.linear(hidden, p.W_alpha, p.b_alpha)
        logits = ops.reshape(logits, logits.shape[:-1])
        alpha = ops.softmax(logits)
        attended = ops.weighted_sum(alpha, self.features)
        return alpha, attended


class SemanticContext:
    """Step-independent projections of attributes (and topic) for one batch."""

    def __init__(self, attributes, topic, params):
        attributes = _as_tensor(attributes)
        if attributes.shape[-1] != params.W_bA.shape[1]:
            raise DimensionError(
                f"attribute width {attributes.shape[-1]} vs W_bA {params.W_bA.shape}"
            )
        if (attributes.value < 0).any():
            raise ContractError("attribute scores must be non-negative")
        self.params = params
        self.attributes = attributes
        self.parts = []
        if params.use_topic:
            if topic is None:
                raise ContractError("topic-guided semantic head needs a topic vector")
            topic = _as_tensor(topic)
            if topic.shape[:-1] != attributes.shape[:-1]:
                raise DimensionError(f"topic {topic.shape} vs attributes {attributes.shape}")
            self.parts.append(ops.linear(topic, params.W_bT, params.b_bT))
        self.attr_proj = ops.linear(attributes, params.W_bA, params.b_bA)

    def attend(self, h_prev):
        p = self.params
        h_prev = _as_tensor(h_prev)
        h_part = ops.linear(h_prev, p.W_bh, p.b_bh)
        b = ops.tanh(ops.concat(self.parts + [self.attr_proj, h_part]))
        beta = ops.softmax(ops.linear(b, p.W_beta, p.b_beta))
        return beta, ops.multiply(beta, self.attributes)


def spatial_attend(features, topic, h_prev, params):
    """Attention distribution over regions and the attended feature vector.

    Returns ``(alpha, v_hat)`` with ``alpha`` of shape ``(..., m)`` and
    ``v_hat = sum_i alpha_i * v_i`` of shape ``(..., D)``.
    """
    return SpatialContext(features, topic, params).attend(h_prev)


def semantic_attend(attributes, topic, h_prev, params):
    """Attention over attribute slots and the reweighted attributes ``beta * A``."""
    return SemanticContext(attributes, topic, params).attend(h_prev)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
