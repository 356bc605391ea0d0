"""Per-class scaled dot-product attention over backbones.

For each episode, every head turns the class set representations into one
query per class and one key per (backbone, class), softmaxes the scaled
dot products over backbones, and averages the per-class score vectors into
a single per-task distribution. Blending the raw backbone features with
those scores (and concatenating heads) yields the adapted representation
used by the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .mathops import softmax_rows
from .sampler import Episode, SetReps, set_representations
from .store import FeatureStore


@dataclass
class HeadParams:
    """Query/key linear maps of one attention head."""

    wq: np.ndarray  # (l, m*d)
    bq: np.ndarray  # (l,)
    wk: np.ndarray  # (l, d)
    bk: np.ndarray  # (l,)

    def copy(self) -> "HeadParams":
        return HeadParams(self.wq.copy(), self.bq.copy(), self.wk.copy(), self.bk.copy())

    def arrays(self) -> list[np.ndarray]:
        return [self.wq, self.bq, self.wk, self.bk]


@dataclass
class AttentionParams:
    """All heads plus the shape contract they were built for."""

    heads: list[HeadParams]
    num_backbones: int
    dim: int
    key_dim: int

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def copy(self) -> "AttentionParams":
        return AttentionParams(
            [h.copy() for h in self.heads], self.num_backbones, self.dim, self.key_dim
        )

    def check_store(self, store: FeatureStore) -> None:
        if store.num_backbones != self.num_backbones or store.dim != self.dim:
            raise ShapeError(
                f"params built for {self.num_backbones} backbones x dim {self.dim}, "
                f"store has {store.num_backbones} x dim {store.dim}"
            )


@dataclass
class AttentionResult:
    """Logits and scores of one forward pass.

    Arrays are class-major: ``logits[h, c, i]`` is head h's scaled dot
    product between class c's query and backbone i's key. ``scores`` holds
    the per-task aggregation (class mean) and doubles as the head-by-
    backbone matrix the diversity penalty is computed from.
    """

    logits: np.ndarray  # (H, N, m)
    class_scores: np.ndarray  # (H, N, m)
    scores: np.ndarray  # (H, m)


@dataclass
class EpisodeEmbedding:
    """Adapted representations for every support and query sample."""

    set_reps: SetReps
    attention: AttentionResult
    support: list[np.ndarray]  # per class, (k_c, H*d)
    query: list[np.ndarray]  # per class, (q, H*d)


def init_params(
    num_backbones: int,
    dim: int,
    key_dim: int,
    num_heads: int,
    rng: np.random.Generator,
) -> AttentionParams:
    """Glorot-uniform weight matrices, zero biases."""
    if min(num_backbones, dim, key_dim, num_heads) < 1:
        raise ConfigError(
            "init_params: num_backbones, dim, key_dim and num_heads must all be >= 1"
        )
    m, d, l = num_backbones, dim, key_dim
    heads = []
    for _ in range(num_heads):
        sq = np.sqrt(6.0 / (m * d + l))
        sk = np.sqrt(6.0 / (d + l))
        heads.append(
            HeadParams(
                wq=rng.uniform(-sq, sq, size=(l, m * d)),
                bq=np.zeros(l),
                wk=rng.uniform(-sk, sk, size=(l, d)),
                bk=np.zeros(l),
            )
        )
    return AttentionParams(heads, m, d, l)


def attention(params: AttentionParams, set_reps: SetReps) -> AttentionResult:
    """Score every backbone for the episode, per head.

    Per head: query q_c from the class's concatenated set representation,
    key k_{i,c} from backbone i's set representation, logit q_c . k_{i,c}
    divided by sqrt(key_dim), softmax over backbones, then mean over classes.
    """
    n, m, d = set_reps.per_backbone.shape
    if m != params.num_backbones or d != params.dim:
        raise ShapeError(
            f"set representations are {m} backbones x dim {d}, "
            f"params expect {params.num_backbones} x {params.dim}"
        )
    h_count = params.num_heads
    l = params.key_dim
    logits = np.empty((h_count, n, m))
    class_scores = np.empty((h_count, n, m))
    scores = np.empty((h_count, m))
    for h, head in enumerate(params.heads):
        queries = set_reps.concat @ head.wq.T + head.bq  # (N, l)
        keys = set_reps.per_backbone @ head.wk.T + head.bk  # (N, m, l)
        logits[h] = np.einsum("nl,nil->ni", queries, keys) / np.sqrt(l)
        class_scores[h] = softmax_rows(logits[h])
        scores[h] = class_scores[h].mean(axis=0)
    return AttentionResult(logits=logits, class_scores=class_scores, scores=scores)


def adapt(
    params: AttentionParams, attn: AttentionResult, raw_features: np.ndarray
) -> np.ndarray:
    """Blend one sample's backbone features with each head's scores.

    ``raw_features`` has shape (m, d); the result concatenates the H
    per-head blends into a length H*d vector.
    """
    raw_features = np.asarray(raw_features, dtype=np.float64)
    if raw_features.shape != (params.num_backbones, params.dim):
        raise ShapeError(
            f"raw_features shape {raw_features.shape}, "
            f"expected ({params.num_backbones}, {params.dim})"
        )
    return (attn.scores @ raw_features).reshape(-1)


def adapt_batch(attn_scores: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Vectorized adapt for a stack of samples: (n, m, d) -> (n, H*d)."""
    blended = np.einsum("hi,nid->nhd", attn_scores, features)
    return blended.reshape(features.shape[0], -1)


def forward_episode(
    params: AttentionParams,
    store: FeatureStore,
    episode: Episode,
    zero_set_reps: bool = False,
) -> EpisodeEmbedding:
    """Set representations, attention scores, and all adapted embeddings.

    ``zero_set_reps`` nulls the inputs of the query/key maps (keeping the
    biases), which collapses attention onto a support-independent
    distribution; used by the input-ablation mode.
    """
    params.check_store(store)
    set_reps = set_representations(store, episode)
    if zero_set_reps:
        set_reps = SetReps(
            per_backbone=np.zeros_like(set_reps.per_backbone),
            concat=np.zeros_like(set_reps.concat),
        )
    attn = attention(params, set_reps)
    support = []
    query = []
    for ids_s, ids_q in zip(episode.support, episode.query):
        feats_s = np.stack([store.backbone_features(s) for s in ids_s])
        feats_q = np.stack([store.backbone_features(s) for s in ids_q])
        support.append(adapt_batch(attn.scores, feats_s))
        query.append(adapt_batch(attn.scores, feats_q))
    return EpisodeEmbedding(set_reps=set_reps, attention=attn, support=support, query=query)
