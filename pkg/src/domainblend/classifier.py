"""Prototype construction, cosine classification and the episodic loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, EpisodeEmbedding, forward_episode
from .errors import PipelineError, ShapeError
from .mathops import head_diversity_penalty, softmax
from .sampler import Episode
from .store import FeatureStore

COSINE_GUARD = 1e-12
DEFAULT_SCALE = 10.0


@dataclass
class Prototypes:
    """Per-class centroids of the adapted support embeddings."""

    vectors: np.ndarray  # (N, H*d)


@dataclass
class LossBreakdown:
    cross_entropy: float
    penalty: float
    total: float
    lam: float


def prototypes(embedding: EpisodeEmbedding) -> Prototypes:
    if any(block.shape[0] == 0 for block in embedding.support):
        raise PipelineError("prototypes: every class needs at least one support embedding")
    return Prototypes(np.stack([block.mean(axis=0) for block in embedding.support]))


def cosine_logits(query_embedding: np.ndarray, protos: Prototypes, scale: float) -> np.ndarray:
    """Scaled cosine similarity of one query embedding to every prototype."""
    q = np.asarray(query_embedding, dtype=np.float64)
    p = protos.vectors
    if q.shape != (p.shape[1],):
        raise ShapeError(
            f"query embedding length {q.shape} does not match prototypes dim {p.shape[1]}"
        )
    norms = np.maximum(np.linalg.norm(q) * np.linalg.norm(p, axis=1), COSINE_GUARD)
    return scale * (p @ q) / norms


def classify(
    query_embedding: np.ndarray, protos: Prototypes, scale: float = DEFAULT_SCALE
) -> np.ndarray:
    """Probability over classes for one query embedding."""
    return softmax(cosine_logits(query_embedding, protos, scale))


def predict(query_embedding: np.ndarray, protos: Prototypes, scale: float = DEFAULT_SCALE) -> int:
    """Argmax class index; exact ties resolve to the lowest index."""
    return int(np.argmax(classify(query_embedding, protos, scale)))


def episode_loss(
    params: AttentionParams,
    store: FeatureStore,
    episode: Episode,
    lam: float,
    scale: float = DEFAULT_SCALE,
    zero_set_reps: bool = False,
) -> LossBreakdown:
    """Mean query cross-entropy plus the weighted head-diversity penalty."""
    embedding = forward_episode(params, store, episode, zero_set_reps=zero_set_reps)
    return loss_from_embedding(embedding, lam, scale)


def loss_from_embedding(
    embedding: EpisodeEmbedding, lam: float, scale: float = DEFAULT_SCALE
) -> LossBreakdown:
    protos = prototypes(embedding)
    ce_sum = 0.0
    n_query = 0
    for target, block in enumerate(embedding.query):
        for row in block:
            probs = classify(row, protos, scale)
            ce_sum -= float(np.log(probs[target]))
            n_query += 1
    cross_entropy = ce_sum / n_query
    penalty = head_diversity_penalty(embedding.attention.scores)
    return LossBreakdown(
        cross_entropy=cross_entropy,
        penalty=penalty,
        total=cross_entropy + lam * penalty,
        lam=lam,
    )
