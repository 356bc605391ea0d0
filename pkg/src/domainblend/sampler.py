"""Episode sampling and per-class set representations.

Episodes are single-domain, variable-way, variable-shot classification
tasks with disjoint support/query sets. Training episodes may be biased
toward one high-frequency domain; evaluation samples domains uniformly or
pins a domain explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SamplingError
from .store import FeatureStore


@dataclass
class SamplerPolicy:
    n_min: int = 3
    n_max: int = 8
    k_max: int = 10
    q_per_class: int = 10
    primary_domain_id: int | None = None
    primary_domain_prob: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 2 <= self.n_min <= self.n_max:
            raise ConfigError(
                f"sampler: need 2 <= n_min <= n_max, got n_min={self.n_min} n_max={self.n_max}"
            )
        if self.k_max < 1:
            raise ConfigError(f"sampler.k_max must be >= 1, got {self.k_max}")
        if self.q_per_class < 1:
            raise ConfigError(f"sampler.q_per_class must be >= 1, got {self.q_per_class}")
        if not 0.0 <= self.primary_domain_prob <= 1.0:
            raise ConfigError(
                f"sampler.primary_domain_prob must be in [0, 1], got {self.primary_domain_prob}"
            )


@dataclass
class Episode:
    """One sampled task: per-class support/query sample ids, one domain."""

    domain_id: int
    classes: list[int]
    support: list[list[int]]
    query: list[list[int]]
    split: str

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def shots(self) -> list[int]:
        return [len(s) for s in self.support]


@dataclass
class SetReps:
    """Per-class mean features: one (m, d) block per class plus its flattening.

    ``concat[c]`` is definitionally the concatenation of ``per_backbone[c]``
    along backbones, so it is stored as a reshape of the same buffer.
    """

    per_backbone: np.ndarray  # (N, m, d)
    concat: np.ndarray  # (N, m*d)


def _eligible_classes(store: FeatureStore, split: str, domain_id: int, min_samples: int) -> list[int]:
    return [
        c
        for c in store.classes_in(split, domain_id)
        if len(store.samples_of_class(c)) >= min_samples
    ]


def sample_episode(
    store: FeatureStore,
    policy: SamplerPolicy,
    rng: np.random.Generator,
    split: str,
    force_domain: int | None = None,
) -> Episode:
    """Draw one episode.

    Domain choice: ``force_domain`` if given; otherwise the policy's primary
    domain with probability ``primary_domain_prob``, falling back to a
    uniform draw over the remaining domains (uniform over all domains when
    no primary is configured).
    """
    policy.validate()
    domains = store.domain_ids()
    if not domains:
        raise SamplingError("store has no samples")

    if force_domain is not None:
        domain = force_domain
    elif policy.primary_domain_id is not None and rng.random() < policy.primary_domain_prob:
        domain = policy.primary_domain_id
    else:
        pool = [t for t in domains if t != policy.primary_domain_id]
        if not pool:
            pool = domains
        domain = int(pool[rng.integers(len(pool))])
    if domain not in domains:
        raise SamplingError(f"domain {domain} not present in store")

    min_samples = 1 + policy.q_per_class
    classes = _eligible_classes(store, split, domain, min_samples)
    if len(classes) < policy.n_min:
        raise SamplingError(
            f"split {split!r} domain {domain} has {len(classes)} classes with >= "
            f"{min_samples} samples; policy needs at least n_min={policy.n_min}"
        )

    n_way = int(rng.integers(policy.n_min, min(policy.n_max, len(classes)) + 1))
    chosen = [classes[i] for i in rng.choice(len(classes), size=n_way, replace=False)]

    support: list[list[int]] = []
    query: list[list[int]] = []
    for c in chosen:
        ids = store.samples_of_class(c)
        k_cap = min(policy.k_max, len(ids) - policy.q_per_class)
        shots = int(rng.integers(1, k_cap + 1))
        picked = rng.choice(len(ids), size=shots + policy.q_per_class, replace=False)
        support.append([ids[i] for i in picked[:shots]])
        query.append([ids[i] for i in picked[shots:]])

    return Episode(domain_id=domain, classes=chosen, support=support, query=query, split=split)


def set_representations(store: FeatureStore, episode: Episode) -> SetReps:
    """Mean per-backbone feature of each class's support set."""
    n = episode.n_way
    per_backbone = np.empty((n, store.num_backbones, store.dim))
    for ci, ids in enumerate(episode.support):
        block = np.stack([store.backbone_features(s) for s in ids])
        per_backbone[ci] = block.mean(axis=0)
    return SetReps(
        per_backbone=per_backbone,
        concat=per_backbone.reshape(n, store.num_backbones * store.dim),
    )
