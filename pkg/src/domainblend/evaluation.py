"""Task-level evaluation, rank aggregation, sweeps, ablations and heatmaps.

Per-task rng streams are derived from (seed, domain, task index), so any
parallel execution schedule produces identical reports.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .attention import AttentionParams, forward_episode
from .classifier import DEFAULT_SCALE, predict, prototypes
from .errors import ConfigError, SamplingError, ShapeError
from .sampler import SamplerPolicy, sample_episode
from .store import FeatureStore
from .training import TrainConfig, TrainedModel, train

CI95_FACTOR = 1.96


@dataclass
class DomainReport:
    domain_id: int
    tasks: int
    mean_accuracy: float
    ci95: float


@dataclass
class HeatmapReport:
    """Mean attention per (head, test domain, backbone); rows sum to one."""

    values: np.ndarray  # (H, n_domains, m)
    domain_ids: list[int]
    tasks_per_domain: int


def confidence_interval95(accuracies: np.ndarray) -> float:
    """1.96 * sample std / sqrt(T); zero for a single task."""
    accuracies = np.asarray(accuracies, dtype=np.float64)
    t = len(accuracies)
    if t < 2:
        return 0.0
    return float(CI95_FACTOR * accuracies.std(ddof=1) / np.sqrt(t))


def _task_rng(seed: int, domain: int, task: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, domain, task]))


def _episode_accuracy(
    params: AttentionParams,
    store: FeatureStore,
    policy: SamplerPolicy,
    rng: np.random.Generator,
    split: str,
    domain: int,
    scale: float,
    zero_set_reps: bool,
) -> tuple[float, np.ndarray]:
    """Query accuracy of one fresh episode plus its attention score matrix."""
    episode = sample_episode(store, policy, rng, split, force_domain=domain)
    embedding = forward_episode(params, store, episode, zero_set_reps=zero_set_reps)
    protos = prototypes(embedding)
    correct = 0
    total = 0
    for target, block in enumerate(embedding.query):
        for row in block:
            correct += predict(row, protos, scale) == target
            total += 1
    return correct / total, embedding.attention.scores


def evaluate(
    model: TrainedModel,
    store: FeatureStore,
    split: str,
    tasks_per_domain: int,
    policy: SamplerPolicy | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[DomainReport]:
    """Per-domain mean accuracy with a 95% confidence interval.

    Samples ``tasks_per_domain`` episodes from every domain that has
    classes in the split; the result is independent of ``threads``.
    """
    if tasks_per_domain < 1:
        raise ConfigError(f"tasks_per_domain must be >= 1, got {tasks_per_domain}")
    model.params.check_store(store)
    policy = policy or model.config.policy
    policy = replace(policy, primary_domain_id=None, primary_domain_prob=0.0)
    zero_set_reps = model.config.ablation == "no_setrep"
    scale = model.config.scale

    domains = [t for t in store.domain_ids() if store.classes_in(split, t)]
    if not domains:
        raise SamplingError(f"split {split!r} has no populated domains")

    def run_task(domain: int, task: int) -> float:
        acc, _ = _episode_accuracy(
            model.params,
            store,
            policy,
            _task_rng(seed, domain, task),
            split,
            domain,
            scale,
            zero_set_reps,
        )
        return acc

    reports = []
    for domain in domains:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                accs = list(pool.map(lambda t: run_task(domain, t), range(tasks_per_domain)))
        else:
            accs = [run_task(domain, t) for t in range(tasks_per_domain)]
        accs = np.asarray(accs)
        reports.append(
            DomainReport(
                domain_id=domain,
                tasks=tasks_per_domain,
                mean_accuracy=float(accs.mean()),
                ci95=confidence_interval95(accs),
            )
        )
    return reports


def mean_accuracy(reports: list[DomainReport]) -> float:
    return float(np.mean([r.mean_accuracy for r in reports]))


def average_rank(table: np.ndarray) -> np.ndarray:
    """Mean rank of each method across domains (1 = best accuracy).

    ``table`` is methods x domains; ties within a domain share the mean of
    the positions they span.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.size == 0:
        raise ShapeError(f"average_rank needs a non-empty 2-D table, got shape {table.shape}")
    n_methods, n_domains = table.shape
    ranks = np.empty_like(table)
    for j in range(n_domains):
        col = table[:, j]
        order = np.argsort(-col, kind="stable")
        position = 1
        idx = 0
        while idx < n_methods:
            tied = [order[idx]]
            while idx + len(tied) < n_methods and col[order[idx + len(tied)]] == col[order[idx]]:
                tied.append(order[idx + len(tied)])
            mean_rank = position + (len(tied) - 1) / 2.0
            for t in tied:
                ranks[t, j] = mean_rank
            position += len(tied)
            idx += len(tied)
    return ranks.mean(axis=1)


@dataclass
class SweepRow:
    num_heads: int
    reports: list[DomainReport]
    average_accuracy: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    average_ranks: np.ndarray  # aligned with rows
    selected_heads: int  # argmax average accuracy


def head_sweep(
    store: FeatureStore,
    base_cfg: TrainConfig,
    head_counts: list[int],
    tasks_per_domain: int = 60,
    eval_seed: int = 0,
    split: str = "valid",
) -> SweepReport:
    """Train one model per head count and compare on the validation split."""
    if not head_counts:
        raise ConfigError("head_sweep needs at least one head count")
    rows = []
    for h in head_counts:
        cfg = replace(base_cfg, num_heads=h)
        model = train(store, cfg)
        reports = evaluate(model, store, split, tasks_per_domain, cfg.policy, eval_seed)
        rows.append(
            SweepRow(num_heads=h, reports=reports, average_accuracy=mean_accuracy(reports))
        )
    table = np.array([[r.mean_accuracy for r in row.reports] for row in rows])
    ranks = average_rank(table)
    best = int(np.argmax([row.average_accuracy for row in rows]))
    return SweepReport(rows=rows, average_ranks=ranks, selected_heads=rows[best].num_heads)


def ablate(
    store: FeatureStore,
    cfg: TrainConfig,
    mode: str,
    tasks_per_domain: int = 60,
    eval_seed: int = 0,
    split: str = "test",
) -> tuple[TrainedModel, list[DomainReport]]:
    """Train with one element disabled and evaluate on the given split."""
    from .training import ABLATION_MODES

    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    model = train(store, replace(cfg, ablation=mode))
    reports = evaluate(model, store, split, tasks_per_domain, cfg.policy, eval_seed)
    return model, reports


def attention_heatmap(
    model: TrainedModel,
    store: FeatureStore,
    split: str,
    tasks_per_domain: int,
    seed: int = 0,
) -> HeatmapReport:
    """Mean per-head attention scores grouped by episode domain."""
    if tasks_per_domain < 1:
        raise ConfigError(f"tasks_per_domain must be >= 1, got {tasks_per_domain}")
    model.params.check_store(store)
    policy = replace(model.config.policy, primary_domain_id=None, primary_domain_prob=0.0)
    zero_set_reps = model.config.ablation == "no_setrep"

    domains = [t for t in store.domain_ids() if store.classes_in(split, t)]
    if not domains:
        raise SamplingError(f"split {split!r} has no populated domains")

    values = np.zeros((model.params.num_heads, len(domains), store.num_backbones))
    for di, domain in enumerate(domains):
        for task in range(tasks_per_domain):
            _, scores = _episode_accuracy(
                model.params,
                store,
                policy,
                _task_rng(seed, domain, task),
                split,
                domain,
                model.config.scale,
                zero_set_reps,
            )
            values[:, di, :] += scores
    values /= tasks_per_domain
    return HeatmapReport(values=values, domain_ids=domains, tasks_per_domain=tasks_per_domain)


def heatmap_csv(report: HeatmapReport) -> str:
    """Rows of head, domain, backbone, value."""
    lines = ["head,domain,backbone,value"]
    h_count, n_domains, m = report.values.shape
    for h in range(h_count):
        for di in range(n_domains):
            for i in range(m):
                lines.append(
                    f"{h},{report.domain_ids[di]},{i},{report.values[h, di, i]!r}"
                )
    return "\n".join(lines) + "\n"


def heatmap_pgm(report: HeatmapReport, head: int) -> bytes:
    """Binary 8-bit portable graymap of one head (0 -> black, 1 -> white)."""
    grid = report.values[head]
    n_domains, m = grid.shape
    pixels = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{m} {n_domains}\n255\n".encode("ascii")
    return header + pixels.tobytes()
