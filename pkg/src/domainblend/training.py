"""Episodic training of the attention layer over a frozen feature store.

Gradients are hand-derived (chain rule through the cosine classifier, the
blending step, the per-class softmax and the linear maps) and validated
against a central finite-difference oracle. Stored features never receive
gradients: the backbones are frozen by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import AttentionParams, HeadParams, init_params
from .classifier import DEFAULT_SCALE, LossBreakdown
from .errors import ConfigError, FormatError, SamplingError, ShapeError
from .mathops import softmax_rows
from .sampler import Episode, SamplerPolicy, sample_episode, set_representations
from .store import FeatureStore, SynthConfig, generate_synthetic_store

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
ABLATION_MODES = ("no_wq", "no_wk", "no_setrep", "no_reg")

# Stream tags keep the rng used for initialization, the training episode
# stream and each validation task independent of one another.
_INIT_STREAM, _TRAIN_STREAM, _VALID_STREAM = 1, 2, 3


@dataclass
class HeadGradients:
    dwq: np.ndarray
    dbq: np.ndarray
    dwk: np.ndarray
    dbk: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.dwq, self.dbq, self.dwk, self.dbk]


GradientSet = list[HeadGradients]


@dataclass
class TrainConfig:
    episodes_total: int = 2000
    lr0: float = 0.01
    lam: float = 0.1
    weight_decay: float = 1e-5
    scale: float = DEFAULT_SCALE
    policy: SamplerPolicy = field(default_factory=SamplerPolicy)
    num_heads: int = 2
    key_dim: int = 1024
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.0
    val_interval: int = 500
    val_tasks: int = 60
    ablation: str | None = None

    def validate(self) -> None:
        if self.episodes_total < 1:
            raise ConfigError(f"train.episodes_total must be >= 1, got {self.episodes_total}")
        if self.lr0 <= 0:
            raise ConfigError(f"train.lr0 must be > 0, got {self.lr0}")
        if self.lam < 0:
            raise ConfigError(f"train.lambda must be >= 0, got {self.lam}")
        if self.weight_decay < 0:
            raise ConfigError(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        if self.scale <= 0:
            raise ConfigError(f"train.scale must be > 0, got {self.scale}")
        if self.num_heads < 1 or self.key_dim < 1:
            raise ConfigError("train.num_heads and train.key_dim must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"train.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.ablation is not None and self.ablation not in ABLATION_MODES:
            raise ConfigError(
                f"unknown ablation mode {self.ablation!r}; choose from {ABLATION_MODES}"
            )
        self.policy.validate()


@dataclass
class TrainedModel:
    params: AttentionParams
    config: TrainConfig
    store_fingerprint: str
    final_training_loss: float
    best_params: AttentionParams | None = None
    best_valid_accuracy: float | None = None


# -- forward + backward -----------------------------------------------------


def _episode_tensors(store: FeatureStore, episode: Episode):
    """Gather the flat support/query feature blocks for one episode."""
    shots = episode.shots
    feats_s = np.stack(
        [store.backbone_features(s) for ids in episode.support for s in ids]
    )
    feats_q = np.stack(
        [store.backbone_features(s) for ids in episode.query for s in ids]
    )
    targets = np.concatenate(
        [np.full(len(ids), ci, dtype=np.intp) for ci, ids in enumerate(episode.query)]
    )
    return shots, feats_s, feats_q, targets


def loss_and_gradients(
    params: AttentionParams,
    store: FeatureStore,
    episode: Episode,
    lam: float,
    scale: float = DEFAULT_SCALE,
    zero_set_reps: bool = False,
) -> tuple[LossBreakdown, GradientSet]:
    """Loss of one episode and its gradient for every head parameter."""
    params.check_store(store)
    set_reps = set_representations(store, episode)
    r_blocks = set_reps.per_backbone  # (N, m, d)
    r_concat = set_reps.concat  # (N, m*d)
    if zero_set_reps:
        r_blocks = np.zeros_like(r_blocks)
        r_concat = np.zeros_like(r_concat)

    n_way, m, d = r_blocks.shape
    h_count = params.num_heads
    l = params.key_dim
    sqrt_l = np.sqrt(l)

    shots, feats_s, feats_q, targets = _episode_tensors(store, episode)

    # forward: attention
    queries_h = []
    keys_h = []
    class_scores_h = []
    scores = np.empty((h_count, m))
    for h, head in enumerate(params.heads):
        queries = r_concat @ head.wq.T + head.bq  # (N, l)
        keys = r_blocks @ head.wk.T + head.bk  # (N, m, l)
        logits = np.einsum("nl,nil->ni", queries, keys) / sqrt_l
        class_scores = softmax_rows(logits)
        scores[h] = class_scores.mean(axis=0)
        queries_h.append(queries)
        keys_h.append(keys)
        class_scores_h.append(class_scores)

    # forward: blend, prototypes, cosine cross-entropy
    emb_s = np.einsum("hi,sid->shd", scores, feats_s).reshape(len(feats_s), h_count * d)
    emb_q = np.einsum("hi,qid->qhd", scores, feats_q).reshape(len(feats_q), h_count * d)
    protos = np.empty((n_way, h_count * d))
    offset = 0
    for ci, k in enumerate(shots):
        protos[ci] = emb_s[offset : offset + k].mean(axis=0)
        offset += k
    q_norms = np.linalg.norm(emb_q, axis=1)
    p_norms = np.linalg.norm(protos, axis=1)
    cos = (emb_q @ protos.T) / np.outer(q_norms, p_norms)
    probs = softmax_rows(scale * cos)
    n_query = len(targets)
    cross_entropy = float(-np.log(probs[np.arange(n_query), targets]).mean())

    gram = scores @ scores.T
    gram_minus_i = gram - np.eye(h_count)
    penalty = float((gram_minus_i * gram_minus_i).sum())
    breakdown = LossBreakdown(
        cross_entropy=cross_entropy,
        penalty=penalty,
        total=cross_entropy + lam * penalty,
        lam=lam,
    )

    # backward: cross-entropy -> cosine -> embeddings
    d_logits = probs.copy()
    d_logits[np.arange(n_query), targets] -= 1.0
    d_cos = (scale / n_query) * d_logits  # (nq, N)

    weighted = d_cos / np.outer(q_norms, p_norms)
    diag_q = (d_cos * cos).sum(axis=1) / (q_norms * q_norms)
    diag_p = (d_cos * cos).sum(axis=0) / (p_norms * p_norms)
    d_emb_q = weighted @ protos - diag_q[:, None] * emb_q
    d_protos = weighted.T @ emb_q - diag_p[:, None] * protos

    d_emb_s = np.empty_like(emb_s)
    offset = 0
    for ci, k in enumerate(shots):
        d_emb_s[offset : offset + k] = d_protos[ci] / k
        offset += k

    # embeddings -> per-task scores (plus the diversity penalty path)
    d_scores = np.einsum("shd,sid->hi", d_emb_s.reshape(-1, h_count, d), feats_s)
    d_scores += np.einsum("qhd,qid->hi", d_emb_q.reshape(-1, h_count, d), feats_q)
    d_scores += lam * 4.0 * (gram_minus_i @ scores)

    # per-task scores -> per-class softmax -> queries/keys -> parameters
    grads: GradientSet = []
    for h, head in enumerate(params.heads):
        class_scores = class_scores_h[h]
        d_class = np.broadcast_to(d_scores[h] / n_way, class_scores.shape)
        d_logit = class_scores * (
            d_class - (d_class * class_scores).sum(axis=1, keepdims=True)
        )
        d_queries = np.einsum("ni,nil->nl", d_logit, keys_h[h]) / sqrt_l
        d_keys = d_logit[:, :, None] * queries_h[h][:, None, :] / sqrt_l
        grads.append(
            HeadGradients(
                dwq=d_queries.T @ r_concat,
                dbq=d_queries.sum(axis=0),
                dwk=np.einsum("nil,nid->ld", d_keys, r_blocks),
                dbk=d_keys.sum(axis=(0, 1)),
            )
        )
    return breakdown, grads


def finite_diff_gradients(
    params: AttentionParams,
    store: FeatureStore,
    episode: Episode,
    lam: float,
    scale: float = DEFAULT_SCALE,
    h: float = 1e-5,
    zero_set_reps: bool = False,
) -> GradientSet:
    """Central-difference gradient of the episode loss, coordinate by coordinate."""
    from .classifier import episode_loss

    work = params.copy()

    def total() -> float:
        return episode_loss(
            work, store, episode, lam, scale, zero_set_reps=zero_set_reps
        ).total

    grads: GradientSet = []
    for head in work.heads:
        head_grads = []
        for arr in head.arrays():
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                original = arr[idx]
                arr[idx] = original + h
                f_plus = total()
                arr[idx] = original - h
                f_minus = total()
                arr[idx] = original
                g[idx] = (f_plus - f_minus) / (2.0 * h)
            head_grads.append(g)
        grads.append(HeadGradients(*head_grads))
    return grads


def gradient_max_relative_error(analytic: GradientSet, numeric: GradientSet) -> float:
    """Worst relative disagreement, guarding tiny denominators at 1e-8."""
    worst = 0.0
    for a_head, n_head in zip(analytic, numeric):
        for a, n in zip(a_head.arrays(), n_head.arrays()):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def gradient_check(seed: int, trials: int = 20, h: float = 1e-5) -> float:
    """Analytic-vs-numeric agreement over random small configurations.

    Returns the max relative error across all trials and coordinates.
    Configurations vary every dimension the gradient code branches on:
    backbone count, feature dim, key dim, head count, way and shots.
    """
    if trials < 1:
        raise ConfigError(f"gradcheck trials must be >= 1, got {trials}")
    master = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        m = int(master.integers(2, 5))
        d = int(master.integers(2, 9))
        l = int(master.integers(2, 7))
        heads = int(master.integers(1, 4))
        n_way = int(master.integers(2, 5))
        cfg = SynthConfig(
            domains=m,
            classes_per_domain_train=n_way,
            classes_per_domain_valid=0,
            classes_per_domain_test=0,
            samples_per_class_train=6,
            samples_per_class_valid=0,
            samples_per_class_test=0,
            dim=d,
            sigma_in=0.4,
            sigma_out=0.6,
            seed=int(master.integers(2**31)),
        )
        store = generate_synthetic_store(cfg)
        policy = SamplerPolicy(n_min=n_way, n_max=n_way, k_max=3, q_per_class=2)
        episode = sample_episode(
            store, policy, np.random.default_rng(int(master.integers(2**31))), "train"
        )
        params = init_params(
            m, d, l, heads, np.random.default_rng(int(master.integers(2**31)))
        )
        # nonzero biases exercise every term of the chain rule
        for head in params.heads:
            head.bq[:] = master.uniform(-0.3, 0.3, size=l)
            head.bk[:] = master.uniform(-0.3, 0.3, size=l)
        lam = float(master.choice([0.0, 0.1, 0.5]))
        _, analytic = loss_and_gradients(params, store, episode, lam)
        numeric = finite_diff_gradients(params, store, episode, lam, h=h)
        worst = max(worst, gradient_max_relative_error(analytic, numeric))
    return worst


# -- schedules and updates ----------------------------------------------------


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


def sgd_step(
    params: AttentionParams,
    grads: GradientSet,
    lr: float,
    weight_decay: float,
) -> AttentionParams:
    """One decoupled-decay SGD update; biases are never decayed."""
    if len(grads) != params.num_heads:
        raise ShapeError(
            f"gradient set has {len(grads)} heads, params have {params.num_heads}"
        )
    new_heads = []
    for head, grad in zip(params.heads, grads):
        if head.wq.shape != grad.dwq.shape or head.wk.shape != grad.dwk.shape:
            raise ShapeError("gradient shapes do not match parameter shapes")
        new_heads.append(
            HeadParams(
                wq=head.wq - lr * (grad.dwq + weight_decay * head.wq),
                bq=head.bq - lr * grad.dbq,
                wk=head.wk - lr * (grad.dwk + weight_decay * head.wk),
                bk=head.bk - lr * grad.dbk,
            )
        )
    return AttentionParams(new_heads, params.num_backbones, params.dim, params.key_dim)


class AdamState:
    """First/second moment buffers for every head parameter."""

    def __init__(self, params: AttentionParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [[np.zeros_like(a) for a in head.arrays()] for head in params.heads]
        self.v = [[np.zeros_like(a) for a in head.arrays()] for head in params.heads]


def adam_step(
    params: AttentionParams,
    grads: GradientSet,
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> AttentionParams:
    """One Adam update with decoupled weight decay on the matrices only."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    new_heads = []
    for hi, (head, grad) in enumerate(zip(params.heads, grads)):
        new_arrays = []
        for ai, (theta, g) in enumerate(zip(head.arrays(), grad.arrays())):
            m = state.m[hi][ai]
            v = state.v[hi][ai]
            m[...] = state.beta1 * m + (1.0 - state.beta1) * g
            v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            decay = weight_decay if ai in (0, 2) else 0.0
            new_arrays.append(theta - lr * (update + decay * theta))
        new_heads.append(HeadParams(*new_arrays))
    return AttentionParams(new_heads, params.num_backbones, params.dim, params.key_dim)


# -- the training loop --------------------------------------------------------


def _pin_ablation(params: AttentionParams, grads: GradientSet | None, mode: str | None) -> None:
    """Zero the pinned matrices (and their gradients) in place."""
    if mode == "no_wq":
        for head in params.heads:
            head.wq[...] = 0.0
        if grads is not None:
            for grad in grads:
                grad.dwq[...] = 0.0
    elif mode == "no_wk":
        for head in params.heads:
            head.wk[...] = 0.0
        if grads is not None:
            for grad in grads:
                grad.dwk[...] = 0.0


def _stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _validation_accuracy(
    params: AttentionParams,
    store: FeatureStore,
    cfg: TrainConfig,
    checkpoint: int,
) -> float:
    """Mean query accuracy over val_tasks episodes, domains drawn uniformly."""
    from .classifier import predict, prototypes
    from .attention import forward_episode

    domains = [
        t for t in store.domain_ids() if store.classes_in("valid", t)
    ]
    if not domains:
        raise SamplingError("store has no validation classes")
    policy = replace(cfg.policy, primary_domain_id=None, primary_domain_prob=0.0)
    accs = []
    for task in range(cfg.val_tasks):
        rng = _stream_rng(cfg.seed, _VALID_STREAM, checkpoint, task)
        domain = int(domains[rng.integers(len(domains))])
        episode = sample_episode(store, policy, rng, "valid", force_domain=domain)
        embedding = forward_episode(
            params, store, episode, zero_set_reps=cfg.ablation == "no_setrep"
        )
        protos = prototypes(embedding)
        correct = 0
        total = 0
        for target, block in enumerate(embedding.query):
            for row in block:
                correct += predict(row, protos, cfg.scale) == target
                total += 1
        accs.append(correct / total)
    return float(np.mean(accs))


def train(store: FeatureStore, cfg: TrainConfig) -> TrainedModel:
    """Run the episodic loop and return the trained layer with provenance."""
    cfg.validate()
    effective_lam = 0.0 if cfg.ablation == "no_reg" else cfg.lam
    zero_set_reps = cfg.ablation == "no_setrep"

    params = init_params(
        store.num_backbones,
        store.dim,
        cfg.key_dim,
        cfg.num_heads,
        _stream_rng(cfg.seed, _INIT_STREAM),
    )
    _pin_ablation(params, None, cfg.ablation)

    adam = AdamState(params) if cfg.optimizer == "adam" else None
    velocity: GradientSet | None = None
    episode_rng = _stream_rng(cfg.seed, _TRAIN_STREAM)

    best_params: AttentionParams | None = None
    best_accuracy: float | None = None
    recent: list[float] = []
    final_loss = float("nan")

    for step in range(cfg.episodes_total):
        try:
            episode = sample_episode(store, cfg.policy, episode_rng, "train")
        except SamplingError as exc:
            raise SamplingError(f"episode {step}: {exc}") from exc
        breakdown, grads = loss_and_gradients(
            params, store, episode, effective_lam, cfg.scale, zero_set_reps=zero_set_reps
        )
        _pin_ablation(params, grads, cfg.ablation)

        lr = cosine_lr(step, cfg.episodes_total, cfg.lr0)
        if adam is not None:
            params = adam_step(params, grads, adam, lr, cfg.weight_decay)
        else:
            if cfg.momentum > 0.0:
                if velocity is None:
                    velocity = [
                        HeadGradients(*[np.zeros_like(a) for a in g.arrays()])
                        for g in grads
                    ]
                for vel, grad in zip(velocity, grads):
                    for v_arr, g_arr in zip(vel.arrays(), grad.arrays()):
                        v_arr *= cfg.momentum
                        v_arr += g_arr
                grads = velocity
            params = sgd_step(params, grads, lr, cfg.weight_decay)
        _pin_ablation(params, None, cfg.ablation)

        recent.append(breakdown.total)
        final_loss = breakdown.total
        if (step + 1) % 100 == 0:
            logger.info(
                "episode %d lr %.6f mean loss %.6f", step + 1, lr, float(np.mean(recent))
            )
            recent.clear()
        if cfg.val_interval and (step + 1) % cfg.val_interval == 0:
            accuracy = _validation_accuracy(params, store, cfg, (step + 1) // cfg.val_interval)
            logger.info("episode %d validation accuracy %.4f", step + 1, accuracy)
            if best_accuracy is None or accuracy > best_accuracy:
                best_accuracy = accuracy
                best_params = params.copy()

    return TrainedModel(
        params=params,
        config=cfg,
        store_fingerprint=store.fingerprint(),
        final_training_loss=final_loss,
        best_params=best_params,
        best_valid_accuracy=best_accuracy,
    )


# -- model persistence --------------------------------------------------------


def _params_to_doc(params: AttentionParams) -> list[dict]:
    return [
        {
            "wq": head.wq.tolist(),
            "bq": head.bq.tolist(),
            "wk": head.wk.tolist(),
            "bk": head.bk.tolist(),
        }
        for head in params.heads
    ]


def _params_from_doc(doc: list[dict], m: int, d: int, l: int) -> AttentionParams:
    heads = []
    for entry in doc:
        head = HeadParams(
            wq=np.asarray(entry["wq"], dtype=np.float64),
            bq=np.asarray(entry["bq"], dtype=np.float64),
            wk=np.asarray(entry["wk"], dtype=np.float64),
            bk=np.asarray(entry["bk"], dtype=np.float64),
        )
        if (
            head.wq.shape != (l, m * d)
            or head.bq.shape != (l,)
            or head.wk.shape != (l, d)
            or head.bk.shape != (l,)
        ):
            raise ShapeError(
                f"model head shapes {head.wq.shape}/{head.wk.shape} do not match "
                f"declared m={m} d={d} key_dim={l}"
            )
        heads.append(head)
    return AttentionParams(heads, m, d, l)


def config_to_doc(cfg: TrainConfig) -> dict:
    policy = cfg.policy
    return {
        "episodes_total": cfg.episodes_total,
        "lr0": cfg.lr0,
        "lambda": cfg.lam,
        "weight_decay": cfg.weight_decay,
        "scale": cfg.scale,
        "num_heads": cfg.num_heads,
        "key_dim": cfg.key_dim,
        "seed": cfg.seed,
        "optimizer": cfg.optimizer,
        "momentum": cfg.momentum,
        "val_interval": cfg.val_interval,
        "val_tasks": cfg.val_tasks,
        "ablation": cfg.ablation,
        "policy": {
            "n_min": policy.n_min,
            "n_max": policy.n_max,
            "k_max": policy.k_max,
            "q_per_class": policy.q_per_class,
            "primary_domain_id": policy.primary_domain_id,
            "primary_domain_prob": policy.primary_domain_prob,
            "seed": policy.seed,
        },
    }


def config_from_doc(doc: dict) -> TrainConfig:
    policy_doc = doc.get("policy", {})
    policy = SamplerPolicy(
        n_min=policy_doc.get("n_min", 3),
        n_max=policy_doc.get("n_max", 8),
        k_max=policy_doc.get("k_max", 10),
        q_per_class=policy_doc.get("q_per_class", 10),
        primary_domain_id=policy_doc.get("primary_domain_id"),
        primary_domain_prob=policy_doc.get("primary_domain_prob", 0.0),
        seed=policy_doc.get("seed", 0),
    )
    return TrainConfig(
        episodes_total=doc.get("episodes_total", 2000),
        lr0=doc.get("lr0", 0.01),
        lam=doc.get("lambda", 0.1),
        weight_decay=doc.get("weight_decay", 1e-5),
        scale=doc.get("scale", DEFAULT_SCALE),
        policy=policy,
        num_heads=doc.get("num_heads", 2),
        key_dim=doc.get("key_dim", 1024),
        seed=doc.get("seed", 0),
        optimizer=doc.get("optimizer", "adam"),
        momentum=doc.get("momentum", 0.0),
        val_interval=doc.get("val_interval", 500),
        val_tasks=doc.get("val_tasks", 60),
        ablation=doc.get("ablation"),
    )


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Single JSON document; float64 values survive the round trip exactly."""
    params = model.params
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "num_backbones": params.num_backbones,
        "dim": params.dim,
        "key_dim": params.key_dim,
        "num_heads": params.num_heads,
        "store_fingerprint": model.store_fingerprint,
        "final_training_loss": model.final_training_loss,
        "config": config_to_doc(model.config),
        "heads": _params_to_doc(params),
        "best": None
        if model.best_params is None
        else {
            "valid_accuracy": model.best_valid_accuracy,
            "heads": _params_to_doc(model.best_params),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", "utf-8")


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing model file {path}")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"unparsable model file {path.name}: {exc}") from exc
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(
            f"unsupported model format version {version!r} in {path.name} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    try:
        m = int(doc["num_backbones"])
        d = int(doc["dim"])
        l = int(doc["key_dim"])
        h_count = int(doc["num_heads"])
        heads_doc = doc["heads"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file {path.name}: {exc}") from exc
    if len(heads_doc) != h_count:
        raise FormatError(
            f"{path.name} declares {h_count} heads but stores {len(heads_doc)}"
        )
    params = _params_from_doc(heads_doc, m, d, l)
    best = doc.get("best")
    best_params = None
    best_accuracy = None
    if best is not None:
        best_params = _params_from_doc(best["heads"], m, d, l)
        best_accuracy = best.get("valid_accuracy")
    return TrainedModel(
        params=params,
        config=config_from_doc(doc.get("config", {})),
        store_fingerprint=doc.get("store_fingerprint", ""),
        final_training_loss=doc.get("final_training_loss", float("nan")),
        best_params=best_params,
        best_valid_accuracy=best_accuracy,
    )
