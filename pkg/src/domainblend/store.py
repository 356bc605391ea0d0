"""Frozen per-backbone feature store.

One store holds, for every sample, one feature vector per backbone (all
backbones share the same dimension). A synthetic multi-domain generator
stands in for real pre-trained extractors: the backbone matching a sample's
domain emits class-discriminative vectors, every other backbone emits a
domain-level vector carrying no class information.

On-disk layout (bit-exact):
    manifest.json       m, d, normalized flag, sample records
    backbone_<i>.feat   magic "URTF" | version u32 | n_samples u64 | dim u32
                        followed by n_samples rows of dim float32 (LE),
                        rows in ascending sample_id order
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, UnknownSampleError
from .mathops import l2_normalize

MAGIC = b"URTF"
FORMAT_VERSION = 1
SPLITS = ("train", "valid", "test")

_HEADER = struct.Struct("<4sIQI")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    domain_id: int
    class_id: int
    split: str


@dataclass
class SynthConfig:
    """Settings for the synthetic multi-domain generator."""

    domains: int = 4
    classes_per_domain_train: int = 20
    classes_per_domain_valid: int = 10
    classes_per_domain_test: int = 10
    samples_per_class_train: int = 30
    samples_per_class_valid: int = 30
    samples_per_class_test: int = 30
    dim: int = 64
    sigma_in: float = 0.1
    sigma_out: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.domains < 2:
            raise ConfigError(f"synth.domains must be >= 2, got {self.domains}")
        if self.dim < 2:
            raise ConfigError(f"synth.dim must be >= 2, got {self.dim}")
        if self.sigma_in <= 0 or self.sigma_out <= 0:
            raise ConfigError("synth.sigma_in and synth.sigma_out must be > 0")
        for split in SPLITS:
            if self.classes_for(split) < 0 or self.samples_for(split) < 0:
                raise ConfigError(f"negative class/sample count for split {split!r}")

    def classes_for(self, split: str) -> int:
        return getattr(self, f"classes_per_domain_{split}")

    def samples_for(self, split: str) -> int:
        return getattr(self, f"samples_per_class_{split}")


class FeatureStore:
    """Immutable map from (sample_id, backbone) to a float64 feature vector."""

    def __init__(
        self,
        num_backbones: int,
        dim: int,
        records: list[SampleRecord],
        features: np.ndarray,
        normalized: bool,
    ):
        if features.shape != (len(records), num_backbones, dim):
            raise FormatError(
                f"feature block shape {features.shape} does not match "
                f"{len(records)} records x {num_backbones} backbones x dim {dim}"
            )
        self.num_backbones = num_backbones
        self.dim = dim
        self.records = sorted(records, key=lambda r: r.sample_id)
        self.features = features
        self.normalized = normalized
        self._row_of = {r.sample_id: i for i, r in enumerate(self.records)}
        if len(self._row_of) != len(self.records):
            raise FormatError("duplicate sample_id in records")
        self._index_records()

    def _index_records(self) -> None:
        class_domain: dict[int, int] = {}
        class_split: dict[int, str] = {}
        samples_by_class: dict[int, list[int]] = {}
        classes_by_split_domain: dict[tuple[str, int], set[int]] = {}
        for r in self.records:
            if class_domain.setdefault(r.class_id, r.domain_id) != r.domain_id:
                raise FormatError(
                    f"class {r.class_id} appears in more than one domain"
                )
            if class_split.setdefault(r.class_id, r.split) != r.split:
                raise FormatError(
                    f"class {r.class_id} appears in more than one split"
                )
            samples_by_class.setdefault(r.class_id, []).append(r.sample_id)
            classes_by_split_domain.setdefault((r.split, r.domain_id), set()).add(r.class_id)
        self._class_domain = class_domain
        self._samples_by_class = {c: sorted(s) for c, s in samples_by_class.items()}
        self._classes_by_split_domain = {
            k: sorted(v) for k, v in classes_by_split_domain.items()
        }

    # -- lookups ---------------------------------------------------------

    def row(self, sample_id: int) -> int:
        try:
            return self._row_of[sample_id]
        except KeyError:
            raise UnknownSampleError(f"unknown sample_id {sample_id}") from None

    def feature(self, sample_id: int, backbone: int) -> np.ndarray:
        if not 0 <= backbone < self.num_backbones:
            raise UnknownSampleError(
                f"backbone index {backbone} out of range [0, {self.num_backbones})"
            )
        return self.features[self.row(sample_id), backbone]

    def backbone_features(self, sample_id: int) -> np.ndarray:
        """All backbone vectors for one sample, shape (m, d)."""
        return self.features[self.row(sample_id)]

    def fingerprint(self) -> str:
        """Hex sha256 of the manifest this store would serialize to."""
        return hashlib.sha256(_manifest_bytes(self)).hexdigest()

    def domain_ids(self) -> list[int]:
        return sorted({r.domain_id for r in self.records})

    def classes_in(self, split: str, domain_id: int | None = None) -> list[int]:
        if domain_id is not None:
            return list(self._classes_by_split_domain.get((split, domain_id), []))
        out: set[int] = set()
        for (s, _), classes in self._classes_by_split_domain.items():
            if s == split:
                out.update(classes)
        return sorted(out)

    def samples_of_class(self, class_id: int) -> list[int]:
        try:
            return list(self._samples_by_class[class_id])
        except KeyError:
            raise UnknownSampleError(f"unknown class_id {class_id}") from None

    def domain_of_class(self, class_id: int) -> int:
        try:
            return self._class_domain[class_id]
        except KeyError:
            raise UnknownSampleError(f"unknown class_id {class_id}") from None


def universal_representation(store: FeatureStore, sample_id: int) -> np.ndarray:
    """Concatenation of all backbone vectors for one sample, length m*d."""
    return store.backbone_features(sample_id).reshape(-1).copy()


# -- synthetic generation --------------------------------------------------


def generate_synthetic_store(cfg: SynthConfig) -> FeatureStore:
    """Build a store where exactly one backbone per domain is informative.

    For a sample of class c in domain t, backbone t emits the class
    signature plus tight noise; backbone i != t emits a fixed per
    (backbone, domain) vector plus looser noise. Everything is drawn from a
    single seeded generator, so identical configs give identical stores.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    m = cfg.domains

    # Fixed unit vector per (backbone, domain), used when backbone != domain.
    cross_vectors = np.empty((m, m, d))
    for i in range(m):
        for t in range(m):
            cross_vectors[i, t] = l2_normalize(rng.standard_normal(d))

    records: list[SampleRecord] = []
    rows: list[np.ndarray] = []
    sample_id = 0
    class_id = 0
    for split in SPLITS:
        n_classes = cfg.classes_for(split)
        n_samples = cfg.samples_for(split)
        for t in range(m):
            for _ in range(n_classes):
                signature = l2_normalize(rng.standard_normal(d))
                for _ in range(n_samples):
                    feats = np.empty((m, d))
                    for i in range(m):
                        if i == t:
                            noisy = signature + cfg.sigma_in * rng.standard_normal(d)
                        else:
                            noisy = cross_vectors[i, t] + cfg.sigma_out * rng.standard_normal(d)
                        feats[i] = l2_normalize(noisy)
                    records.append(SampleRecord(sample_id, t, class_id, split))
                    rows.append(feats)
                    sample_id += 1
                class_id += 1

    features = np.stack(rows) if rows else np.empty((0, m, d))
    return FeatureStore(m, d, records, features, normalized=True)


# -- persistence -------------------------------------------------------------


def _manifest_bytes(store: FeatureStore) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "num_backbones": store.num_backbones,
        "dim": store.dim,
        "normalized": store.normalized,
        "records": [
            {
                "sample_id": r.sample_id,
                "domain_id": r.domain_id,
                "class_id": r.class_id,
                "split": r.split,
            }
            for r in store.records
        ],
    }
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def save_store(store: FeatureStore, directory: str | Path) -> None:
    """Write manifest.json plus one backbone_<i>.feat file per backbone."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_bytes(_manifest_bytes(store))
    n = len(store.records)
    for i in range(store.num_backbones):
        header = _HEADER.pack(MAGIC, FORMAT_VERSION, n, store.dim)
        block = store.features[:, i, :].astype("<f4").tobytes()
        (directory / f"backbone_{i}.feat").write_bytes(header + block)


def store_fingerprint(directory: str | Path) -> str:
    """Hex sha256 of the manifest, used to tie trained models to a store."""
    manifest = Path(directory) / "manifest.json"
    if not manifest.is_file():
        raise FormatError(f"missing manifest.json in {directory}")
    return hashlib.sha256(manifest.read_bytes()).hexdigest()


def load_store(directory: str | Path) -> FeatureStore:
    """Read back a store written by save_store, validating every file."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest.json in {directory}")
    try:
        doc = json.loads(manifest_path.read_text("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"unparsable manifest.json: {exc}") from exc

    for key in ("format_version", "num_backbones", "dim", "normalized", "records"):
        if key not in doc:
            raise FormatError(f"manifest.json missing key {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(
            f"manifest.json declares unsupported version {doc['format_version']} "
            f"(expected {FORMAT_VERSION})"
        )
    m = int(doc["num_backbones"])
    d = int(doc["dim"])
    try:
        records = [
            SampleRecord(
                int(r["sample_id"]), int(r["domain_id"]), int(r["class_id"]), str(r["split"])
            )
            for r in doc["records"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed record in manifest.json: {exc}") from exc
    for r in records:
        if r.split not in SPLITS:
            raise FormatError(f"manifest.json: unknown split {r.split!r}")

    n = len(records)
    order = np.argsort([r.sample_id for r in records], kind="stable")
    records = [records[i] for i in order]

    features = np.empty((n, m, d))
    for i in range(m):
        path = directory / f"backbone_{i}.feat"
        if not path.is_file():
            raise FormatError(f"missing feature file {path.name}")
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise FormatError(f"truncated header in {path.name}")
        magic, version, n_samples, dim = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise FormatError(f"bad magic in {path.name}")
        if version != FORMAT_VERSION:
            raise FormatError(
                f"unsupported version {version} in {path.name} (expected {FORMAT_VERSION})"
            )
        if dim != d:
            raise FormatError(
                f"{path.name} declares dim {dim}, manifest says {d}"
            )
        if n_samples != n:
            raise FormatError(
                f"{path.name} declares {n_samples} samples, manifest lists {n}"
            )
        body = raw[_HEADER.size:]
        expected = n * d * 4
        if len(body) != expected:
            raise FormatError(
                f"{path.name} holds {len(body)} feature bytes, expected {expected}"
            )
        features[:, i, :] = np.frombuffer(body, dtype="<f4").reshape(n, d)

    return FeatureStore(m, d, records, features, normalized=bool(doc["normalized"]))
