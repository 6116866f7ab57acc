"""Skeleton/embedding containers, binary file I/O, preprocessing and the
synthetic dataset generator.

On-disk formats (all little-endian):

SMSK skeleton file::

    b"SMSK" | u32 version=1 | u32 K | u32 J | u32 C | K*J*C float32 (frame, joint, channel)

SMEM embedding file::

    b"SMEM" | u32 version=1 | u32 D | D float32

The manifest is a JSON object ``{"classes": [...], "samples": [...]}`` with
paths relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

SKELETON_MAGIC = b"SMSK"
EMBEDDING_MAGIC = b"SMEM"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DEFAULT_FRAMES = 50


class DataError(ValueError):
    """Malformed dataset input (bad file, bad manifest, bad split)."""


@dataclass(frozen=True)
class SkeletonSequence:
    """K x J x C joint coordinates, stored as float64 in memory."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise DataError(f"skeleton must be a non-empty K x J x C array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("skeleton contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def C(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SemanticEmbedding:
    class_id: int
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class ClassEntry:
    id: int
    name: str
    embedding: str


@dataclass(frozen=True)
class SampleEntry:
    id: int
    class_id: int
    skeleton: str
    # "train", "test", or None (usable as either)
    subset: Optional[str] = None


@dataclass
class DatasetManifest:
    root: Path
    classes: list[ClassEntry]
    samples: list[SampleEntry]

    @property
    def class_ids(self) -> list[int]:
        return [c.id for c in self.classes]

    def class_name(self, class_id: int) -> str:
        for c in self.classes:
            if c.id == class_id:
                return c.name
        raise KeyError(class_id)

    def to_json(self) -> dict:
        samples = []
        for s in self.samples:
            rec = {"id": s.id, "class_id": s.class_id, "skeleton": s.skeleton}
            if s.subset is not None:
                rec["subset"] = s.subset
            samples.append(rec)
        return {
            "classes": [{"id": c.id, "name": c.name, "embedding": c.embedding} for c in self.classes],
            "samples": samples,
        }


@dataclass(frozen=True)
class ClassSplit:
    seen: frozenset
    unseen: frozenset

    def __post_init__(self):
        object.__setattr__(self, "seen", frozenset(int(c) for c in self.seen))
        object.__setattr__(self, "unseen", frozenset(int(c) for c in self.unseen))
        if not self.seen or not self.unseen:
            raise DataError("split needs non-empty seen and unseen sets")
        overlap = self.seen & self.unseen
        if overlap:
            raise DataError(f"seen and unseen overlap: {sorted(overlap)}")

    def validate_against(self, manifest: DatasetManifest) -> None:
        unknown = (self.seen | self.unseen) - set(manifest.class_ids)
        if unknown:
            raise DataError(f"split references unknown classes {sorted(unknown)}")

    def to_json(self) -> dict:
        return {"seen": sorted(self.seen), "unseen": sorted(self.unseen)}


@dataclass
class SynthConfig:
    n_classes: int = 10
    n_seen: int = 7
    samples_per_class_train: int = 200
    samples_per_class_test: int = 50
    K: int = DEFAULT_FRAMES
    J: int = 8
    C: int = 3
    D_s: int = 32
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        counts = {k: getattr(self, k) for k in
                  ("n_classes", "n_seen", "samples_per_class_train", "samples_per_class_test",
                   "K", "J", "C", "D_s")}
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise DataError(f"{name} must be a positive integer, got {value!r}")
        if self.n_seen >= self.n_classes:
            raise DataError("n_seen must be smaller than n_classes")
        if not self.noise_sigma >= 0:
            raise DataError("noise_sigma must be >= 0")


# ---------------------------------------------------------------------------
# binary files


def _write_blob(path, magic: bytes, dims: Iterable[int], payload: np.ndarray) -> None:
    dims = list(dims)
    header = magic + struct.pack("<" + "I" * (1 + len(dims)), FORMAT_VERSION, *dims)
    data = np.ascontiguousarray(payload, dtype="<f4").tobytes()
    Path(path).write_bytes(header + data)


def _read_blob(path, magic: bytes, n_dims: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    head = 4 + 4 * (1 + n_dims)
    if raw[:4] != magic:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    if len(raw) < head:
        raise DataError(f"{path}: truncated header")
    version, *dims = struct.unpack("<" + "I" * (1 + n_dims), raw[4:head])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    count = int(np.prod(dims))
    if len(raw) - head != 4 * count:
        raise DataError(f"{path}: truncated payload ({len(raw) - head} bytes for {count} values)")
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=head).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite value in payload")
    return tuple(dims), values


def write_skeleton(path, seq: SkeletonSequence) -> None:
    _write_blob(path, SKELETON_MAGIC, seq.values.shape, seq.values)


def read_skeleton(path) -> SkeletonSequence:
    dims, values = _read_blob(path, SKELETON_MAGIC, 3)
    if min(dims) < 1:
        raise DataError(f"{path}: empty skeleton dims {dims}")
    return SkeletonSequence(values.reshape(dims))


def write_embedding(path, vector: np.ndarray) -> None:
    vector = np.asarray(vector)
    _write_blob(path, EMBEDDING_MAGIC, [vector.shape[0]], vector)


def read_embedding(path) -> np.ndarray:
    _, values = _read_blob(path, EMBEDDING_MAGIC, 1)
    return values


# ---------------------------------------------------------------------------
# manifest and splits


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest; ``path`` may be the JSON file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    root = path.parent

    raw_classes = doc.get("classes") or []
    if not raw_classes:
        raise DataError("no classes")
    classes = []
    seen_ids = set()
    for rec in raw_classes:
        cid = int(rec["id"])
        if cid in seen_ids:
            raise DataError(f"duplicate class_id {cid}")
        seen_ids.add(cid)
        entry = ClassEntry(cid, str(rec.get("name", cid)), str(rec["embedding"]))
        if not (root / entry.embedding).is_file():
            raise DataError(f"class {cid}: missing embedding file {entry.embedding}")
        classes.append(entry)

    samples = []
    sample_ids = set()
    for rec in doc.get("samples", []):
        sid = int(rec["id"])
        if sid in sample_ids:
            raise DataError(f"duplicate sample id {sid}")
        sample_ids.add(sid)
        entry = SampleEntry(sid, int(rec["class_id"]), str(rec["skeleton"]), rec.get("subset"))
        if entry.class_id not in seen_ids:
            raise DataError(f"sample {sid}: unknown class_id {entry.class_id}")
        if entry.subset not in (None, "train", "test"):
            raise DataError(f"sample {sid}: subset must be 'train' or 'test', got {entry.subset!r}")
        if not (root / entry.skeleton).is_file():
            raise DataError(f"sample {sid}: missing skeleton file {entry.skeleton}")
        samples.append(entry)
    return DatasetManifest(root, classes, samples)


def save_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path is not None else manifest.root / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_json(), indent=1) + "\n")
    return path


def read_split(path) -> ClassSplit:
    doc = json.loads(Path(path).read_text())
    try:
        return ClassSplit(doc["seen"], doc["unseen"])
    except KeyError as exc:
        raise DataError(f"{path}: split file lacks {exc}") from None


def write_split(path, split: ClassSplit) -> None:
    Path(path).write_text(json.dumps(split.to_json()) + "\n")


def make_splits(manifest: DatasetManifest, n_unseen: int, n_folds: int, seed: int) -> list[ClassSplit]:
    ids = sorted(manifest.class_ids)
    if not 1 <= n_unseen < len(ids):
        raise DataError(f"n_unseen must be in [1, {len(ids) - 1}], got {n_unseen}")
    if n_folds < 1:
        raise DataError("n_folds must be >= 1")
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(n_folds):
        unseen = rng.choice(ids, size=n_unseen, replace=False)
        splits.append(ClassSplit(set(ids) - set(unseen.tolist()), unseen.tolist()))
    return splits


# ---------------------------------------------------------------------------
# preprocessing


def l2_normalize(vector, class_id: int = -1) -> SemanticEmbedding:
    vector = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0 or not np.isfinite(norm):
        raise DataError("cannot normalize a zero or non-finite vector")
    return SemanticEmbedding(class_id, vector / norm)


def drop_invalid_frames(seq: SkeletonSequence) -> SkeletonSequence:
    """Remove frames whose coordinates are all exactly zero."""
    valid = np.any(seq.values != 0, axis=(1, 2))
    if not valid.any():
        raise DataError("all frames are invalid (all-zero)")
    if valid.all():
        return seq
    return SkeletonSequence(seq.values[valid])


def resample_time(seq: SkeletonSequence, k_target: int) -> SkeletonSequence:
    """Endpoint-aligned linear interpolation along time to ``k_target`` frames."""
    if k_target < 1:
        raise DataError("k_target must be positive")
    K = seq.K
    if k_target == K:
        return seq
    if K == 1 or k_target == 1:
        return SkeletonSequence(np.repeat(seq.values[:1], k_target, axis=0))
    pos = np.arange(k_target) * (K - 1) / (k_target - 1)
    lo = np.minimum(np.floor(pos).astype(int), K - 2)
    frac = (pos - lo)[:, None, None]
    values = (1.0 - frac) * seq.values[lo] + frac * seq.values[lo + 1]
    return SkeletonSequence(values)


def preprocess(seq: SkeletonSequence, k_target: int = DEFAULT_FRAMES) -> SkeletonSequence:
    return resample_time(drop_invalid_frames(seq), k_target)


# ---------------------------------------------------------------------------
# dataset access


class Dataset:
    """A loaded manifest with lazily read, cached skeletons and embeddings."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._sequences: dict[int, SkeletonSequence] = {}
        self._embeddings: dict[int, np.ndarray] = {}
        self._by_id = {s.id: s for s in manifest.samples}

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls(load_manifest(path))

    def sequence(self, sample_id: int) -> SkeletonSequence:
        if sample_id not in self._sequences:
            entry = self._by_id[sample_id]
            self._sequences[sample_id] = read_skeleton(self.manifest.root / entry.skeleton)
        return self._sequences[sample_id]

    def embedding(self, class_id: int) -> np.ndarray:
        """L2-normalized semantic vector of a class."""
        if class_id not in self._embeddings:
            for c in self.manifest.classes:
                if c.id == class_id:
                    raw = read_embedding(self.manifest.root / c.embedding)
                    self._embeddings[class_id] = l2_normalize(raw, class_id).vector
                    break
            else:
                raise KeyError(class_id)
        return self._embeddings[class_id]

    def samples(self, class_ids, subset: Optional[str] = None) -> list[SampleEntry]:
        """Samples of the given classes in id order; ``subset`` filters train/test."""
        class_ids = set(class_ids)
        out = [s for s in self.manifest.samples
               if s.class_id in class_ids and (subset is None or s.subset in (None, subset))]
        return sorted(out, key=lambda s: s.id)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class _ClassDynamics:
    amplitude: np.ndarray  # J x C
    phase: np.ndarray  # J x C
    frequency: float


AMPLITUDE_GAIN = 0.2
PHASE_GAIN = 0.2
FREQUENCY_GAIN = 0.3


def class_dynamics(semantic: np.ndarray, J: int, C: int, seed: int) -> _ClassDynamics:
    """Map a unit semantic vector to motion parameters via fixed seeded projections.

    The projections depend only on ``seed`` and the dimensions, so every class
    is mapped by the same (mostly linear) function of its semantic vector.
    """
    D = semantic.shape[0]
    rng = np.random.default_rng([seed, 0x5EED])
    proj_amp = rng.standard_normal((J * C, D))
    proj_phase = rng.standard_normal((J * C, D))
    proj_freq = rng.standard_normal(D)
    base_phase = rng.uniform(0.0, 2.0 * np.pi, J * C)
    amplitude = 1.0 + AMPLITUDE_GAIN * (proj_amp @ semantic)
    phase = base_phase + PHASE_GAIN * (proj_phase @ semantic)
    # logistic squash into [1, 4] cycles per sequence
    frequency = 1.0 + 3.0 / (1.0 + np.exp(-FREQUENCY_GAIN * (proj_freq @ semantic)))
    return _ClassDynamics(amplitude.reshape(J, C), phase.reshape(J, C), float(frequency))


def synth_sequence(dyn: _ClassDynamics, K: int, noise_sigma: float, rng) -> np.ndarray:
    t = np.arange(K)[:, None, None] / K
    clean = dyn.amplitude * np.sin(2.0 * np.pi * dyn.frequency * t + dyn.phase)
    if noise_sigma > 0:
        clean = clean + noise_sigma * rng.standard_normal(clean.shape)
    return clean


def generate_synthetic(config: SynthConfig, out_dir) -> tuple[DatasetManifest, ClassSplit]:
    """Write a synthetic dataset (embeddings, skeletons, manifest, default split)."""
    config.validate()
    out = Path(out_dir)
    (out / "embeddings").mkdir(parents=True, exist_ok=True)
    (out / "skeletons").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    classes, samples = [], []
    sample_id = 0
    for cid in range(config.n_classes):
        a = rng.standard_normal(config.D_s)
        a /= np.linalg.norm(a)
        emb_rel = f"embeddings/class_{cid:03d}.smem"
        write_embedding(out / emb_rel, a)
        # dynamics are derived from the float32 vector that lands on disk
        a_disk = a.astype(np.float32).astype(np.float64)
        dyn = class_dynamics(a_disk, config.J, config.C, config.seed)
        classes.append(ClassEntry(cid, f"action_{cid:03d}", emb_rel))
        for subset, count in (("train", config.samples_per_class_train),
                              ("test", config.samples_per_class_test)):
            for _ in range(count):
                values = synth_sequence(dyn, config.K, config.noise_sigma, rng)
                rel = f"skeletons/sample_{sample_id:06d}.smsk"
                write_skeleton(out / rel, SkeletonSequence(values))
                samples.append(SampleEntry(sample_id, cid, rel, subset))
                sample_id += 1

    manifest = DatasetManifest(out, classes, samples)
    save_manifest(manifest)
    split = ClassSplit(range(config.n_seen), range(config.n_seen, config.n_classes))
    write_split(out / "split.json", split)
    return manifest, split
