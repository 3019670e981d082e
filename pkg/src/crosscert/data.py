"""Multi-domain datasets with controllable spurious correlations.

Two generators share one output shape. The colorized-digit builder turns
grayscale digit images into a binary task where a color channel carries a
per-domain spurious signal. The synthetic generator draws from an explicit
structural model: a causal block whose class-conditional law never changes
across domains, one spurious coordinate whose agreement with the observed
label is set per domain, and a fixed orthogonal mixing map so concept-space
and input-space distances coincide.

In both, the observed label is a noisy copy of the causal label, and the
spurious signal aligns with the observed label. That makes the spurious
channel strictly more predictive than the causal one inside the training
domains, which is the failure mode invariant training is meant to resist.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .errors import (CacheFormatError, ConfigError, IdxBadMagicError,
                     IdxDimensionError, IdxTruncatedError)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
_MAX_IDX_DIM = 100_000_000


@dataclass
class Environment:
    """Labeled examples from one domain."""
    domain_id: int
    x: np.ndarray
    y: np.ndarray
    spurious_strength: float


@dataclass
class EnvDataset:
    environments: list[Environment]
    num_classes: int
    input_dim: int
    metadata: dict = field(default_factory=dict)

    def env_by_id(self, domain_id: int) -> Environment:
        for env in self.environments:
            if env.domain_id == domain_id:
                return env
        raise ValueError(f"no environment with domain id {domain_id}")


@dataclass
class ScmSpec:
    """Recipe for the structural generator.

    The causal block c follows N(mu_y, noise_scale^2 I) for the pre-noise
    label y; the spurious block puts +/-magnitude on its first coordinate,
    agreeing with the observed (post-noise) label with the per-domain
    strength; x mixes both blocks through the fixed orthogonal map.
    """
    mu0: np.ndarray
    mu1: np.ndarray
    noise_scale: float
    spurious_dim: int
    spurious_magnitude: float
    mixing: np.ndarray
    strengths: list[float]
    label_noise: float

    @property
    def causal_dim(self) -> int:
        return len(self.mu0)

    @property
    def input_dim(self) -> int:
        return self.causal_dim + self.spurious_dim


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix via QR with a sign-fixed R diagonal."""
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def read_idx(path):
    """Parse one IDX file into images (rows scaled to [0,1]) or labels."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the magic number")
    (magic,) = struct.unpack(">i", blob[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise IdxBadMagicError(f"{path}: bad magic {magic}, expected "
                               f"{IDX_IMAGES_MAGIC} (images) or {IDX_LABELS_MAGIC} (labels)")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}i", blob[4:header_len])
    for d in dims:
        if d < 0 or d > _MAX_IDX_DIM:
            raise IdxDimensionError(f"{path}: dimension {d} out of sane range")
    count = int(np.prod(dims, dtype=np.int64)) if dims else 0
    payload = blob[header_len:]
    if len(payload) < count:
        raise IdxTruncatedError(f"{path}: payload has {len(payload)} bytes, "
                                f"dimensions {dims} require {count}")
    data = np.frombuffer(payload[:count], dtype=np.uint8)
    if magic == IDX_LABELS_MAGIC:
        return data.astype(np.int64)
    per_image = dims[1] * dims[2]
    return data.reshape(dims[0], per_image).astype(np.float64) / 255.0


def make_cmnist(images: np.ndarray, labels: np.ndarray, strengths: list[float],
                label_noise: float, rng: np.random.Generator) -> EnvDataset:
    """Binary colorized-digit task with per-domain color-label agreement.

    Digits 0-4 map to class 0 and 5-9 to class 1, each label flips with
    probability label_noise, and the image lands in color channel equal to
    the label with the domain's strength (otherwise the opposite channel).
    Output rows are the two flattened channels back to back.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.size == 0:
        raise ValueError("empty image set")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    for s in strengths:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"spurious strength must lie in [0,1], got {s}")
    if not 0.0 <= label_noise <= 1.0:
        raise ValueError(f"label noise must lie in [0,1], got {label_noise}")
    pixels = images.shape[1]
    chunks = np.array_split(np.arange(images.shape[0]), len(strengths))
    environments = []
    for domain_id, (idx, strength) in enumerate(zip(chunks, strengths)):
        n = len(idx)
        if n == 0:
            raise ValueError(f"not enough images to populate environment {domain_id}")
        y_causal = (labels[idx] >= 5).astype(np.int64)
        flip = rng.random(n) < label_noise
        y = np.where(flip, 1 - y_causal, y_causal)
        aligned = rng.random(n) < strength
        color = np.where(aligned, y, 1 - y)
        x = np.zeros((n, 2 * pixels))
        imgs = images[idx]
        in_first = color == 0
        x[in_first, :pixels] = imgs[in_first]
        x[~in_first, pixels:] = imgs[~in_first]
        environments.append(Environment(domain_id, x, y, float(strength)))
    return EnvDataset(environments, num_classes=2, input_dim=2 * pixels,
                      metadata={"generator": "cmnist", "label_noise": label_noise})


def make_scm(spec: ScmSpec, n_per_env: int, rng: np.random.Generator) -> EnvDataset:
    """Sample every domain of the structural model."""
    mu = np.stack([np.asarray(spec.mu0, dtype=np.float64),
                   np.asarray(spec.mu1, dtype=np.float64)])
    if mu.shape[0] != 2 or mu[0].shape != mu[1].shape:
        raise ConfigError("class means must be two vectors of equal length")
    dim = spec.input_dim
    q = np.asarray(spec.mixing, dtype=np.float64)
    if q.shape != (dim, dim):
        raise ConfigError(f"mixing map must be {dim}x{dim}, got {q.shape}")
    if np.abs(q.T @ q - np.eye(dim)).max() > 1e-9:
        raise ConfigError("mixing map is not orthogonal")
    if spec.noise_scale < 0 or spec.spurious_magnitude < 0:
        raise ConfigError("noise scale and spurious magnitude must be non-negative")
    if not 0.0 <= spec.label_noise <= 1.0:
        raise ConfigError(f"label noise must lie in [0,1], got {spec.label_noise}")
    if n_per_env < 1:
        raise ConfigError(f"n_per_env must be >= 1, got {n_per_env}")
    environments = []
    for domain_id, strength in enumerate(spec.strengths):
        if not 0.0 <= strength <= 1.0:
            raise ConfigError(f"spurious strength must lie in [0,1], got {strength}")
        y_causal = rng.integers(0, 2, n_per_env)
        flip = rng.random(n_per_env) < spec.label_noise
        y = np.where(flip, 1 - y_causal, y_causal)
        c = mu[y_causal] + spec.noise_scale * rng.standard_normal((n_per_env, spec.causal_dim))
        aligned = rng.random(n_per_env) < strength
        bit = np.where(aligned, y, 1 - y)
        s = np.zeros((n_per_env, spec.spurious_dim))
        s[:, 0] = spec.spurious_magnitude * (2 * bit - 1)
        x = np.concatenate([c, s], axis=1) @ q.T
        environments.append(Environment(domain_id, x, y.astype(np.int64), float(strength)))
    return EnvDataset(environments, num_classes=2, input_dim=dim,
                      metadata={"generator": "scm", "label_noise": spec.label_noise})


def split(dataset: EnvDataset, train_env_ids: list[int], test_env_id: int
          ) -> tuple[EnvDataset, EnvDataset]:
    """Partition a dataset into training domains and one held-out domain."""
    if test_env_id in train_env_ids:
        raise ValueError(f"test environment {test_env_id} overlaps the training ids")
    if len(set(train_env_ids)) != len(train_env_ids):
        raise ValueError(f"duplicate training environment ids: {train_env_ids}")
    present = {env.domain_id for env in dataset.environments}
    missing = (set(train_env_ids) | {test_env_id}) - present
    if missing:
        raise ValueError(f"environment ids {sorted(missing)} not present in the dataset")
    train_envs = [env for env in dataset.environments if env.domain_id in train_env_ids]
    test_envs = [env for env in dataset.environments if env.domain_id == test_env_id]
    train = EnvDataset(train_envs, dataset.num_classes, dataset.input_dim, dict(dataset.metadata))
    test = EnvDataset(test_envs, dataset.num_classes, dataset.input_dim, dict(dataset.metadata))
    return train, test


def save_dataset(path, dataset: EnvDataset) -> None:
    arrays = {}
    for i, env in enumerate(dataset.environments):
        arrays[f"env{i}_x"] = env.x
        arrays[f"env{i}_y"] = env.y
    meta = {
        "schema": 1,
        "kind": "dataset",
        "num_classes": dataset.num_classes,
        "input_dim": dataset.input_dim,
        "domain_ids": [env.domain_id for env in dataset.environments],
        "strengths": [env.spurious_strength for env in dataset.environments],
        "metadata": dataset.metadata,
    }
    write_container(path, meta, arrays)


def load_dataset(path) -> EnvDataset:
    meta, arrays = read_container(path)
    if meta.get("kind") != "dataset" or meta.get("schema") != 1:
        raise CacheFormatError(f"{path} is not a dataset cache")
    environments = []
    for i, (domain_id, strength) in enumerate(zip(meta["domain_ids"], meta["strengths"])):
        environments.append(Environment(domain_id, arrays[f"env{i}_x"],
                                        arrays[f"env{i}_y"], strength))
    return EnvDataset(environments, meta["num_classes"], meta["input_dim"], meta["metadata"])
