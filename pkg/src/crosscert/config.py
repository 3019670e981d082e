"""Declarative run configuration.

A single JSON document with an explicit schema version and five sections:
dataset, model, train, certify, eval. Unknown keys anywhere are rejected,
every value is range-checked against the consuming module's preconditions
before any work starts, and the parsed object carries plain dataclasses the
pipeline stages consume directly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .certify import SmoothingConfig
from .data import ScmSpec, random_orthogonal
from .errors import ConfigError
from .evaluation import EXPERIMENT_VARIANTS, RadiusGrid
from .rng import KEY_DATA, stream
from .training import TrainConfig

SCHEMA_VERSION = 1

_DATASET_KEYS = {"generator", "seed", "strengths", "label_noise", "n_per_env",
                 "images", "labels", "causal_dim", "noise_scale", "spurious_dim",
                 "spurious_magnitude", "class_separation", "train_envs", "test_env"}
_MODEL_KEYS = {"widths", "group_size", "variant"}
_TRAIN_KEYS = {"lambda", "sigma_train", "lr", "epochs", "batch", "seed"}
_CERTIFY_KEYS = {"sigma", "n0", "n", "alpha", "space", "subsample"}
_EVAL_KEYS = {"grid", "seeds"}


@dataclass
class DatasetSection:
    generator: str = "scm"
    seed: int = 0
    strengths: list = field(default_factory=lambda: [0.9, 0.8, 0.1])
    label_noise: float = 0.25
    n_per_env: int = 2000
    images: str | None = None
    labels: str | None = None
    causal_dim: int = 8
    noise_scale: float = 0.8
    spurious_dim: int = 2
    spurious_magnitude: float = 1.5
    class_separation: float = 2.4
    train_envs: list = field(default_factory=lambda: [0, 1])
    test_env: int = 2


@dataclass
class ModelSection:
    widths: list = field(default_factory=lambda: [16, 16])
    group_size: int = 2
    variant: str = "full"


@dataclass
class EvalSection:
    grid: RadiusGrid = None
    seeds: list = field(default_factory=lambda: [0])


@dataclass
class RunConfig:
    dataset: DatasetSection
    model: ModelSection
    train: TrainConfig
    certify: SmoothingConfig
    eval: EvalSection
    subsample: int | None = None
    sha256: str = ""

    def override_seed(self, seed: int) -> None:
        """Apply a CLI-level seed to every stage that owns one."""
        self.dataset.seed = seed
        self.train.seed = seed
        self.eval.seeds = [seed]


def _require_keys(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_config(doc: dict, sha256: str = "") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(doc, {"schema_version", "dataset", "model", "train", "certify", "eval"},
                  "<root>")
    _expect(doc.get("schema_version") == SCHEMA_VERSION,
            f"schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")

    ds_doc = doc.get("dataset", {})
    _require_keys(ds_doc, _DATASET_KEYS, "dataset")
    ds = DatasetSection(**ds_doc)
    _expect(ds.generator in ("scm", "cmnist"),
            f"dataset.generator must be 'scm' or 'cmnist', got {ds.generator!r}")
    _expect(ds.seed >= 0, f"dataset.seed must be >= 0, got {ds.seed}")
    _expect(len(ds.strengths) >= 2, "dataset.strengths needs at least two environments")
    for s in ds.strengths:
        _expect(0.0 <= s <= 1.0, f"dataset strengths must lie in [0,1], got {s}")
    _expect(0.0 <= ds.label_noise <= 1.0,
            f"dataset.label_noise must lie in [0,1], got {ds.label_noise}")
    _expect(ds.n_per_env >= 1, f"dataset.n_per_env must be >= 1, got {ds.n_per_env}")
    _expect(ds.causal_dim >= 1, f"dataset.causal_dim must be >= 1, got {ds.causal_dim}")
    _expect(ds.spurious_dim >= 1,
            f"dataset.spurious_dim must be >= 1, got {ds.spurious_dim}")
    _expect(ds.noise_scale > 0, f"dataset.noise_scale must be > 0, got {ds.noise_scale}")
    _expect(ds.spurious_magnitude >= 0,
            f"dataset.spurious_magnitude must be >= 0, got {ds.spurious_magnitude}")
    if ds.generator == "cmnist":
        _expect(bool(ds.images) and bool(ds.labels),
                "missing source files: cmnist needs dataset.images and dataset.labels paths")
    env_ids = list(range(len(ds.strengths)))
    _expect(all(e in env_ids for e in ds.train_envs) and ds.test_env in env_ids,
            f"train_envs/test_env must index the {len(env_ids)} configured environments")
    _expect(ds.test_env not in ds.train_envs,
            f"test_env {ds.test_env} overlaps train_envs {ds.train_envs}")

    model_doc = doc.get("model", {})
    _require_keys(model_doc, _MODEL_KEYS, "model")
    model = ModelSection(**model_doc)
    _expect(model.variant in EXPERIMENT_VARIANTS,
            f"model.variant must be one of {EXPERIMENT_VARIANTS}, got {model.variant!r}")
    _expect(len(model.widths) >= 0 and all(isinstance(w, int) and w >= 1
                                           for w in model.widths),
            f"model.widths must be positive integers, got {model.widths}")
    _expect(all(w == model.widths[0] for w in model.widths),
            f"encoder layers must share one square width, got {model.widths}")
    _expect(model.group_size >= 1,
            f"model.group_size must be >= 1, got {model.group_size}")
    if model.widths:
        _expect(model.widths[0] % model.group_size == 0,
                f"width {model.widths[0]} not divisible by group size {model.group_size}")

    train_doc = dict(doc.get("train", {}))
    _require_keys(train_doc, _TRAIN_KEYS, "train")
    train_cfg = TrainConfig(
        penalty_weight=float(train_doc.get("lambda", 300.0)),
        sigma_train=float(train_doc.get("sigma_train",
                                        doc.get("certify", {}).get("sigma", 0.12))),
        learning_rate=float(train_doc.get("lr", 0.0003)),
        epochs=int(train_doc.get("epochs", 2000)),
        batch_size=int(train_doc.get("batch", 4096)),
        seed=int(train_doc.get("seed", 0)))
    train_cfg.validate()
    _expect(train_cfg.seed >= 0, f"train.seed must be >= 0, got {train_cfg.seed}")

    cert_doc = dict(doc.get("certify", {}))
    _require_keys(cert_doc, _CERTIFY_KEYS, "certify")
    subsample = cert_doc.pop("subsample", None)
    if subsample is not None:
        subsample = int(subsample)
        _expect(subsample >= 1, f"certify.subsample must be >= 1, got {subsample}")
    cert = SmoothingConfig(
        sigma=float(cert_doc.get("sigma", 0.12)),
        n0=int(cert_doc.get("n0", 100)),
        n=int(cert_doc.get("n", 10000)),
        alpha=float(cert_doc.get("alpha", 0.001)),
        space=str(cert_doc.get("space", "latent")))
    cert.validate()

    eval_doc = doc.get("eval", {})
    _require_keys(eval_doc, _EVAL_KEYS, "eval")
    grid = RadiusGrid(eval_doc["grid"]) if "grid" in eval_doc else RadiusGrid.default()
    seeds = [int(s) for s in eval_doc.get("seeds", [0])]
    _expect(len(seeds) >= 1 and all(s >= 0 for s in seeds),
            f"eval.seeds must be non-negative and nonempty, got {seeds}")
    eval_section = EvalSection(grid=grid, seeds=seeds)

    return RunConfig(dataset=ds, model=model, train=train_cfg, certify=cert,
                     eval=eval_section, subsample=subsample, sha256=sha256)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        return parse_config(doc, sha256=hashlib.sha256(raw).hexdigest())
    except TypeError as exc:
        # Wrong value type for a dataclass field surfaces here.
        raise ConfigError(f"config {path}: {exc}") from exc


def scm_spec_from_config(ds: DatasetSection) -> ScmSpec:
    """Structural recipe implied by the dataset section, mixing map included."""
    mu = np.zeros(ds.causal_dim)
    mu[0] = 0.5 * ds.class_separation
    dim = ds.causal_dim + ds.spurious_dim
    mixing = random_orthogonal(dim, stream(ds.seed, KEY_DATA, 0))
    return ScmSpec(mu0=-mu, mu1=mu.copy(), noise_scale=ds.noise_scale,
                   spurious_dim=ds.spurious_dim,
                   spurious_magnitude=ds.spurious_magnitude, mixing=mixing,
                   strengths=list(ds.strengths), label_noise=ds.label_noise)
