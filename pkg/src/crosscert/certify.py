"""Monte Carlo certification of smoothed classifiers.

Certification runs in one of two spaces. In latent mode the input is
encoded once, isotropic Gaussian noise is added to the latent code, and the
classifier head is smoothed; the certified latent radius divides by the
encoder's Lipschitz bound to give an input-space radius. In input mode the
noise is added to the raw input and the whole network is smoothed, which is
the plain Gaussian-smoothing baseline (Lipschitz factor 1 by construction).

The procedure per point: a small selection round picks the candidate class,
a fresh estimation round feeds an exact one-sided binomial lower confidence
bound on the candidate's probability, and the radius follows from the
Gaussian quantile of that bound. Insufficient evidence yields an abstention
with zero radius, never an error.
"""

from __future__ import annotations

import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import ConfigError
from .rng import KEY_CERTIFY, gauss_sample, stream
from .stats import binom_two_sided_pvalue, clopper_pearson_lower, std_normal_inv_cdf

ABSTAIN = -1
_CHUNK = 1000
_TOP_P_CLAMP = 1.0 - 1e-12

SPACES = ("latent", "input")


@dataclass
class SmoothingConfig:
    sigma: float
    n0: int = 100
    n: int = 100_000
    alpha: float = 0.001
    space: str = "latent"

    def validate(self) -> None:
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.n0 < 1 or self.n < 1:
            raise ConfigError(f"sample counts must be >= 1, got n0={self.n0}, n={self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie strictly in (0,1), got {self.alpha}")
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}, got {self.space!r}")


@dataclass
class CertificationRecord:
    index: int
    label: int
    prediction: int
    pa_lower: float
    cr_latent: float
    cr_input: float
    correct: bool

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN


def _counts_over_noise(eval_logits, dim: int, m: int, sigma: float,
                       rng: np.random.Generator, num_classes: int) -> np.ndarray:
    """Histogram of argmax classes over m noisy evaluations, in fixed chunks."""
    counts = np.zeros(num_classes, dtype=np.int64)
    done = 0
    while done < m:
        size = min(_CHUNK, m - done)
        noise = gauss_sample(rng, (size, dim), sigma)
        logits = eval_logits(noise)
        counts += np.bincount(logits.argmax(axis=1), minlength=num_classes)
        done += size
    return counts


def _latent_evaluator(model: nets.Model, z: np.ndarray):
    w_t = model.classifier_weight.T
    b = model.classifier_bias
    return lambda noise: (z + noise) @ w_t + b


def _input_evaluator(model: nets.Model, x: np.ndarray):
    return lambda noise: nets.classify(model, nets.encode(model, x + noise))


def sample_counts(model: nets.Model, point: np.ndarray, m: int,
                  config: SmoothingConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-class counts of the base classifier under m noise draws."""
    if m < 1:
        raise ConfigError(f"sample count must be >= 1, got {m}")
    point = np.asarray(point, dtype=np.float64)
    if config.space == "latent":
        z = nets.encode(model, point)
        return _counts_over_noise(_latent_evaluator(model, z), model.latent_dim,
                                  m, config.sigma, rng, model.num_classes)
    return _counts_over_noise(_input_evaluator(model, point), model.input_dim,
                              m, config.sigma, rng, model.num_classes)


def map_radius(cr_latent: float, lipschitz: float) -> float:
    """Input-space radius certified by a latent radius through an L-Lipschitz encoder."""
    if lipschitz <= 0:
        raise ValueError(f"Lipschitz constant must be > 0, got {lipschitz}")
    if cr_latent < 0:
        raise ValueError(f"latent radius must be >= 0, got {cr_latent}")
    return cr_latent / lipschitz


def certify(model: nets.Model, x: np.ndarray, y: int, config: SmoothingConfig,
            rng: np.random.Generator, index: int = 0,
            lipschitz: float | None = None) -> CertificationRecord:
    """Certified prediction for one point, or an abstention.

    The selection and estimation rounds consume disjoint stretches of the
    given stream, so they are independent as the confidence bound requires.
    """
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    if config.space == "latent":
        z = nets.encode(model, x)
        evaluator = _latent_evaluator(model, z)
        dim = model.latent_dim
        if lipschitz is None:
            lipschitz = nets.model_lipschitz_bound(model)
    else:
        evaluator = _input_evaluator(model, x)
        dim = model.input_dim
        lipschitz = 1.0
    counts0 = _counts_over_noise(evaluator, dim, config.n0, config.sigma, rng,
                                 model.num_classes)
    candidate = int(counts0.argmax())
    counts = _counts_over_noise(evaluator, dim, config.n, config.sigma, rng,
                                model.num_classes)
    pa_lower = clopper_pearson_lower(int(counts[candidate]), config.n, config.alpha)
    if pa_lower > 0.5:
        cr_latent = config.sigma * std_normal_inv_cdf(min(pa_lower, _TOP_P_CLAMP))
        cr_input = map_radius(cr_latent, lipschitz)
        return CertificationRecord(index, int(y), candidate, pa_lower,
                                   cr_latent, cr_input, candidate == int(y))
    return CertificationRecord(index, int(y), ABSTAIN, pa_lower, 0.0, 0.0, False)


def predict(model: nets.Model, x: np.ndarray, config: SmoothingConfig,
            rng: np.random.Generator) -> int:
    """Class of the smoothed classifier, or ABSTAIN if not significant.

    Exact two-sided binomial test between the two most frequent classes at
    level alpha, over config.n noise draws.
    """
    config.validate()
    counts = sample_counts(model, x, config.n, config, rng)
    order = np.argsort(counts, kind="stable")
    top, second = int(order[-1]), int(order[-2])
    pval = binom_two_sided_pvalue(int(counts[top]), int(counts[top] + counts[second]))
    return top if pval <= config.alpha else ABSTAIN


def radius_ceiling(config: SmoothingConfig, lipschitz: float = 1.0) -> float:
    """Largest radius the procedure can emit: all n samples on one class."""
    top = clopper_pearson_lower(config.n, config.n, config.alpha)
    return config.sigma * std_normal_inv_cdf(min(top, _TOP_P_CLAMP)) / lipschitz


def certify_dataset(model: nets.Model, env, config: SmoothingConfig, master_seed: int,
                    subsample: int | None = None, workers: int = 1,
                    progress: bool = False) -> list[CertificationRecord]:
    """Certify (a prefix of) one environment with per-point noise streams.

    Each point's stream is derived from (master_seed, point index), so
    results are identical for any worker count.
    """
    config.validate()
    total = len(env.y)
    if subsample is not None:
        if subsample < 1:
            raise ConfigError(f"subsample must be >= 1, got {subsample}")
        total = min(subsample, total)
    lipschitz = nets.model_lipschitz_bound(model)
    started = time.monotonic()

    def one(i: int) -> CertificationRecord:
        return certify(model, env.x[i], int(env.y[i]), config,
                       stream(master_seed, KEY_CERTIFY, i), index=i, lipschitz=lipschitz)

    records: list[CertificationRecord] = []
    if workers <= 1:
        for i in range(total):
            records.append(one(i))
            _report_progress(progress, i + 1, total, started)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, record in enumerate(pool.map(one, range(total))):
                records.append(record)
                _report_progress(progress, i + 1, total, started)
    return records


def _report_progress(enabled: bool, done: int, total: int, started: float) -> None:
    if not enabled or (done % 10 != 0 and done != total):
        return
    elapsed = time.monotonic() - started
    eta = elapsed / done * (total - done)
    print(f"certified {done}/{total} points, {elapsed:.1f}s elapsed, eta {eta:.1f}s",
          file=sys.stderr)


RECORD_COLUMNS = ["index", "label", "prediction", "pa_lower", "cr_latent",
                  "cr_input", "correct", "time_ms"]


def write_records(path, records: list[CertificationRecord]) -> None:
    """One CSV row per record.

    The time_ms column is fixed at 0 so artifact bytes depend only on the
    configuration and seed; live timing belongs on stderr.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow([r.index, r.label, r.prediction, repr(float(r.pa_lower)),
                             repr(float(r.cr_latent)), repr(float(r.cr_input)),
                             int(r.correct), 0])


def read_records(path) -> list[CertificationRecord]:
    """Parse a records CSV, rejecting malformed rows with their line number."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RECORD_COLUMNS:
            raise ValueError(f"{path}:1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RECORD_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(RECORD_COLUMNS)} "
                                 f"fields, got {len(row)}")
            try:
                records.append(CertificationRecord(
                    index=int(row[0]), label=int(row[1]), prediction=int(row[2]),
                    pa_lower=float(row[3]), cr_latent=float(row[4]),
                    cr_input=float(row[5]), correct=bool(int(row[6]))))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records
