"""Certified-accuracy curves, average certified radius, and experiments.

Two summary statistics from a set of certification records: certified
accuracy at radius r is the fraction of records that are correct with a
certified input radius of at least r, and the average certified radius is
the exact per-record mean of radius times the correctness indicator (zero
for wrong or abstained points). A grid-integral approximation of the latter
is also computed, but kept separate; the two agree only for dense grids.

run_experiment trains and certifies every requested variant over a shared
seed list, so method comparisons see identical data and noise conditions.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import nets
from .certify import SmoothingConfig, certify_dataset, write_records
from .data import EnvDataset, split
from .errors import ConfigError
from .plots import render_curves
from .rng import KEY_INIT, stream
from .training import TrainConfig, train

EXPERIMENT_VARIANTS = ("full", "no_invariance", "no_lipschitz", "gaussian")


@dataclass
class RadiusGrid:
    radii: list[float]

    def __post_init__(self):
        self.radii = [float(r) for r in self.radii]
        if not self.radii or self.radii[0] != 0.0:
            raise ConfigError(f"radius grid must start at 0.0, got {self.radii}")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ConfigError(f"radius grid must be strictly increasing, got {self.radii}")

    @staticmethod
    def default() -> "RadiusGrid":
        return RadiusGrid([round(0.05 * i, 2) for i in range(10)])


def certified_accuracy(records, grid: RadiusGrid) -> dict[float, float]:
    """Fraction certified correct at each grid radius (abstain counts wrong)."""
    if not records:
        raise ValueError("no certification records")
    radii = np.array([r.cr_input for r in records])
    correct = np.array([r.correct for r in records])
    return {r: float(np.mean(correct & (radii >= r))) for r in grid.radii}


def acr(records) -> float:
    """Mean certified input radius, counting wrong or abstained points as zero.

    Summed sequentially in record order so the result is bit-identical to a
    per-record accumulation loop; vectorized means reorder the additions.
    """
    if not records:
        raise ValueError("no certification records")
    total = 0.0
    for r in records:
        total += r.cr_input if r.correct else 0.0
    return total / len(records)


def abstain_rate(records) -> float:
    if not records:
        raise ValueError("no certification records")
    return float(np.mean([r.abstained for r in records]))


def grid_integral(accuracy: dict[float, float]) -> float:
    """Left-Riemann approximation of the radius-accuracy curve's area."""
    radii = sorted(accuracy)
    return float(sum(accuracy[a] * (b - a) for a, b in zip(radii, radii[1:])))


@dataclass
class EvalSummary:
    variant: str
    sigma: float
    penalty_weight: float
    seed: int
    acr: float
    acr_grid: float
    clean_accuracy: float
    abstain_rate: float
    certified_accuracy: dict = field(default_factory=dict)


def summarize(records, grid: RadiusGrid, variant: str, sigma: float,
              penalty_weight: float, seed: int) -> EvalSummary:
    curve = certified_accuracy(records, grid)
    return EvalSummary(variant=variant, sigma=sigma, penalty_weight=penalty_weight,
                       seed=seed, acr=acr(records), acr_grid=grid_integral(curve),
                       clean_accuracy=curve[0.0], abstain_rate=abstain_rate(records),
                       certified_accuracy=curve)


@dataclass
class VariantSpec:
    """How one experiment arm deviates from the full method."""
    dense: bool
    zero_penalty: bool
    aug_space: str
    certify_space: str
    train_variant: str


VARIANT_SPECS = {
    "full": VariantSpec(False, False, "latent", "latent", "full"),
    "no_invariance": VariantSpec(False, True, "latent", "latent", "no_invariance"),
    "no_lipschitz": VariantSpec(True, False, "latent", "latent", "no_lipschitz"),
    "gaussian": VariantSpec(True, True, "input", "input", "no_lipschitz"),
}


def build_variant_model(variant: str, input_dim: int, widths: list[int],
                        num_classes: int, group_size: int, seed: int) -> nets.Model:
    spec = VARIANT_SPECS[variant]
    return nets.init_model(input_dim, widths, num_classes, group_size,
                           stream(seed, KEY_INIT), dense=spec.dense)


def run_experiment(dataset: EnvDataset, train_cfg: TrainConfig,
                   smooth_cfg: SmoothingConfig, variants: list[str], *,
                   widths: list[int], group_size: int = 2,
                   train_env_ids: list[int] | None = None,
                   test_env_id: int | None = None,
                   seeds: list[int] = (0,), grid: RadiusGrid | None = None,
                   subsample: int | None = None, workers: int = 1,
                   out_dir: str | None = None, progress: bool = False
                   ) -> list[EvalSummary]:
    """Train, certify, and summarize each variant across a shared seed list.

    Per (variant, seed): a fresh model is initialized and trained on the
    training environments, the held-out environment is certified, and the
    records are summarized. When out_dir is given, per-run records plus
    summary.csv, curve.csv, and curve.svg land there.
    """
    for variant in variants:
        if variant not in VARIANT_SPECS:
            raise ConfigError(f"unknown variant {variant!r}, expected one of "
                              f"{sorted(VARIANT_SPECS)}")
    grid = grid or RadiusGrid.default()
    env_ids = [env.domain_id for env in dataset.environments]
    if test_env_id is None:
        test_env_id = env_ids[-1]
    if train_env_ids is None:
        train_env_ids = [i for i in env_ids if i != test_env_id]
    train_set, test_set = split(dataset, train_env_ids, test_env_id)
    test_env = test_set.environments[0]

    summaries = []
    for variant in variants:
        vspec = VARIANT_SPECS[variant]
        for seed in seeds:
            model = build_variant_model(variant, dataset.input_dim, widths,
                                        dataset.num_classes, group_size, seed)
            cfg = replace(train_cfg, seed=seed, variant=vspec.train_variant,
                          aug_space=vspec.aug_space,
                          penalty_weight=0.0 if vspec.zero_penalty
                          else train_cfg.penalty_weight)
            train(model, train_set, cfg)
            scfg = replace(smooth_cfg, space=vspec.certify_space)
            records = certify_dataset(model, test_env, scfg, master_seed=seed,
                                      subsample=subsample, workers=workers,
                                      progress=progress)
            if out_dir:
                write_records(os.path.join(out_dir, f"records_{variant}_seed{seed}.csv"),
                              records)
            summaries.append(summarize(records, grid, variant, scfg.sigma,
                                       cfg.penalty_weight, seed))
    if out_dir:
        write_summary(os.path.join(out_dir, "summary.csv"), summaries, grid)
        curves = mean_curves(summaries, grid)
        write_curves(os.path.join(out_dir, "curve.csv"), curves)
        render_curves(os.path.join(out_dir, "curve.svg"),
                      {name: (grid.radii, [vals[r] for r in grid.radii])
                       for name, vals in curves.items()})
    return summaries


def mean_curves(summaries: list[EvalSummary], grid: RadiusGrid
                ) -> dict[str, dict[float, float]]:
    """Seed-averaged certified-accuracy curve per variant, in first-seen order."""
    curves: dict[str, dict[float, float]] = {}
    for variant in dict.fromkeys(s.variant for s in summaries):
        group = [s for s in summaries if s.variant == variant]
        curves[variant] = {r: float(np.mean([s.certified_accuracy[r] for s in group]))
                           for r in grid.radii}
    return curves


def write_summary(path, summaries: list[EvalSummary], grid: RadiusGrid) -> None:
    header = ["variant", "sigma", "lambda", "seed", "acr", "clean_acc", "abstain_rate"]
    header += [f"acc@{r:g}" for r in grid.radii]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in summaries:
            row = [s.variant, repr(float(s.sigma)), repr(float(s.penalty_weight)),
                   s.seed, repr(float(s.acr)), repr(float(s.clean_accuracy)),
                   repr(float(s.abstain_rate))]
            row += [repr(float(s.certified_accuracy[r])) for r in grid.radii]
            writer.writerow(row)


def write_curves(path, curves: dict[str, dict[float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "radius", "certified_accuracy"])
        for variant, curve in curves.items():
            for radius in sorted(curve):
                writer.writerow([variant, repr(float(radius)),
                                 repr(float(curve[radius]))])
