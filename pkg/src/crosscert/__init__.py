"""Certified cross-domain robustness workbench.

Trains Lipschitz-constrained encoders with an invariance penalty on
multi-domain data, certifies predictions by randomized smoothing in the
latent space, maps certified radii back to the input space, and compares
variants on a held-out domain.
"""

from .autodiff import GradTape, backward
from .certify import (ABSTAIN, CertificationRecord, SmoothingConfig, certify,
                      certify_dataset, map_radius, predict, radius_ceiling,
                      sample_counts)
from .data import (EnvDataset, Environment, ScmSpec, load_dataset, make_cmnist,
                   make_scm, random_orthogonal, read_idx, save_dataset, split)
from .evaluation import (EvalSummary, RadiusGrid, acr, certified_accuracy,
                         run_experiment, summarize)
from .linalg import matmul, solve, spectral_norm
from .nets import (DenseLayer, Model, OrthLinearLayer, cayley, classify, encode,
                   groupsort, init_model, load_model, model_lipschitz_bound,
                   save_model)
from .rng import gauss_sample, stream
from .stats import (binom_two_sided_pvalue, clopper_pearson_lower,
                    std_normal_cdf, std_normal_inv_cdf)
from .training import (TrainConfig, TrainReport, env_risk, irm_penalty, total_loss,
                       train)

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN", "CertificationRecord", "DenseLayer", "EnvDataset",
    "EvalSummary", "Environment", "GradTape", "Model",
    "OrthLinearLayer", "RadiusGrid", "ScmSpec", "SmoothingConfig", "TrainConfig",
    "TrainReport", "acr", "backward", "cayley", "certified_accuracy", "certify",
    "certify_dataset", "classify", "clopper_pearson_lower", "binom_two_sided_pvalue",
    "encode", "env_risk", "gauss_sample", "groupsort", "init_model", "irm_penalty",
    "load_dataset", "load_model", "make_cmnist", "make_scm", "map_radius", "matmul",
    "model_lipschitz_bound", "predict", "radius_ceiling", "random_orthogonal",
    "read_idx", "run_experiment", "sample_counts", "save_dataset", "save_model",
    "solve", "spectral_norm", "split", "std_normal_cdf", "std_normal_inv_cdf",
    "stream", "summarize", "total_loss", "train",
]
