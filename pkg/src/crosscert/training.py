"""Multi-domain training with an invariance penalty.

The objective is the sum over training domains of softmax cross-entropy
risk plus a weighted sum of per-domain invariance penalties. The penalty is
the squared derivative of the domain risk with respect to a scalar factor
multiplying the logits, evaluated at factor 1: a representation whose
optimal logit scaling already agrees across domains scores zero. Gradient
augmentation noise is drawn fresh per batch and treated as a constant by
the tape.

Variants: "full" is the complete method; "no_invariance" forces the
penalty weight to zero; "no_lipschitz" uses unconstrained dense layers
(the model is built that way by the caller, training is unchanged).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .autodiff import GradTape, backward
from .errors import ConfigError, DivergenceError
from .rng import KEY_NOISE, KEY_SHUFFLE, gauss_sample, stream

VARIANTS = ("full", "no_invariance", "no_lipschitz")
AUG_SPACES = ("latent", "input")


@dataclass
class TrainConfig:
    # Defaults are the stable desk-scale recipe: plain SGD needs
    # lr * penalty_weight small, and a batch size past the environment
    # size gives full-batch updates with an unbiased squared-mean penalty.
    penalty_weight: float = 300.0
    sigma_train: float = 0.12
    learning_rate: float = 0.0003
    epochs: int = 2000
    batch_size: int = 4096
    seed: int = 0
    variant: str = "full"
    aug_space: str = "latent"

    def validate(self) -> None:
        if self.penalty_weight < 0:
            raise ConfigError(f"penalty weight must be >= 0, got {self.penalty_weight}")
        if self.sigma_train < 0:
            raise ConfigError(f"sigma_train must be >= 0, got {self.sigma_train}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.aug_space not in AUG_SPACES:
            raise ConfigError(f"aug space must be one of {AUG_SPACES}, got {self.aug_space!r}")

    @property
    def effective_penalty_weight(self) -> float:
        return 0.0 if self.variant == "no_invariance" else self.penalty_weight


@dataclass
class TrainReport:
    env_ids: list[int]
    risks: np.ndarray          # (epochs, n_envs) mean risk per epoch
    penalties: np.ndarray      # (epochs, n_envs) mean penalty per epoch
    totals: np.ndarray         # (epochs,) mean total loss per epoch
    final_accuracies: dict = field(default_factory=dict)


def onehot(y: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(y), num_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def penalty_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Squared derivative of mean cross-entropy in a scalar logit factor at 1.

    d/dw CE(softmax(w*l), y) at w=1 equals <softmax(l) - onehot(y), l>, so
    the penalty is the square of that inner product's batch mean.
    """
    p = _stable_softmax(logits)
    g = float(((p - targets) * logits).sum() / logits.shape[0])
    return g * g


def risk_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    m = logits.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    return float((lse.ravel() - (logits * targets).sum(axis=-1)).mean())


def _logits_node(tape, model, leaves, x, noise, aug_space):
    if noise is not None and aug_space == "input":
        x = x + noise
    z = nets.encode_on_tape(tape, model, leaves, x)
    if noise is not None and aug_space == "latent":
        z = tape.add(z, noise)
    return nets.classify_on_tape(tape, leaves, z)


def _penalty_node(tape, logits_node, targets):
    batch = targets.shape[0]
    p = tape.softmax(logits_node)
    residual = tape.sub(p, targets)
    weighted = tape.mul(residual, logits_node)
    g = tape.scale(tape.sum_all(weighted), 1.0 / batch)
    return tape.mul(g, g)


def env_risk(model: nets.Model, env, noise: np.ndarray | None = None,
             aug_space: str = "latent") -> float:
    """Mean cross-entropy of the model on one environment (optionally augmented)."""
    if len(env.y) == 0:
        raise ValueError("environment is empty")
    x = env.x
    if noise is not None and aug_space == "input":
        x = x + noise
    z = nets.encode(model, x)
    if noise is not None and aug_space == "latent":
        z = z + noise
    logits = nets.classify(model, z)
    return risk_from_logits(logits, onehot(env.y, model.num_classes))


def irm_penalty(model: nets.Model, env, noise: np.ndarray | None = None,
                aug_space: str = "latent") -> float:
    """Invariance penalty of the model's clean (or augmented) logits on one environment."""
    if len(env.y) == 0:
        raise ValueError("environment is empty")
    x = env.x
    if noise is not None and aug_space == "input":
        x = x + noise
    z = nets.encode(model, x)
    if noise is not None and aug_space == "latent":
        z = z + noise
    logits = nets.classify(model, z)
    return penalty_from_logits(logits, onehot(env.y, model.num_classes))


def total_loss(model: nets.Model, envs, config: TrainConfig) -> float:
    """Deterministic (noise-free) objective value over the given environments."""
    env_list = envs.environments if hasattr(envs, "environments") else list(envs)
    if not env_list:
        raise ValueError("need at least one environment")
    lam = config.effective_penalty_weight
    total = 0.0
    for env in env_list:
        total += env_risk(model, env)
        if lam > 0:
            total += lam * irm_penalty(model, env)
    return total


def env_accuracy(model: nets.Model, env) -> float:
    logits = nets.classify(model, nets.encode(model, env.x))
    return float((logits.argmax(axis=1) == env.y).mean())


def train(model: nets.Model, train_envs, config: TrainConfig) -> tuple[nets.Model, TrainReport]:
    """Minibatch gradient descent on the multi-domain objective, in place.

    Shuffling and augmentation noise come from streams keyed by (seed,
    purpose, epoch, step, environment), so a rerun with the same seed is
    bit-identical and the no_invariance variant consumes exactly the same
    draws as a zero-weight full run.
    """
    config.validate()
    env_list = train_envs.environments if hasattr(train_envs, "environments") else list(train_envs)
    if not env_list:
        raise ValueError("need at least one training environment")
    lam = config.effective_penalty_weight
    n_envs = len(env_list)
    sizes = [len(env.y) for env in env_list]
    if min(sizes) == 0:
        raise ValueError("training environment is empty")
    batch = min(config.batch_size, min(sizes))
    steps = max(1, min(sizes) // batch)

    risks = np.zeros((config.epochs, n_envs))
    penalties = np.zeros((config.epochs, n_envs))
    totals = np.zeros(config.epochs)

    for epoch in range(config.epochs):
        perms = [stream(config.seed, KEY_SHUFFLE, epoch, e).permutation(sizes[e])
                 for e in range(n_envs)]
        for step in range(steps):
            tape = GradTape()
            leaves = nets.make_leaves(tape, model)
            total_node = None
            for e, env in enumerate(env_list):
                idx = perms[e][step * batch:(step + 1) * batch]
                xb, yb = env.x[idx], env.y[idx]
                targets = onehot(yb, model.num_classes)
                noise = None
                if config.sigma_train > 0:
                    noise_rng = stream(config.seed, KEY_NOISE, epoch, step, e)
                    dim = model.input_dim if config.aug_space == "input" else model.latent_dim
                    noise = gauss_sample(noise_rng, (len(idx), dim), config.sigma_train)
                logits = _logits_node(tape, model, leaves, xb, noise, config.aug_space)
                risk_node = tape.softmax_cross_entropy(logits, targets)
                risks[epoch, e] += risk_node.value
                term = risk_node
                if lam > 0:
                    pen_node = _penalty_node(tape, logits, targets)
                    penalties[epoch, e] += pen_node.value
                    term = tape.add(term, tape.scale(pen_node, lam))
                else:
                    penalties[epoch, e] += penalty_from_logits(logits.value, targets)
                total_node = term if total_node is None else tape.add(total_node, term)
            if not np.isfinite(total_node.value):
                raise DivergenceError(
                    f"loss became non-finite at epoch {epoch}, step {step}; "
                    f"lower the learning rate or penalty weight")
            totals[epoch] += total_node.value
            grads = backward(tape, total_node)
            nets.apply_gradients(model, leaves, grads, config.learning_rate)
        risks[epoch] /= steps
        penalties[epoch] /= steps
        totals[epoch] /= steps

    report = TrainReport(
        env_ids=[env.domain_id for env in env_list],
        risks=risks, penalties=penalties, totals=totals,
        final_accuracies={env.domain_id: env_accuracy(model, env) for env in env_list})
    return model, report


def write_report(path, report: TrainReport) -> None:
    """Training curves as CSV: one row per (epoch, environment)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "env_id", "risk", "penalty", "total"])
        for epoch in range(report.risks.shape[0]):
            for e, env_id in enumerate(report.env_ids):
                writer.writerow([epoch, env_id, repr(float(report.risks[epoch, e])),
                                 repr(float(report.penalties[epoch, e])),
                                 repr(float(report.totals[epoch]))])
