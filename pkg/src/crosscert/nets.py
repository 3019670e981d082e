"""Norm-controlled feedforward models.

The encoder is a stack of square linear layers, each followed by group
sorting. In the default configuration every linear layer is parametrized
through the Cayley map of the antisymmetric part of an unconstrained raw
matrix, so its weight is exactly orthogonal and the whole encoder is
1-Lipschitz in l2. The ablation configuration swaps in plain dense layers,
whose Lipschitz constant is tracked as the product of spectral norms.

Input dimension changes happen once, before the first layer, through a
fixed zero-pad / truncation map with operator norm 1; all trained encoder
layers stay square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .autodiff import GradTape, Node, groupsort_forward
from .container import read_container, write_container
from .errors import CacheFormatError, ShapeError


def cayley(raw: np.ndarray) -> np.ndarray:
    """Orthogonal weight from an unconstrained square parameter.

    The antisymmetric part A = (raw - raw^T)/2 is mapped to
    (I - A)(I + A)^-1, which is orthogonal for every real raw matrix.
    """
    return linalg.cayley_orthogonal(linalg.skew_part(np.asarray(raw, dtype=np.float64)))


def groupsort(x: np.ndarray, group_size: int) -> np.ndarray:
    """Sort entries ascending within contiguous groups (last axis).

    A permutation of its input, so it preserves the l2 norm and is
    1-Lipschitz; with group_size 2 it is the max-min pairing.
    """
    out, _ = groupsort_forward(np.asarray(x, dtype=np.float64), group_size)
    return out


@dataclass
class OrthLinearLayer:
    """Square linear layer whose weight is the Cayley map of raw."""
    raw: np.ndarray
    bias: np.ndarray

    kind = "orth"

    def weight(self) -> np.ndarray:
        return cayley(self.raw)

    def lipschitz(self) -> float:
        return 1.0


@dataclass
class DenseLayer:
    """Unconstrained square linear layer, used by the ablations."""
    weight_raw: np.ndarray
    bias: np.ndarray

    kind = "dense"

    def weight(self) -> np.ndarray:
        return self.weight_raw

    def lipschitz(self) -> float:
        return linalg.spectral_norm(self.weight_raw)


@dataclass
class Model:
    """Encoder stack plus one unconstrained linear classifier head."""
    input_dim: int
    width: int
    num_classes: int
    group_size: int
    layers: list = field(default_factory=list)
    classifier_weight: np.ndarray = None
    classifier_bias: np.ndarray = None

    @property
    def latent_dim(self) -> int:
        return self.width


def init_model(input_dim: int, widths: list[int], num_classes: int, group_size: int,
               rng: np.random.Generator, dense: bool = False) -> Model:
    """Fresh model; raw entries N(0, 0.1^2) so weights start near identity.

    Dense mode consumes the same draws and starts from the orthogonal
    weight those draws imply, so the two architectures share their initial
    function and diverge only through training.
    """
    if num_classes < 2:
        raise ShapeError(f"need at least 2 classes, got {num_classes}")
    if input_dim < 1:
        raise ShapeError(f"input_dim must be >= 1, got {input_dim}")
    widths = list(widths)
    if any(w != widths[0] for w in widths):
        raise ShapeError(f"encoder layers must share one square width, got {widths}")
    width = widths[0] if widths else input_dim
    if widths and width % group_size != 0:
        raise ShapeError(f"width {width} not divisible by group size {group_size}")
    layers = []
    for _ in widths:
        raw = 0.1 * rng.standard_normal((width, width))
        bias = np.zeros(width)
        if dense:
            layers.append(DenseLayer(cayley(raw), bias))
        else:
            layers.append(OrthLinearLayer(raw, bias))
    cls_w = rng.standard_normal((num_classes, width)) / np.sqrt(width)
    cls_b = np.zeros(num_classes)
    return Model(input_dim, width, num_classes, group_size, layers, cls_w, cls_b)


def adapt_input(model: Model, x: np.ndarray) -> np.ndarray:
    """Fixed pad/truncate map from input_dim to the encoder width."""
    if x.shape[-1] == model.width:
        return x
    if x.shape[-1] < model.width:
        pad = model.width - x.shape[-1]
        return np.concatenate([x, np.zeros(x.shape[:-1] + (pad,))], axis=-1)
    return x[..., :model.width]


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ShapeError(f"expected a vector or batch, got shape {arr.shape}")


def encode(model: Model, x) -> np.ndarray:
    """Latent representation of a batch (rows) or single vector."""
    batch, single = _as_batch(x)
    if batch.shape[1] != model.input_dim:
        raise ShapeError(f"input has {batch.shape[1]} columns, model expects {model.input_dim}")
    h = adapt_input(model, batch)
    for layer in model.layers:
        h = h @ layer.weight().T + layer.bias
        h = groupsort(h, model.group_size)
    return h[0] if single else h


def classify(model: Model, z) -> np.ndarray:
    """Logit rows for a batch (or single vector) of latent codes."""
    batch, single = _as_batch(z)
    if batch.shape[1] != model.latent_dim:
        raise ShapeError(f"latent has {batch.shape[1]} columns, model expects {model.latent_dim}")
    logits = batch @ model.classifier_weight.T + model.classifier_bias
    return logits[0] if single else logits


def model_lipschitz_bound(model: Model) -> float:
    """Product of encoder per-layer Lipschitz constants (classifier excluded)."""
    bound = 1.0
    for layer in model.layers:
        bound *= layer.lipschitz()
    return float(bound)


def orthogonality_defect(model: Model) -> float:
    """Largest Frobenius residual ||W^T W - I||_F over encoder layers."""
    worst = 0.0
    for layer in model.layers:
        w = layer.weight()
        worst = max(worst, float(np.linalg.norm(w.T @ w - np.eye(w.shape[0]))))
    return worst


# ---- tape-based forward for training ----

def make_leaves(tape: GradTape, model: Model) -> dict[str, Node]:
    """Register every trainable parameter of the model on a tape."""
    leaves: dict[str, Node] = {}
    for i, layer in enumerate(model.layers):
        if layer.kind == "orth":
            leaves[f"layer{i}_raw"] = tape.leaf(layer.raw)
        else:
            leaves[f"layer{i}_weight"] = tape.leaf(layer.weight_raw)
        leaves[f"layer{i}_bias"] = tape.leaf(layer.bias)
    leaves["cls_w"] = tape.leaf(model.classifier_weight)
    leaves["cls_b"] = tape.leaf(model.classifier_bias)
    return leaves


def encode_on_tape(tape: GradTape, model: Model, leaves: dict[str, Node],
                   x_batch: np.ndarray) -> Node:
    h: Node | np.ndarray = adapt_input(model, np.asarray(x_batch, dtype=np.float64))
    for i, layer in enumerate(model.layers):
        if layer.kind == "orth":
            w = tape.cayley(leaves[f"layer{i}_raw"])
        else:
            w = leaves[f"layer{i}_weight"]
        h = tape.matmul(h, tape.transpose(w))
        h = tape.add_row(h, leaves[f"layer{i}_bias"])
        h = tape.group_sort(h, model.group_size)
    if not isinstance(h, Node):
        # Zero-layer encoder: wrap so downstream tape code stays uniform.
        h = tape.constant(h)
    return h


def classify_on_tape(tape: GradTape, leaves: dict[str, Node], z: Node) -> Node:
    logits = tape.matmul(z, tape.transpose(leaves["cls_w"]))
    return tape.add_row(logits, leaves["cls_b"])


def apply_gradients(model: Model, leaves: dict[str, Node], grads: dict[int, np.ndarray],
                    learning_rate: float) -> None:
    """One plain gradient-descent step on every parameter, in place."""
    for i, layer in enumerate(model.layers):
        if layer.kind == "orth":
            layer.raw -= learning_rate * grads[id(leaves[f"layer{i}_raw"])]
        else:
            layer.weight_raw -= learning_rate * grads[id(leaves[f"layer{i}_weight"])]
        layer.bias -= learning_rate * grads[id(leaves[f"layer{i}_bias"])]
    model.classifier_weight -= learning_rate * grads[id(leaves["cls_w"])]
    model.classifier_bias -= learning_rate * grads[id(leaves["cls_b"])]


# ---- checkpoints ----

def save_model(path, model: Model) -> None:
    arrays = {"cls_w": model.classifier_weight, "cls_b": model.classifier_bias}
    kinds = []
    for i, layer in enumerate(model.layers):
        kinds.append(layer.kind)
        if layer.kind == "orth":
            arrays[f"layer{i}_raw"] = layer.raw
        else:
            arrays[f"layer{i}_weight"] = layer.weight_raw
        arrays[f"layer{i}_bias"] = layer.bias
    meta = {
        "schema": 1,
        "kind": "model",
        "input_dim": model.input_dim,
        "width": model.width,
        "num_classes": model.num_classes,
        "group_size": model.group_size,
        "layer_kinds": kinds,
        "lipschitz_bound": model_lipschitz_bound(model),
    }
    write_container(path, meta, arrays)


def load_model(path) -> Model:
    meta, arrays = read_container(path)
    if meta.get("kind") != "model" or meta.get("schema") != 1:
        raise CacheFormatError(f"{path} is not a model checkpoint")
    layers = []
    for i, kind in enumerate(meta["layer_kinds"]):
        bias = arrays[f"layer{i}_bias"]
        if kind == "orth":
            layers.append(OrthLinearLayer(arrays[f"layer{i}_raw"], bias))
        elif kind == "dense":
            layers.append(DenseLayer(arrays[f"layer{i}_weight"], bias))
        else:
            raise CacheFormatError(f"unknown layer kind {kind!r} in {path}")
    return Model(meta["input_dim"], meta["width"], meta["num_classes"],
                 meta["group_size"], layers, arrays["cls_w"], arrays["cls_b"])
