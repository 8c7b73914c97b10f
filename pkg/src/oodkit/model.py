"""Fully connected backbone and the SGD training loop.

The backbone is a plain affine + rectifier stack whose final layer emits
raw features with no activation, so features can live anywhere in R^d.
Training uses Nesterov momentum in the reformulated parameter-space form
with weight decay added to the gradient, applied uniformly to every
trainable parameter including prototypes and the distance scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import heads
from .data import BatchStream, Dataset
from .heads import ClassifierHead, HeadGradients, LabeledBatch
from .numerics import ContractViolation, as_matrix

INIT_STREAM = 1
SHUFFLE_STREAM = 2


class TrainingDiverged(RuntimeError):
    """Raised when a batch loss stops being finite."""

    def __init__(self, message: str, epoch: int | None = None,
                 batch_index: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class MlpBackbone:
    """Affine + ReLU stack; the last layer is purely affine.

    weights[i] has shape (widths[i+1], widths[i]). An empty layer list is
    the identity backbone.
    """

    weights: list
    biases: list

    @property
    def widths(self) -> list:
        if not self.weights:
            raise ContractViolation("identity backbone has no stored widths")
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0] if self.weights else -1


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 0
    decay_epochs: list = field(default_factory=list)
    decay_factor: float = 10.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractViolation("learning_rate must be nonnegative")
        if not (0 <= self.momentum < 1):
            raise ContractViolation("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractViolation("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be at least 1")
        if self.epochs < 0:
            raise ContractViolation("epochs must be nonnegative")
        if self.decay_factor <= 0:
            raise ContractViolation("decay_factor must be positive")
        eps = list(self.decay_epochs)
        if any(e2 <= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ContractViolation("decay_epochs must be strictly increasing")
        if eps and (eps[0] < 1 or eps[-1] > self.epochs):
            raise ContractViolation("decay_epochs must lie within [1, epochs]")


@dataclass
class TrainState:
    backbone: MlpBackbone
    head: ClassifierHead
    velocities: dict
    epoch: int = 0
    seed: int = 0
    config_hash: bytes = b"\x00" * 32


def make_backbone(widths, rng: np.random.Generator) -> MlpBackbone:
    """Seeded uniform initialization, U(-k, k) with k = 1/sqrt(fan_in), for
    weights and biases alike; widths = [input, hidden..., feature].

    Nonzero biases matter here: they scatter the rectifier kinks across
    the (unit-scale, standardized) input region, so the network is not
    positively homogeneous and feature directions keep carrying radius
    information after normalization.
    """
    widths = [int(w) for w in widths]
    if any(w < 1 for w in widths):
        raise ContractViolation("layer widths must be positive")
    weights, biases = [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        k = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-k, k, (fan_out, fan_in)))
        biases.append(rng.uniform(-k, k, fan_out))
    return MlpBackbone(weights=weights, biases=biases)


def make_train_state(widths, head_kind: str, classes: int, seed: int,
                     entropic_scale: float = heads.DEFAULT_ENTROPIC_SCALE) -> TrainState:
    """Build a fresh state. One generator seeds backbone layers first, then
    the head, so the whole initialization replays from the seed alone."""
    widths = [int(w) for w in widths]
    rng = np.random.default_rng([seed, INIT_STREAM])
    backbone = make_backbone(widths, rng)
    dim = widths[-1]
    if head_kind == "softmax":
        head = heads.make_softmax_head(classes, dim, rng)
    elif head_kind == "isomax":
        head = heads.make_isomax_head(classes, dim, entropic_scale)
    elif head_kind == "isomaxplus":
        head = heads.make_isomaxplus_head(classes, dim, rng, entropic_scale)
    else:
        raise ContractViolation(f"unknown head kind {head_kind!r}")
    return TrainState(backbone=backbone, head=head, velocities={}, seed=seed)


def backbone_forward(b: MlpBackbone, inputs) -> np.ndarray:
    """Features for a batch of inputs; identity when the stack is empty."""
    return _forward_trace(b, inputs)[0]


def _forward_trace(b: MlpBackbone, inputs):
    """Forward pass keeping each layer's input and pre-activation for backward."""
    h = as_matrix(inputs, "inputs")
    if b.weights and h.shape[1] != b.weights[0].shape[1]:
        raise ContractViolation(
            f"input width {h.shape[1]} does not match layer 0 width "
            f"{b.weights[0].shape[1]}"
        )
    layer_inputs, preacts = [], []
    last = len(b.weights) - 1
    for i, (w, bias) in enumerate(zip(b.weights, b.biases)):
        layer_inputs.append(h)
        z = h @ w.T + bias
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, layer_inputs, preacts


@dataclass
class BackboneGradients:
    d_weights: list
    d_biases: list


def backbone_backward(b: MlpBackbone, inputs, d_features) -> BackboneGradients:
    """Exact parameter gradients by the chain rule.

    The rectifier uses subgradient 0 at exactly zero input. Inputs are
    data, not parameters, so nothing flows upstream of layer 0.
    """
    _, layer_inputs, preacts = _forward_trace(b, inputs)
    d_features = np.asarray(d_features, dtype=np.float64)
    d_weights = [None] * len(b.weights)
    d_biases = [None] * len(b.weights)
    delta = d_features
    for i in range(len(b.weights) - 1, -1, -1):
        if i != len(b.weights) - 1:
            delta = delta * (preacts[i] > 0.0)
        d_weights[i] = delta.T @ layer_inputs[i]
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ b.weights[i]
    return BackboneGradients(d_weights=d_weights, d_biases=d_biases)


def nesterov_update(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                    cfg: SgdConfig, lr: float):
    """One Nesterov step in the reformulated parameter-space form.

    g <- grad + weight_decay * param
    v <- momentum * v + g
    param <- param - lr * (g + momentum * v)

    Returns (new_param, new_velocity).
    """
    g = grad + cfg.weight_decay * param
    v = cfg.momentum * velocity + g
    return param - lr * (g + cfg.momentum * v), v


def _trainable(state: TrainState):
    """Stable (name, kind) listing of every trainable parameter."""
    entries = []
    for i in range(len(state.backbone.weights)):
        entries.append((f"backbone.w{i}", "backbone_w", i))
        entries.append((f"backbone.b{i}", "backbone_b", i))
    head = state.head
    if isinstance(head, heads.SoftMaxHead):
        entries.append(("head.weights", "head_weights", None))
        entries.append(("head.bias", "head_bias", None))
    else:
        entries.append(("head.prototypes", "head_prototypes", None))
        if isinstance(head, heads.IsoMaxPlusHead):
            entries.append(("head.distance_scale", "head_distance_scale", None))
    return entries


def _get_param(state: TrainState, kind: str, idx):
    if kind == "backbone_w":
        return state.backbone.weights[idx]
    if kind == "backbone_b":
        return state.backbone.biases[idx]
    if kind == "head_weights":
        return state.head.weights
    if kind == "head_bias":
        return state.head.bias
    if kind == "head_prototypes":
        return state.head.prototypes
    return np.float64(state.head.distance_scale)


def _set_param(state: TrainState, kind: str, idx, value):
    if kind == "backbone_w":
        state.backbone.weights[idx] = value
    elif kind == "backbone_b":
        state.backbone.biases[idx] = value
    elif kind == "head_weights":
        state.head.weights = value
    elif kind == "head_bias":
        state.head.bias = value
    elif kind == "head_prototypes":
        state.head.prototypes = value
    else:
        state.head.distance_scale = float(value)


def _gradient_for(kind: str, idx, bg: BackboneGradients, hg: HeadGradients):
    if kind == "backbone_w":
        return bg.d_weights[idx]
    if kind == "backbone_b":
        return bg.d_biases[idx]
    if kind == "head_weights":
        return hg.d_weights
    if kind == "head_bias":
        return hg.d_bias
    if kind == "head_prototypes":
        return hg.d_prototypes
    return np.float64(hg.d_distance_scale)


def sgd_step(state: TrainState, batch: LabeledBatch, cfg: SgdConfig,
             lr: float | None = None, epoch: int | None = None,
             batch_index: int | None = None) -> float:
    """One optimizer step over a batch; returns the pre-update loss."""
    lr = cfg.learning_rate if lr is None else lr
    features, layer_inputs, preacts = _forward_trace(state.backbone, batch.features)
    loss = heads.training_loss(state.head, features, batch.targets)
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss {loss} at epoch {epoch} batch {batch_index}",
            epoch=epoch, batch_index=batch_index,
        )
    hg = heads.backward(state.head, features, batch.targets)
    bg = backbone_backward(state.backbone, batch.features, hg.d_features)
    for name, kind, idx in _trainable(state):
        param = _get_param(state, kind, idx)
        grad = _gradient_for(kind, idx, bg, hg)
        velocity = state.velocities.get(name)
        if velocity is None:
            velocity = np.zeros_like(param)
        new_param, new_velocity = nesterov_update(param, grad, velocity, cfg, lr)
        _set_param(state, kind, idx, new_param)
        state.velocities[name] = new_velocity
    return loss


def fit(state: TrainState, train_data, cfg: SgdConfig, callbacks=None):
    """Run the epoch loop; returns (state, trace).

    train_data is either a labeled Dataset / LabeledBatch (batched here
    with a reshuffle stream derived from state.seed) or a data.BatchStream.
    The learning rate is divided by decay_factor at the start of each
    epoch listed in decay_epochs. Each trace row records the epoch, the
    learning rate in effect, the mean batch loss, and full-pass training
    accuracy.
    """
    if isinstance(train_data, BatchStream):
        stream = train_data
    elif isinstance(train_data, Dataset):
        stream = BatchStream(train_data, cfg.batch_size, (state.seed, SHUFFLE_STREAM))
    else:
        ds = Dataset(inputs=train_data.features, targets=train_data.targets,
                     provenance="in-memory batch")
        stream = BatchStream(ds, cfg.batch_size, (state.seed, SHUFFLE_STREAM))

    trace = []
    lr = cfg.learning_rate
    decay_at = set(int(e) for e in cfg.decay_epochs)
    for epoch in range(1, cfg.epochs + 1):
        if epoch in decay_at:
            lr = lr / cfg.decay_factor
        losses = []
        for bi, batch in enumerate(stream.for_epoch(epoch)):
            losses.append(sgd_step(state, batch, cfg, lr=lr, epoch=epoch, batch_index=bi))
        state.epoch = epoch
        features = backbone_forward(state.backbone, stream.dataset.inputs)
        predictions = heads.predict(state.head, features)
        accuracy = float(np.mean(predictions == stream.dataset.targets))
        record = {
            "epoch": epoch,
            "learning_rate": lr,
            "mean_loss": float(np.mean(losses)) if losses else 0.0,
            "train_accuracy": accuracy,
        }
        trace.append(record)
        for cb in callbacks or ():
            cb(state, record)
    return state, trace
