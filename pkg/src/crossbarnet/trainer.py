"""Shadow-crossbar training of a planned network.

Forward and backward passes both use the binarized crossbar; updates are
applied to the continuous shadow matrix (straight-through).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import DEFAULT_STEEPNESS, N_NEURONS, binarize, neuron_surrogate, round_half_away
from .dataio import AugmentSpec, Dataset, augment_batch, draw_augment_params
from .rng import substream
from .topology import NetworkPlan

log = logging.getLogger(__name__)

PROB_EPS = 1e-12


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class LRSchedule:
    """``kind`` is "none", "iterations" (decay every ``every`` iterations) or
    "epoch" (decay once, from epoch ``every`` onwards)."""

    kind: str = "none"
    factor: float = 0.1
    every: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "iterations", "epoch"):
            raise TrainingError(f"unknown lr schedule kind {self.kind!r}")
        if self.kind != "none" and self.every < 1:
            raise TrainingError("lr schedule needs every >= 1")

    def scale(self, iteration: int, epoch: int) -> float:
        if self.kind == "iterations":
            return self.factor ** (iteration // self.every)
        if self.kind == "epoch":
            return self.factor if epoch >= self.every else 1.0
        return 1.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    epochs: int = 1
    k: float = DEFAULT_STEEPNESS
    lr_multiplier: float = 1.0
    lr_schedule: LRSchedule = LRSchedule()
    seed: int = 0
    augment: bool = False
    augment_spec: AugmentSpec = AugmentSpec()

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if self.lr_multiplier < 0:
            raise TrainingError("lr_multiplier must be >= 0")
        if self.k <= 0:
            raise TrainingError("steepness k must be > 0")


@dataclass
class ForwardTrace:
    """Per-layer tensors are (N, n_cores, 256)."""

    inputs: list
    currents: list
    outputs: list
    weights: list  # effective weights per layer, (n_cores, 256, 256)
    category_scores: np.ndarray  # (N, K)
    probabilities: np.ndarray  # (N, K)


@dataclass
class Gradients:
    """Batch-mean loss gradients per layer: crossbar (n, 256, 256), bias (n, 256)."""

    crossbar: list
    bias: list


@dataclass
class TrainedModel:
    plan: NetworkPlan
    config: TrainConfig
    preprocess: dict = field(default_factory=lambda: {"kind": "divide255"})


def category_matrix(plan: NetworkPlan) -> np.ndarray:
    """(n_last_neurons, K) one-hot map of last-layer neurons onto categories."""
    K = plan.spec.categories
    m = np.zeros((len(plan.category), K))
    assigned = plan.category >= 0
    m[np.nonzero(assigned)[0], plan.category[assigned]] = 1.0
    return m


def category_softmax(cs, cn) -> np.ndarray:
    """``exp(cs_l / cn_l)`` normalized over categories (last axis)."""
    z = np.asarray(cs, dtype=np.float64) / np.asarray(cn, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(p, y) -> np.ndarray:
    """``-sum_k [y log p + (1 - y) log(1 - p)]`` over the last axis."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p), axis=-1)


def one_hot(labels, K: int) -> np.ndarray:
    y = np.zeros((len(labels), K))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def learning_rate(neurons_per_category: int, batch_size: int, multiplier: float = 1.0) -> float:
    if neurons_per_category < 1 or batch_size < 1:
        raise TrainingError("neurons per category and batch size must be positive")
    return multiplier / (neurons_per_category * batch_size)


def layer_weights(plan: NetworkPlan) -> list[np.ndarray]:
    out = []
    for layer in plan.layers:
        s = layer.axon_types.axon_weights.astype(np.float64)
        out.append(binarize(layer.shadow) * s[None, :, None])
    return out


def forward(plan: NetworkPlan, x, k: float = DEFAULT_STEEPNESS, *, hard: bool = False,
            mode: str = "training", weights: list | None = None) -> ForwardTrace:
    """Run a batch ``x`` of shape (N, H, W, C) or (N, n_inputs) through the plan.

    ``hard=True`` replaces the surrogate with the spiking step function;
    ``mode="deployed"`` uses rounded biases.  ``weights`` overrides the
    binarized effective weights (used by gradient checks).
    """
    x = np.asarray(x, dtype=np.float64)
    N = x.shape[0]
    prev = x.reshape(N, -1)
    if prev.shape[1] != plan.n_inputs:
        raise TrainingError(f"instance has {prev.shape[1]} values, plan expects {plan.n_inputs}")
    if weights is None:
        weights = layer_weights(plan)
    trace = ForwardTrace([], [], [], weights, None, None)
    for layer, gather, w in zip(plan.layers, plan.gather_indices(), weights):
        padded = np.concatenate([prev, np.zeros((N, 1))], axis=1)
        xin = padded[:, gather]  # (N, n, 256)
        bias = layer.bias if mode == "training" else round_half_away(layer.bias)
        current = np.matmul(xin.transpose(1, 0, 2), w).transpose(1, 0, 2) + bias
        out = (current > 0).astype(np.float64) if hard else neuron_surrogate(current, k)
        trace.inputs.append(xin)
        trace.currents.append(current)
        trace.outputs.append(out)
        prev = out.reshape(N, -1)
    cs = prev @ category_matrix(plan)
    trace.category_scores = cs
    trace.probabilities = category_softmax(cs, plan.neurons_per_category)
    return trace


def backward(plan: NetworkPlan, trace: ForwardTrace, y) -> Gradients:
    """Gradients of the batch-mean log loss through the binarized weights."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(trace.probabilities, PROB_EPS, 1.0 - PROB_EPS)
    dp = -y / p + (1.0 - y) / (1.0 - p)
    pr = trace.probabilities
    dz = pr * (dp - np.sum(dp * pr, axis=-1, keepdims=True))
    dcs = dz / plan.neurons_per_category
    d_out = (dcs @ category_matrix(plan).T).reshape(trace.outputs[-1].shape)
    return backprop(plan, trace, d_out)


def backprop(plan: NetworkPlan, trace: ForwardTrace, d_out) -> Gradients:
    """Propagate ``dE/dn`` of the last layer's outputs (N, n, 256) down the plan."""
    N = d_out.shape[0]
    g_c = [None] * len(plan.layers)
    g_b = [None] * len(plan.layers)
    for li in range(len(plan.layers) - 1, -1, -1):
        n_hat = trace.outputs[li]
        delta = d_out * n_hat * (1.0 - n_hat)  # (N, n, 256)
        xin = trace.inputs[li]
        s = plan.layers[li].axon_types.axon_weights.astype(np.float64)
        dt = delta.transpose(1, 0, 2)
        g_c[li] = np.matmul(xin.transpose(1, 2, 0), dt) * s[None, :, None] / N
        g_b[li] = delta.sum(axis=0) / N
        if li == 0:
            break
        dx = np.matmul(dt, trace.weights[li].transpose(0, 2, 1)).transpose(1, 0, 2)
        lower = plan.layers[li - 1]
        d_prev = np.zeros((N, lower.n_cores * N_NEURONS + 1))
        # upper-layer sources are unique, only the padding slot repeats
        d_prev[:, plan.gather_indices()[li].reshape(-1)] = dx.reshape(N, -1)
        d_out = d_prev[:, :-1].reshape(N, lower.n_cores, N_NEURONS)
    return Gradients(g_c, g_b)


def sgd_step(plan: NetworkPlan, grads: Gradients, lr: float):
    for layer, gc, gb in zip(plan.layers, grads.crossbar, grads.bias):
        layer.shadow -= lr * gc
        np.clip(layer.shadow, 0.0, 1.0, out=layer.shadow)
        layer.bias -= lr * gb


def predict_train(plan: NetworkPlan, x, k: float = DEFAULT_STEEPNESS, batch: int = 500):
    """Argmax class of the surrogate forward, batched."""
    out = []
    for i in range(0, len(x), batch):
        out.append(np.argmax(forward(plan, x[i:i + batch], k).probabilities, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def train(plan: NetworkPlan, data: Dataset, config: TrainConfig,
          on_record: Callable[[dict], None] | None = None,
          on_epoch: Callable[[int, NetworkPlan], dict] | None = None):
    """Mini-batch SGD over ``data``; returns ``(TrainedModel, records)``.

    ``plan`` is copied, never mutated.  ``on_epoch`` may return extra fields
    (e.g. a held-out accuracy) merged into each epoch record.
    """
    if len(data) == 0:
        raise TrainingError("empty training set")
    K = plan.spec.categories
    if data.labels.min() < 0 or data.labels.max() >= K:
        raise TrainingError(f"labels must lie in [0, {K})")
    if data.shape != (plan.spec.input_height, plan.spec.input_width, plan.spec.channels):
        raise TrainingError(f"instance shape {data.shape} does not match the network input")
    plan = plan.copy()
    base_lr = learning_rate(plan.neurons_per_category, config.batch_size, config.lr_multiplier)
    records = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    iteration = 0
    n = len(data)
    for epoch in range(config.epochs):
        order = substream(config.seed, "shuffle", epoch).permutation(n)
        if config.augment:
            aug_params = draw_augment_params(
                config.augment_spec, substream(config.seed, "augment", epoch), n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = data.images[idx]
            if config.augment:
                xb = augment_batch(xb, aug_params[idx])
            yb = one_hot(data.labels[idx], K)
            lr = base_lr * config.lr_schedule.scale(iteration, epoch)
            trace = forward(plan, xb, config.k)
            losses = log_loss(trace.probabilities, yb)
            sgd_step(plan, backward(plan, trace, yb), lr)
            loss_sum += float(losses.sum())
            correct += int(np.sum(np.argmax(trace.probabilities, axis=1) == data.labels[idx]))
            emit({"type": "batch", "epoch": epoch, "iteration": iteration, "lr": lr,
                  "loss": float(losses.mean())})
            iteration += 1
        rec = {"type": "epoch", "epoch": epoch, "iteration": iteration,
               "lr": base_lr * config.lr_schedule.scale(iteration, epoch),
               "loss": loss_sum / n, "train_accuracy": correct / n}
        if on_epoch is not None:
            rec.update(on_epoch(epoch, plan))
        log.info("epoch %d loss %.5f train acc %.4f", epoch, rec["loss"], rec["train_accuracy"])
        emit(rec)
    return TrainedModel(plan, config), records

