"""Rate coding and tick-level execution of a fully discretized network.

Neurons are stateless: each tick every neuron integrates its weighted input
spikes plus its integer bias and fires iff the sum is strictly positive.
Spikes propagate through all layers inside the same tick; hardware would
pipeline one tick per layer, which shifts outputs in time but leaves spike
counts unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import N_NEURONS, binarize, round_half_away
from .dataio import Dataset
from .topology import NetworkPlan, NetworkSpec


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class SpikeTrain:
    ticks: int
    spikes: np.ndarray  # bool, (ticks,)

    @property
    def count(self) -> int:
        return int(self.spikes.sum())


def spike_counts(values, T: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0) or np.any(v > 1) or np.any(np.isnan(v)):
        raise EncodingError("rate-coded values must lie in [0, 1]")
    return round_half_away(v * T).astype(np.int64)


def spike_raster(values, T: int) -> np.ndarray:
    """Bool array (T, *values.shape): ``round(v*T)`` evenly spread spikes each.

    Tick ``t`` carries a spike iff ``floor((t+1)k/T) > floor(tk/T)``.
    """
    if T < 1:
        raise EncodingError("need at least one tick")
    k = spike_counts(values, T)
    t = np.arange(T).reshape((T,) + (1,) * k.ndim)
    return ((t + 1) * k) // T > (t * k) // T


def rate_encode(value: float, T: int) -> SpikeTrain:
    return SpikeTrain(T, spike_raster(np.float64(value), T).reshape(T))


@dataclass
class DeploymentImage:
    """Binary crossbars, axon types and integer biases; no continuous state."""

    spec: NetworkSpec
    sources: list  # per layer (n_cores, 256) int64
    grids: list  # per layer (rows, cols)
    axon_types: list  # per layer AxonTypeTable
    crossbars: list  # per layer (n_cores, 256, 256) bool
    biases: list  # per layer (n_cores, 256) int64
    category: np.ndarray
    neurons_per_category: int

    @classmethod
    def from_plan(cls, plan: NetworkPlan) -> "DeploymentImage":
        return cls(
            spec=plan.spec,
            sources=[l.sources.copy() for l in plan.layers],
            grids=[tuple(l.grid) for l in plan.layers],
            axon_types=[l.axon_types for l in plan.layers],
            crossbars=[binarize(l.shadow) for l in plan.layers],
            biases=[round_half_away(l.bias).astype(np.int64) for l in plan.layers],
            category=plan.category.copy(),
            neurons_per_category=plan.neurons_per_category,
        )

    @property
    def n_inputs(self) -> int:
        s = self.spec
        return s.input_height * s.input_width * s.channels

    def _compiled(self):
        # float64 is exact for these integer sums, and uses BLAS
        if not hasattr(self, "_cache"):
            gathers, weights = [], []
            n_prev = self.n_inputs
            for src, types, xbar in zip(self.sources, self.axon_types, self.crossbars):
                g = src.copy()
                g[g < 0] = n_prev
                gathers.append(g)
                s = types.axon_weights.astype(np.float64)
                weights.append(xbar * s[None, :, None])
                n_prev = src.shape[0] * N_NEURONS
            cat = np.zeros((len(self.category), self.spec.categories))
            assigned = self.category >= 0
            cat[np.nonzero(assigned)[0], self.category[assigned]] = 1.0
            self._cache = (gathers, weights, cat)
        return self._cache


def simulate_tick(image: DeploymentImage, input_spikes) -> list[np.ndarray]:
    """One tick for a batch of binary inputs (N, n_inputs).

    Returns the spikes of every layer, each (N, n_cores, 256) int8.
    """
    x = np.asarray(input_spikes)
    if x.ndim == 1:
        x = x[None]
    N = x.shape[0]
    prev = x.reshape(N, -1).astype(np.float64)
    gathers, weights, _ = image._compiled()
    spikes = []
    for g, w, b in zip(gathers, weights, image.biases):
        padded = np.concatenate([prev, np.zeros((N, 1))], axis=1)
        xin = padded[:, g]
        current = np.matmul(xin.transpose(1, 0, 2), w).transpose(1, 0, 2) + b
        fired = (current > 0).astype(np.int8)
        spikes.append(fired)
        prev = fired.reshape(N, -1).astype(np.float64)
    return spikes


@dataclass
class TickResult:
    counts: np.ndarray  # (K,) cumulative spikes per category
    predicted: int


def predict_from_counts(counts, neurons_per_category: int) -> np.ndarray:
    """Argmax of normalized counts; ``np.argmax`` keeps the lowest index on ties."""
    counts = np.asarray(counts, dtype=np.float64)
    return np.argmax(counts / neurons_per_category, axis=-1)


def run_counts(image: DeploymentImage, instances, T: int, batch: int = 1000) -> np.ndarray:
    """Per-category spike counts (N, K) over a T-tick window."""
    if T < 1:
        raise EncodingError("need at least one tick")
    x = np.asarray(instances, dtype=np.float64)
    N = x.shape[0]
    x = np.clip(x.reshape(N, -1), 0.0, 1.0)
    _, _, cat = image._compiled()
    out = np.zeros((N, image.spec.categories), dtype=np.int64)
    for i in range(0, N, batch):
        xb = x[i:i + batch]
        raster = spike_raster(xb, T)
        for t in range(T):
            last = simulate_tick(image, raster[t])[-1]
            out[i:i + batch] += (last.reshape(len(xb), -1) @ cat).astype(np.int64)
    return out


def classify(image: DeploymentImage, instance, T: int) -> tuple[int, TickResult]:
    counts = run_counts(image, np.asarray(instance)[None], T)[0]
    pred = int(predict_from_counts(counts, image.neurons_per_category))
    return pred, TickResult(counts, pred)


@dataclass
class EvalReport:
    ticks: int
    ids: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    counts: np.ndarray  # (N, K)

    @property
    def correct(self) -> np.ndarray:
        return self.predictions == self.labels

    @property
    def accuracy(self) -> float:
        from .metrics import accuracy
        return accuracy(self)

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, y, p, c in zip(self.ids, self.labels, self.predictions, self.counts):
                f.write(json.dumps({"type": "instance", "id": int(i), "label": int(y),
                                    "predicted": int(p), "counts": c.tolist()}) + "\n")
            f.write(json.dumps({"type": "summary", "ticks": self.ticks,
                                "instances": len(self.ids), "accuracy": self.accuracy}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EvalReport":
        ids, labels, preds, counts, ticks = [], [], [], [], None
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("type") == "summary":
                    ticks = rec["ticks"]
                    continue
                ids.append(rec["id"])
                labels.append(rec["label"])
                preds.append(rec["predicted"])
                counts.append(rec["counts"])
        return cls(ticks, np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64),
                   np.array(preds, dtype=np.int64), np.array(counts, dtype=np.int64))


def evaluate(image: DeploymentImage, data: Dataset, T: int) -> EvalReport:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    counts = run_counts(image, data.images, T)
    preds = predict_from_counts(counts, image.neurons_per_category)
    return EvalReport(T, np.arange(len(data)), data.labels.copy(), preds, counts)
