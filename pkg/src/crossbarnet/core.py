"""Per-core data model and the neuron math shared by trainer and simulator.

A core has 256 axons (rows) and 256 neurons (columns).  Every axon carries
an axon type; the type selects an integer weight from a small weight set
shared by the whole core.  The synaptic crossbar is binary; during training
it is derived from a continuous shadow matrix by thresholding at 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_AXONS = 256
N_NEURONS = 256
MAX_TYPE_WEIGHTS = 4
DEFAULT_STEEPNESS = 0.5


class CoreError(ValueError):
    pass


def round_half_away(x):
    """Round to nearest integer, ties away from zero (0.5 -> 1, -0.5 -> -1)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class AxonTypeTable:
    """Axon type per axon plus the ordered weight set the types index into."""

    types: np.ndarray
    type_weights: tuple[int, ...]

    def __post_init__(self):
        types = np.asarray(self.types, dtype=np.int8)
        weights = tuple(int(w) for w in self.type_weights)
        if not 1 <= len(weights) <= MAX_TYPE_WEIGHTS:
            raise CoreError(f"need 1..{MAX_TYPE_WEIGHTS} axon type weights, got {len(weights)}")
        if types.shape != (N_AXONS,):
            raise CoreError(f"axon type table must have {N_AXONS} entries, got shape {types.shape}")
        if types.min() < 0 or types.max() >= len(weights):
            raise CoreError("axon type index out of range of the weight set")
        types.setflags(write=False)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "type_weights", weights)

    @classmethod
    def round_robin(cls, type_weights) -> "AxonTypeTable":
        """Axon i gets type ``i mod len(type_weights)``."""
        n = len(type_weights)
        return cls(np.arange(N_AXONS) % n, tuple(type_weights))

    @property
    def axon_weights(self) -> np.ndarray:
        """Scalar weight ``s_i`` resolved for every axon (int64, shape (256,))."""
        return np.asarray(self.type_weights, dtype=np.int64)[self.types]


def binarize(shadow: np.ndarray) -> np.ndarray:
    """Threshold a shadow crossbar: a bit is set iff its shadow value is > 0.5."""
    return np.asarray(shadow) > 0.5


def effective_weights(crossbar: np.ndarray, axon_types: AxonTypeTable) -> np.ndarray:
    """Integer weight matrix ``w_ij = c_ij * s_i`` (axon-major)."""
    c = np.asarray(crossbar, dtype=np.int64)
    return c * axon_types.axon_weights[:, None]


def init_shadow(rng: np.random.Generator, shape=(N_AXONS, N_NEURONS)) -> np.ndarray:
    # U[0.25, 0.75]: balanced initial binarization, away from the clip walls
    return rng.uniform(0.25, 0.75, size=shape)


@dataclass
class CorePlan:
    """One hardware core.

    ``input_map[i]`` is the source id feeding axon ``i`` (-1 when the axon is
    unused); ``output_map[j]`` is the sink id that neuron ``j`` drives (-1 when
    unused).  ``shadow`` and ``bias`` may be views into a layer's stacked
    parameter arrays.
    """

    axon_types: AxonTypeTable
    shadow: np.ndarray
    bias: np.ndarray
    input_map: np.ndarray = field(default_factory=lambda: np.full(N_AXONS, -1, dtype=np.int64))
    output_map: np.ndarray = field(default_factory=lambda: np.full(N_NEURONS, -1, dtype=np.int64))

    def __post_init__(self):
        if self.shadow.shape != (N_AXONS, N_NEURONS):
            raise CoreError(f"shadow crossbar must be {N_AXONS}x{N_NEURONS}")
        if self.bias.shape != (N_NEURONS,):
            raise CoreError(f"bias vector must have {N_NEURONS} entries")
        # indexed by axon / neuron, so each axon and neuron appears at most once
        self.input_map = np.asarray(self.input_map, dtype=np.int64)
        self.output_map = np.asarray(self.output_map, dtype=np.int64)
        if self.input_map.shape != (N_AXONS,) or self.output_map.shape != (N_NEURONS,):
            raise CoreError("input/output maps must have one entry per axon/neuron")

    @property
    def crossbar(self) -> np.ndarray:
        return binarize(self.shadow)

    @property
    def deployed_bias(self) -> np.ndarray:
        return round_half_away(self.bias).astype(np.int64)

    def weights(self) -> np.ndarray:
        return effective_weights(self.crossbar, self.axon_types)


def integrate(core: CorePlan, inputs, mode: str = "training") -> np.ndarray:
    """Membrane input ``sum_i x_i c_ij s_i + b_j`` for every neuron of a core.

    ``mode="deployed"`` uses the rounded integer bias and returns integers
    whenever the inputs are binary; ``mode="training"`` uses the continuous
    bias.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[-1] != N_AXONS:
        raise CoreError(f"expected {N_AXONS} axon inputs, got {x.shape[-1]}")
    w = core.weights().astype(np.float64)
    if mode == "training":
        return x @ w + core.bias
    if mode == "deployed":
        return x @ w + core.deployed_bias
    raise CoreError(f"unknown integration mode {mode!r}")


def neuron_fire(current):
    """Spike (1) iff the integrated input is strictly positive."""
    return (np.asarray(current) > 0).astype(np.int8)


def neuron_surrogate(current, k: float = DEFAULT_STEEPNESS):
    """Logistic stand-in for the step nonlinearity: ``1 / (1 + exp(-2 k I))``."""
    z = 2.0 * k * np.asarray(current, dtype=np.float64)
    # branch on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else out[()]


def neuron_surrogate_grad(current, k: float = DEFAULT_STEEPNESS):
    """Backprop factor ``n(1 - n)`` of the logistic surrogate.

    The chain-rule factor ``2k`` is deliberately not applied; it is exactly 1
    at the default steepness of 1/2.
    """
    n = neuron_surrogate(current, k)
    return n * (1.0 - n)
