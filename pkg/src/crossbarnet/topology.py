"""Block/stride tiling of the input and wiring of cores into layers.

Source ids: in the first layer a source is a pixel, numbered
``(y * width + x) * channels + ch``.  In upper layers a source is a neuron of
the layer below, numbered ``core_index * 256 + neuron`` with cores in
row-major grid order.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import N_AXONS, N_NEURONS, AxonTypeTable, CorePlan, init_shadow
from .rng import substream

log = logging.getLogger(__name__)


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    block_size: int
    stride: int

    def __post_init__(self):
        if self.block_size < 1 or self.stride < 1:
            raise TopologyError("block size and stride must be positive")
        if self.stride > self.block_size:
            raise TopologyError(
                f"stride {self.stride} > block size {self.block_size} would leave gaps"
            )


@dataclass(frozen=True)
class NetworkSpec:
    input_height: int
    input_width: int
    channels: int
    layers: tuple[LayerSpec, ...]
    categories: int
    axon_weights: tuple[int, ...] = (-1, 1)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "axon_weights", tuple(int(w) for w in self.axon_weights))

    def to_dict(self) -> dict:
        return {
            "input_height": self.input_height,
            "input_width": self.input_width,
            "channels": self.channels,
            "layers": [{"block_size": l.block_size, "stride": l.stride} for l in self.layers],
            "categories": self.categories,
            "axon_weights": list(self.axon_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_height=int(d["input_height"]),
            input_width=int(d["input_width"]),
            channels=int(d.get("channels", 1)),
            layers=tuple(LayerSpec(int(l["block_size"]), int(l["stride"])) for l in d["layers"]),
            categories=int(d["categories"]),
            axon_weights=tuple(d.get("axon_weights", (-1, 1))),
        )


SMALL_NETWORK = (LayerSpec(16, 12), LayerSpec(1, 1), LayerSpec(2, 1))
LARGE_NETWORK = (LayerSpec(16, 4), LayerSpec(2, 1), LayerSpec(2, 1), LayerSpec(2, 1))


def tile_1d(extent: int, block_size: int, stride: int) -> int:
    """Number of block positions 0, stride, 2*stride, ... that fit in ``extent``."""
    if block_size > extent:
        raise TopologyError(f"block size {block_size} exceeds extent {extent}")
    return (extent - block_size) // stride + 1


def _tile_checked(extent, block, stride, what):
    n = tile_1d(extent, block, stride)
    covered = (n - 1) * stride + block
    if covered < extent:
        log.warning("%s: block %d stride %d covers %d of %d; trailing %d dropped",
                    what, block, stride, covered, extent, extent - covered)
    return n


@dataclass
class LayerPlan:
    """All cores of one layer, parameters stacked along the first axis."""

    spec: LayerSpec
    grid: tuple[int, int]
    sources: np.ndarray  # (n_cores, 256) source id per axon, -1 unused
    axon_types: AxonTypeTable
    shadow: np.ndarray  # (n_cores, 256, 256)
    bias: np.ndarray  # (n_cores, 256)

    @property
    def n_cores(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class NetworkPlan:
    spec: NetworkSpec
    layers: list[LayerPlan]
    category: np.ndarray  # category per last-layer neuron (flat), -1 unassigned
    neurons_per_category: int
    seed: int = 0
    _gather: list = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_cores(self) -> int:
        return sum(l.n_cores for l in self.layers)

    @property
    def n_inputs(self) -> int:
        s = self.spec
        return s.input_height * s.input_width * s.channels

    def gather_indices(self) -> list[np.ndarray]:
        """Per layer, source ids with -1 redirected to an extra zero slot."""
        if self._gather is None:
            out = []
            n_prev = self.n_inputs
            for layer in self.layers:
                g = layer.sources.copy()
                g[g < 0] = n_prev
                out.append(g)
                n_prev = layer.n_cores * N_NEURONS
            self._gather = out
        return self._gather

    def outputs_of(self, layer_index: int) -> np.ndarray:
        """Sink id per neuron of a layer, shape (n_cores, 256), -1 unused.

        Sinks are ``core * 256 + axon`` in the layer above; last-layer neurons
        map to their category (or -1).
        """
        layer = self.layers[layer_index]
        n = layer.n_cores * N_NEURONS
        if layer_index == len(self.layers) - 1:
            return self.category.reshape(layer.n_cores, N_NEURONS).copy()
        out = np.full(n, -1, dtype=np.int64)
        up = self.layers[layer_index + 1].sources.reshape(-1)
        used = up >= 0
        out[up[used]] = np.nonzero(used)[0]
        return out.reshape(layer.n_cores, N_NEURONS)

    def core(self, layer_index: int, core_index: int) -> CorePlan:
        layer = self.layers[layer_index]
        return CorePlan(
            axon_types=layer.axon_types,
            shadow=layer.shadow[core_index],
            bias=layer.bias[core_index],
            input_map=layer.sources[core_index],
            output_map=self.outputs_of(layer_index)[core_index],
        )

    def wiring(self):
        """Yield explicit edges ``(layer, source_id, core_index, axon)``."""
        for li, layer in enumerate(self.layers):
            cores, axons = np.nonzero(layer.sources >= 0)
            for c, a in zip(cores.tolist(), axons.tolist()):
                yield li, int(layer.sources[c, a]), c, a

    def copy(self) -> "NetworkPlan":
        return copy.deepcopy(self)


def validate_spec(spec: NetworkSpec) -> list[str]:
    """Every structural problem with ``spec``, as messages (empty if fine)."""
    errors = []
    if not spec.layers:
        errors.append("network needs at least one layer")
    if spec.categories < 1:
        errors.append("categories must be >= 1")
    if not 1 <= len(spec.axon_weights) <= 4:
        errors.append("axon weight set must have 1 to 4 entries")
    if spec.channels < 1 or spec.input_height < 1 or spec.input_width < 1:
        errors.append("input dimensions must be positive")
        return errors
    for i, l in enumerate(spec.layers):
        b2 = l.block_size ** 2
        if i == 0:
            if b2 * spec.channels > N_AXONS:
                errors.append(f"layer 1: block {l.block_size}^2 x {spec.channels} channels "
                              f"needs {b2 * spec.channels} axons > {N_AXONS}")
        elif N_NEURONS % b2:
            errors.append(f"layer {i + 1}: block {l.block_size}^2 does not divide {N_NEURONS}")
    try:
        rows, cols = spec.input_height, spec.input_width
        for i, l in enumerate(spec.layers):
            rows = tile_1d(rows, l.block_size, l.stride)
            cols = tile_1d(cols, l.block_size, l.stride)
    except TopologyError as e:
        errors.append(f"layer {i + 1}: {e}")
    else:
        if rows * cols * N_NEURONS < spec.categories:
            errors.append("last layer has fewer neurons than categories")
    return errors


def assign_output_categories(n_neurons: int, categories: int, seed: int = 0):
    """Randomly split ``n_neurons`` into ``categories`` equal groups.

    Returns ``(category, per_category)`` where ``category[j]`` is the class of
    neuron ``j`` or -1 for the ``n_neurons mod categories`` leftovers.
    """
    if categories > n_neurons:
        raise TopologyError(f"{categories} categories but only {n_neurons} output neurons")
    per = n_neurons // categories
    perm = substream(seed, "categories").permutation(n_neurons)
    category = np.full(n_neurons, -1, dtype=np.int64)
    for k in range(categories):
        category[perm[k * per:(k + 1) * per]] = k
    return category, per


def build_plan(spec: NetworkSpec, seed: int = 0, init: bool = True) -> NetworkPlan:
    """Tile, allocate and wire every core; shadows drawn from the "init" stream.

    ``init=False`` leaves shadows at zero (the caller fills them in).
    """
    errors = validate_spec(spec)
    if errors:
        raise TopologyError("; ".join(errors))
    rng = substream(seed, "init")
    axon_types = AxonTypeTable.round_robin(spec.axon_weights)
    layers = []
    H, W, C = spec.input_height, spec.input_width, spec.channels
    prev_rows = prev_cols = None
    for li, lspec in enumerate(spec.layers):
        B, S = lspec.block_size, lspec.stride
        if li == 0:
            rows = _tile_checked(H, B, S, "layer 1 rows")
            cols = _tile_checked(W, B, S, "layer 1 cols")
            sources = np.full((rows * cols, N_AXONS), -1, dtype=np.int64)
            dy, dx, ch = np.meshgrid(np.arange(B), np.arange(B), np.arange(C), indexing="ij")
            axon = ((dy * B + dx) * C + ch).ravel()
            for r in range(rows):
                for c in range(cols):
                    pix = (((r * S + dy) * W + (c * S + dx)) * C + ch).ravel()
                    sources[r * cols + c, axon] = pix
        else:
            rows = _tile_checked(prev_rows, B, S, f"layer {li + 1} rows")
            cols = _tile_checked(prev_cols, B, S, f"layer {li + 1} cols")
            m = N_NEURONS // (B * B)
            sources = np.full((rows * cols, N_AXONS), -1, dtype=np.int64)
            t = np.arange(m)
            for r in range(rows):
                for c in range(cols):
                    for dy in range(B):
                        for dx in range(B):
                            lower = (r * S + dy) * prev_cols + (c * S + dx)
                            sl = dy * B + dx
                            sources[r * cols + c, sl * m + t] = lower * N_NEURONS + sl * m + t
            used = sources[sources >= 0]
            assert len(np.unique(used)) == len(used), "neuron fan-out exceeded"
        n = rows * cols
        layers.append(LayerPlan(
            spec=lspec,
            grid=(rows, cols),
            sources=sources,
            axon_types=axon_types,
            shadow=(init_shadow(rng, (n, N_AXONS, N_NEURONS)) if init
                    else np.zeros((n, N_AXONS, N_NEURONS))),
            bias=np.zeros((n, N_NEURONS)),
        ))
        prev_rows, prev_cols = rows, cols
    category, per = assign_output_categories(layers[-1].n_cores * N_NEURONS, spec.categories, seed)
    return NetworkPlan(spec=spec, layers=layers, category=category,
                       neurons_per_category=per, seed=seed)
