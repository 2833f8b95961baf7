"""Binary model files: training checkpoints and deployment images.

Layout, little-endian::

    "CBF1"                      4-byte magic
    payload:
      u8      format            0 = checkpoint, 1 = deployment
      u32     header length     followed by that many bytes of UTF-8 JSON
                                (network spec, seed, neurons per category,
                                preprocessing, training config)
      i16[n]  category          per last-layer neuron, -1 unassigned
      per core, layer-major, row-major within a layer's grid:
        u8[256]      axon types
        u8[8192]     crossbar bitmap, axon-major; neuron j of an axon row is
                     bit (j % 8), LSB first, of byte j // 8 of that row
        biases       i32[256] (deployment) or f64[256] (checkpoint)
        f64[65536]   shadow matrix, axon-major (checkpoint only)
    u32     CRC-32 of the payload

Wiring is not stored; it is rebuilt from the network spec.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import train_config_from_dict, train_config_to_dict
from .core import N_AXONS, N_NEURONS, AxonTypeTable, binarize
from .simulate import DeploymentImage
from .topology import NetworkSpec, build_plan
from .trainer import TrainedModel

MAGIC = b"CBF1"
CHECKPOINT = 0
DEPLOYMENT = 1
BITMAP_BYTES = N_AXONS * N_NEURONS // 8


class ModelFileError(ValueError):
    pass


@dataclass
class LoadedModel:
    kind: int
    image: DeploymentImage
    model: TrainedModel | None  # checkpoints only
    preprocess: dict


def _header(spec: NetworkSpec, seed, per_category, preprocess, training) -> bytes:
    doc = {"network": spec.to_dict(), "seed": int(seed),
           "neurons_per_category": int(per_category), "preprocess": preprocess}
    if training is not None:
        doc["training"] = training
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack_bits(xbar: np.ndarray) -> bytes:
    return np.packbits(xbar.astype(bool), axis=1, bitorder="little").tobytes()


def _encode(kind, spec, seed, per_category, preprocess, training, category, layers) -> bytes:
    header = _header(spec, seed, per_category, preprocess, training)
    parts = [struct.pack("<BI", kind, len(header)), header,
             np.asarray(category, dtype="<i2").tobytes()]
    for types, xbars, biases, shadows in layers:
        t = np.asarray(types.types, dtype=np.uint8).tobytes()
        for i in range(len(xbars)):
            parts.append(t)
            parts.append(_pack_bits(xbars[i]))
            if kind == DEPLOYMENT:
                parts.append(np.asarray(biases[i], dtype="<i4").tobytes())
            else:
                parts.append(np.asarray(biases[i], dtype="<f8").tobytes())
                parts.append(np.asarray(shadows[i], dtype="<f8").tobytes())
    payload = b"".join(parts)
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def checkpoint_bytes(model: TrainedModel) -> bytes:
    plan = model.plan
    layers = [(l.axon_types, binarize(l.shadow), l.bias, l.shadow) for l in plan.layers]
    return _encode(CHECKPOINT, plan.spec, plan.seed, plan.neurons_per_category,
                   model.preprocess, train_config_to_dict(model.config), plan.category, layers)


def deployment_bytes(image: DeploymentImage, preprocess: dict, seed: int = 0) -> bytes:
    layers = [(t, x, b, None) for t, x, b in zip(image.axon_types, image.crossbars, image.biases)]
    return _encode(DEPLOYMENT, image.spec, seed, image.neurons_per_category,
                   preprocess, None, image.category, layers)


def write_atomic(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        # mkstemp creates 0600; give the file the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model: TrainedModel):
    write_atomic(path, checkpoint_bytes(model))


def save_deployment(path, image: DeploymentImage, preprocess: dict, seed: int = 0):
    write_atomic(path, deployment_bytes(image, preprocess, seed))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFileError("model file truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def from_bytes(data: bytes) -> LoadedModel:
    if len(data) < 8 or data[:4] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ModelFileError("model file checksum mismatch (corrupt file)")
    r = _Reader(payload)
    kind, hlen = struct.unpack("<BI", r.take(5))
    if kind not in (CHECKPOINT, DEPLOYMENT):
        raise ModelFileError(f"unknown format flag {kind}")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
        spec = NetworkSpec.from_dict(header["network"])
    except (ValueError, KeyError) as e:
        raise ModelFileError(f"bad header: {e}") from None
    plan = build_plan(spec, header["seed"], init=False)
    n_last = plan.layers[-1].n_cores * N_NEURONS
    plan.category = np.frombuffer(r.take(2 * n_last), dtype="<i2").astype(np.int64)
    plan.neurons_per_category = header["neurons_per_category"]
    xbars, biases = [], []
    for layer in plan.layers:
        lx = np.zeros((layer.n_cores, N_AXONS, N_NEURONS), dtype=bool)
        lb = np.zeros((layer.n_cores, N_NEURONS), dtype=np.int64)
        types = None
        for i in range(layer.n_cores):
            t = np.frombuffer(r.take(N_AXONS), dtype=np.uint8)
            if types is None:
                types = t
            elif not np.array_equal(t, types):
                raise ModelFileError("cores of one layer disagree on axon types")
            bits = np.frombuffer(r.take(BITMAP_BYTES), dtype=np.uint8).reshape(N_AXONS, -1)
            lx[i] = np.unpackbits(bits, axis=1, bitorder="little").astype(bool)
            if kind == DEPLOYMENT:
                lb[i] = np.frombuffer(r.take(4 * N_NEURONS), dtype="<i4")
            else:
                layer.bias[i] = np.frombuffer(r.take(8 * N_NEURONS), dtype="<f8")
                layer.shadow[i] = np.frombuffer(
                    r.take(8 * N_AXONS * N_NEURONS), dtype="<f8").reshape(N_AXONS, N_NEURONS)
                if not np.array_equal(binarize(layer.shadow[i]), lx[i]):
                    raise ModelFileError("checkpoint crossbar does not match its shadow")
        try:
            layer.axon_types = AxonTypeTable(types, spec.axon_weights)
        except ValueError as e:
            raise ModelFileError(str(e)) from None
        xbars.append(lx)
        biases.append(lb)
    if r.pos != len(payload):
        raise ModelFileError("trailing bytes after the last core")
    preprocess = header.get("preprocess", {"kind": "divide255"})
    if kind == CHECKPOINT:
        model = TrainedModel(plan, train_config_from_dict(header["training"]), preprocess)
        return LoadedModel(kind, DeploymentImage.from_plan(plan), model, preprocess)
    image = DeploymentImage(
        spec=spec, sources=[l.sources for l in plan.layers], grids=[l.grid for l in plan.layers],
        axon_types=[l.axon_types for l in plan.layers], crossbars=xbars, biases=biases,
        category=plan.category, neurons_per_category=plan.neurons_per_category)
    return LoadedModel(kind, image, None, preprocess)


def load(path) -> LoadedModel:
    return from_bytes(Path(path).read_bytes())
