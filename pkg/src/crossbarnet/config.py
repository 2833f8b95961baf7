"""Run configuration: a JSON document validated up front.

Every problem found is collected and reported together in one ConfigError.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dataio import AugmentSpec
from .topology import LARGE_NETWORK, SMALL_NETWORK, NetworkSpec, validate_spec
from .trainer import LRSchedule, TrainConfig

PRESETS = {"small": SMALL_NETWORK, "large": LARGE_NETWORK}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class DataConfig:
    kind: str  # "idx" or "image-manifest"
    train: dict  # idx: {"images", "labels"}; manifest: {"manifest"}
    test: dict | None = None
    train_limit: int | None = None
    test_limit: int | None = None


@dataclass
class RunConfig:
    network: NetworkSpec
    training: TrainConfig
    data: DataConfig
    normalization: dict = field(default_factory=lambda: {"kind": "divide255"})
    output: dict = field(default_factory=dict)
    eval_ticks: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)

    @property
    def seed(self) -> int:
        return self.training.seed


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["lr_schedule"] = asdict(cfg.lr_schedule)
    d["augment_spec"] = asdict(cfg.augment_spec)
    return d


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if "lr_schedule" in d:
        d["lr_schedule"] = LRSchedule(**d["lr_schedule"])
    if "augment_spec" in d:
        d["augment_spec"] = AugmentSpec(**d["augment_spec"])
    return TrainConfig(**d)


def _network(d, errors) -> NetworkSpec | None:
    if not isinstance(d, dict):
        errors.append("network: missing or not an object")
        return None
    layers = d.get("layers")
    if isinstance(layers, str):
        if layers not in PRESETS:
            errors.append(f"network.layers: unknown preset {layers!r} (small, large)")
            return None
        layers = [{"block_size": l.block_size, "stride": l.stride} for l in PRESETS[layers]]
    try:
        spec = NetworkSpec.from_dict({**d, "layers": layers})
    except (KeyError, TypeError, ValueError) as e:
        errors.append(f"network: {type(e).__name__}: {e}")
        return None
    errors.extend(f"network: {m}" for m in validate_spec(spec))
    return spec


def _paths(section: dict | None, keys, base: Path, where: str, errors, check_exists: bool):
    if section is None:
        return None
    out = {}
    for key in keys:
        if key not in section:
            errors.append(f"{where}.{key}: missing")
            continue
        p = Path(section[key])
        if not p.is_absolute():
            p = base / p
        if check_exists and not p.exists():
            errors.append(f"{where}.{key}: {p} does not exist")
        out[key] = str(p)
    return out


def parse_config(raw: dict, base_dir=".", check_paths: bool = True) -> RunConfig:
    errors: list[str] = []
    base = Path(base_dir)
    network = _network(raw.get("network"), errors)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("seed: must be an integer")
        seed = 0
    training = None
    tdict = dict(raw.get("training", {}))
    tdict.setdefault("seed", seed)
    try:
        training = train_config_from_dict(tdict)
    except (TypeError, ValueError) as e:
        errors.append(f"training: {e}")

    data = None
    draw = raw.get("data")
    if not isinstance(draw, dict):
        errors.append("data: missing or not an object")
    else:
        kind = draw.get("kind")
        keys = {"idx": ("images", "labels"), "image-manifest": ("manifest",)}.get(kind)
        if keys is None:
            errors.append(f"data.kind: {kind!r} is not 'idx' or 'image-manifest'")
        else:
            if "train" not in draw:
                errors.append("data.train: missing")
            train = _paths(draw.get("train", {}), keys, base, "data.train", errors, check_paths)
            test = _paths(draw.get("test"), keys, base, "data.test", errors, check_paths)
            data = DataConfig(kind, train, test, draw.get("train_limit"), draw.get("test_limit"))

    norm = raw.get("normalization", {"kind": "divide255"})
    if norm.get("kind") not in ("divide255", "feature_standardize"):
        errors.append(f"normalization.kind: {norm.get('kind')!r} is not "
                      "'divide255' or 'feature_standardize'")
    elif norm["kind"] == "feature_standardize":
        norm = {"kind": "feature_standardize", "eps": float(norm.get("eps", 1e-5))}
        if norm["eps"] <= 0:
            errors.append("normalization.eps: must be > 0")

    output = {}
    for key, default in (("checkpoint", "model.ckpt.cbf"), ("deployment", "model.deploy.cbf"),
                         ("log", "train_log.jsonl")):
        p = Path(raw.get("output", {}).get(key, default))
        output[key] = str(p if p.is_absolute() else base / p)

    ticks = raw.get("eval_ticks", [1, 2, 4, 8, 16, 32, 64])
    if not all(isinstance(t, int) and t >= 1 for t in ticks):
        errors.append("eval_ticks: must be positive integers")

    if errors:
        raise ConfigError(errors)
    return RunConfig(network, training, data, norm, output, tuple(ticks))


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError([f"{path}: {e}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: not valid JSON: {e}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return parse_config(raw, path.parent, check_paths)

