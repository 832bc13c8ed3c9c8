"""Experiment configuration: a JSON document plus ``--set key=value`` overrides.

Every key is optional; an empty document yields the reference defaults
(20 clients, class budget (0.5, 1e-5), score budget (0.1, 1e-5), lambda 0.01,
alpha in {0.01, 0.04, 0.16, 10.24}). ``null`` in ``epsilon_class`` means a
run without class-head privacy; ``epsilon_score: null`` disables score
privacy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

from .features import DEFAULT_PROJECTION_DIM
from .federation import METHODS
from .synthetic import SyntheticSpec


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class FileDatasetSpec:
    """Pre-extracted features stored as FVEC1/FLAB1 files."""

    train_features: str
    train_labels: str
    test_features: str
    test_labels: str
    aux_features: str


@dataclass(frozen=True)
class ExtractorSpec:
    kind: str = "identity"
    output_dim: int = DEFAULT_PROJECTION_DIM
    seed: int = 0
    path: str | None = None

    def as_dict(self) -> dict:
        return {"kind": self.kind, "output_dim": self.output_dim, "seed": self.seed, "path": self.path}


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    n_clients: int = 20
    alpha: tuple[float, ...] = (0.01, 0.04, 0.16, 10.24)
    epsilon_class: tuple[float | None, ...] = (0.5,)
    delta_class: float = 1e-5
    epsilon_score: float | None = 0.1
    delta_score: float = 1e-5
    lambda_class: tuple[float, ...] = (0.01,)
    lambda_score: float = 0.01
    lambda_server: float = 1e-4
    class_count: int = 10
    dataset: SyntheticSpec | FileDatasetSpec = field(default_factory=SyntheticSpec)
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    aux_split: float = 0.8
    methods: tuple[str, ...] = METHODS
    repeats: int = 1
    tolerance: float = 1e-8
    max_iterations: int = 1000
    normalizer: str = "local"
    per_client_class_count: bool = False
    record_wall_time: bool = False

    def seeds(self) -> list[int]:
        return [self.master_seed + r for r in range(self.repeats)]

    def cell_count(self) -> int:
        return (len(self.methods) * len(self.alpha) * len(self.epsilon_class)
                * len(self.lambda_class) * self.repeats)


# --- validation helpers -----------------------------------------------------


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _int(path, v, lo=None, hi=None) -> int:
    if not _is_int(v):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v}")
    return v


def _positive(path, v) -> float:
    if not _is_num(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    if not v > 0:
        raise ConfigError(path, f"must be > 0, got {v}")
    return float(v)


def _open_unit(path, v) -> float:
    v = _positive(path, v)
    if not v < 1:
        raise ConfigError(path, f"must lie in (0, 1), got {v}")
    return v


def _epsilon(path, v) -> float | None:
    return None if v is None else _positive(path, v)


def _bool(path, v) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true or false, got {v!r}")
    return v


def _choice(options):
    def check(path, v):
        if v not in options:
            raise ConfigError(path, f"expected one of {list(options)}, got {v!r}")
        return v
    return check


def _list(item):
    def check(path, v):
        if not isinstance(v, list):
            raise ConfigError(path, f"expected a list, got {v!r}")
        if not v:
            raise ConfigError(path, "must not be empty")
        return tuple(item(f"{path}[{i}]", x) for i, x in enumerate(v))
    return check


def _methods(path, v):
    out = _list(_choice(METHODS))(path, v)
    if len(set(out)) != len(out):
        raise ConfigError(path, "methods must not repeat")
    return out


def _str(path, v) -> str:
    if not isinstance(v, str) or not v:
        raise ConfigError(path, f"expected a non-empty string, got {v!r}")
    return v


def _extractor(path, v) -> ExtractorSpec:
    _require_object(path, v)
    known = {"kind": _choice(("identity", "random_projection", "file_backed")),
             "output_dim": lambda p, x: _int(p, x, lo=1),
             "seed": lambda p, x: _int(p, x, lo=0),
             "path": _str}
    spec = ExtractorSpec(**_fields(path, v, known))
    if spec.kind == "file_backed" and spec.path is None:
        raise ConfigError(f"{path}.path", "required for a file_backed extractor")
    return spec


_SYNTHETIC_KEYS = {
    "classes": lambda p, x: _int(p, x, lo=2),
    "per_class": lambda p, x: _int(p, x, lo=1),
    "test_per_class": lambda p, x: _int(p, x, lo=1),
    "feature_dim": lambda p, x: _int(p, x, lo=1),
    "intrinsic_dim": lambda p, x: _int(p, x, lo=1),
    "spread": lambda p, x: _nonneg(p, x),
    "separation": _positive,
    "anisotropy": lambda p, x: _at_least_one(p, x),
    "ambient_noise": lambda p, x: _nonneg(p, x),
    "aux_size": lambda p, x: _int(p, x, lo=2),
    "aux_mode": _choice(("matched", "mismatched")),
}

_FILE_KEYS = {name: _str for name in ("train_features", "train_labels", "test_features", "test_labels", "aux_features")}


def _nonneg(path, v) -> float:
    if not _is_num(v) or v < 0:
        raise ConfigError(path, f"expected a finite number >= 0, got {v!r}")
    return float(v)


def _at_least_one(path, v) -> float:
    if not _is_num(v) or v < 1:
        raise ConfigError(path, f"expected a number >= 1, got {v!r}")
    return float(v)


def _dataset(path, v):
    _require_object(path, v)
    body = dict(v)
    kind = body.pop("kind", "synthetic")
    if kind == "synthetic":
        values = _fields(path, body, _SYNTHETIC_KEYS)
        try:
            return SyntheticSpec(**values)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
    if kind == "file":
        values = _fields(path, body, _FILE_KEYS)
        missing = [k for k in _FILE_KEYS if k not in values]
        if missing:
            raise ConfigError(f"{path}.{missing[0]}", "required for a file dataset")
        return FileDatasetSpec(**values)
    raise ConfigError(f"{path}.kind", f"expected 'synthetic' or 'file', got {kind!r}")


def _require_object(path, v):
    if not isinstance(v, dict):
        raise ConfigError(path, f"expected an object, got {v!r}")


def _fields(prefix, doc: dict, known: dict) -> dict:
    out = {}
    for key, value in doc.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError(path, "unknown key")
        out[key] = known[key](path, value)
    return out


_TOP_LEVEL = {
    "master_seed": lambda p, x: _int(p, x, lo=0, hi=2 ** 64 - 1),
    "n_clients": lambda p, x: _int(p, x, lo=1),
    "alpha": _list(_positive),
    "epsilon_class": _list(_epsilon),
    "delta_class": _open_unit,
    "epsilon_score": _epsilon,
    "delta_score": _open_unit,
    "lambda_class": _list(_positive),
    "lambda_score": _positive,
    "lambda_server": _positive,
    "class_count": lambda p, x: _int(p, x, lo=2),
    "dataset": _dataset,
    "extractor": _extractor,
    "aux_split": _open_unit,
    "methods": _methods,
    "repeats": lambda p, x: _int(p, x, lo=1),
    "tolerance": _positive,
    "max_iterations": lambda p, x: _int(p, x, lo=1),
    "normalizer": _choice(("local", "public")),
    "per_client_class_count": _bool,
    "record_wall_time": _bool,
}

assert set(_TOP_LEVEL) == {f.name for f in fields(ExperimentConfig)}


def config_from_dict(doc) -> ExperimentConfig:
    _require_object("<root>", doc)
    config = ExperimentConfig(**_fields("", doc, _TOP_LEVEL))
    if isinstance(config.dataset, SyntheticSpec) and config.dataset.classes != config.class_count:
        raise ConfigError("dataset.classes", f"must equal class_count ({config.class_count})")
    if config.master_seed + config.repeats - 1 >= 2 ** 64:
        raise ConfigError("repeats", "master_seed + repeats overflows the 64-bit seed range")
    return config


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    """Parse a JSON document (empty text allowed) and apply ``key=value`` overrides.

    Override keys may be dotted (``dataset.per_class=500``); values are read
    as JSON and fall back to a plain string.
    """
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "top level must be an object")
    for item in overrides:
        apply_override(doc, item)
    return config_from_dict(doc)


def apply_override(doc: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(item, "override must look like key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = doc
    for depth, part in enumerate(parts[:-1]):
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(".".join(parts[: depth + 1]), "cannot set a sub-key on a non-object")
        node = child
    node[parts[-1]] = value
