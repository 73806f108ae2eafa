"""Run configuration: defaults, dataset presets, file loading and validation."""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv

from trajsim.core.grid import GridSpec, make_grid
from trajsim.core.trajectory import BoundingBox
from trajsim.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_CONFIG = "TRAJSIM_CONFIG"
ENV_THREADS = "TRAJSIM_THREADS"
YAML_SUFFIXES = (".yml", ".yaml")

DEFAULTS: Dict[str, Any] = {
    "dataset.preset": None,
    "bbox.lon_min": -8.519,
    "bbox.lon_max": -8.005,
    "bbox.lat_min": 41.1001,
    "bbox.lat_max": 41.2086,
    "grid.cell_size": 100.0,
    "filter.min_len": 20,
    "filter.max_len": 200,
    "split.seed": 0,
    "distance.planar": False,
    "model.d": 64,
    "model.d_hid": None,
    "model.layers": 1,
    "model.heads": 16,
    "model.epsilon": 0.5,
    "model.pre_encoder": "linear",
    "model.attention": "semantic",
    "model.fusion": "both",
    "ddbm.beta_min": 0.1,
    "ddbm.beta_max": 20.0,
    "ddbm.resample_len": 64,
    "ddbm.t_min": 0.01,
    "ddbm.t_max": 0.99,
    "pretrain.epochs": 20,
    "pretrain.patience": 5,
    "loss.gamma1": 0.1,
    "loss.gamma2": 0.001,
    "loss.tau_mode": "mean_distance",
    "loss.tau_value": 1.0,
    "train.batch_size": 128,
    "train.lr": 0.001,
    "finetune.epochs": 30,
    "finetune.patience": 10,
    "seed": 0,
    "threads": 0,
}

# keys whose default is None still need a type
_TYPES: Dict[str, type] = {"dataset.preset": str, "model.d_hid": int}

_PORTO = {"bbox.lon_min": -8.519, "bbox.lon_max": -8.005, "bbox.lat_min": 41.1001, "bbox.lat_max": 41.2086,
          "filter.min_len": 20, "filter.max_len": 200}
_BEIJING = {"bbox.lon_min": 116.25, "bbox.lon_max": 116.5, "bbox.lat_min": 39.8, "bbox.lat_max": 40.1}

PRESETS: Dict[str, Dict[str, Any]] = {
    "porto": _PORTO,
    "geolife": {**_BEIJING, "filter.min_len": 20, "filter.max_len": 300},
    "tdrive": {**_BEIJING, "filter.min_len": 20, "filter.max_len": 200},
}

TAU_MODES = ("mean_distance", "fixed")


def get_config_path(explicit: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Resolve the config file: explicit path, then $TRAJSIM_CONFIG, then ~/.trajsim/config.yml if present."""
    if explicit:
        return Path(explicit)
    env = os.getenv(ENV_CONFIG)
    if env:
        return Path(env)
    home = Path.home() / ".trajsim" / "config.yml"
    return home if home.exists() else None


def load_env() -> None:
    """Pick up TRAJSIM_* variables from a ``.env`` file without overriding the environment."""
    load_dotenv(override=False)


def _flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def parse_flat(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse ``key = value`` lines; values are typed by the YAML scalar rules."""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        values[key] = parse_value(value)
    return values


def parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text) if text else None
    except yaml.YAMLError:
        return text


def load_config(path: Optional[Union[str, Path]]) -> Dict[str, Any]:
    """Read a config file into flat dotted keys; ``None`` means no file."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in YAML_SUFFIXES:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})") from None
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        return _flatten(data)
    return parse_flat(text, str(path))


def _coerce(key: str, value: Any) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"Unknown config key {key!r}")
    if value is None:
        if DEFAULTS[key] is None:
            return None
        raise ConfigError(f"{key} needs a value")
    expected = _TYPES.get(key, type(DEFAULTS[key]))
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    return str(value)


@dataclass
class RunConfig:
    """Effective settings as flat dotted keys, plus where they came from."""

    values: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))
    path: Optional[Path] = None

    @classmethod
    def build(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        env: Optional[Mapping[str, str]] = None,
    ) -> "RunConfig":
        """Layer defaults < preset < file < environment < ``overrides``, then validate."""
        env = os.environ if env is None else env
        file_values = {k: _coerce(k, v) for k, v in load_config(path).items()}
        layered: Dict[str, Any] = dict(file_values)
        if env.get(ENV_THREADS):
            layered["threads"] = _coerce("threads", parse_value(env[ENV_THREADS]))
        layered.update({k: _coerce(k, v) for k, v in (overrides or {}).items()})

        values = dict(DEFAULTS)
        preset = layered.get("dataset.preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"dataset.preset must be one of {tuple(PRESETS)}, got {preset!r}")
            values.update(PRESETS[preset])
        values.update(layered)
        config = cls(values, Path(path) if path else None)
        config.validate()
        return config

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def items(self) -> Iterable[Tuple[str, Any]]:
        return self.values.items()

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def threads(self) -> int:
        return self.values["threads"] or (os.cpu_count() or 1)

    @property
    def planar(self) -> bool:
        return self.values["distance.planar"]

    def bbox(self) -> BoundingBox:
        v = self.values
        return BoundingBox(v["bbox.lon_min"], v["bbox.lon_max"], v["bbox.lat_min"], v["bbox.lat_max"])

    def grid(self) -> GridSpec:
        return make_grid(self.bbox(), self.values["grid.cell_size"])

    def sam_config(self):
        from trajsim.model.sam import SamConfig

        return SamConfig(**{key.split(".", 1)[1]: self.values[key] for key in self.values if key.startswith("model.")})

    def schedule(self):
        from trajsim.model.bridge import BridgeSchedule

        return BridgeSchedule(self.values["ddbm.beta_min"], self.values["ddbm.beta_max"])

    def loss_weights(self):
        from trajsim.model.losses import LossWeights

        return LossWeights(self.values["loss.gamma1"], self.values["loss.gamma2"])

    def pretrain_settings(self):
        from trajsim.model.training import PretrainSettings

        v = self.values
        return PretrainSettings(
            epochs=v["pretrain.epochs"], patience=v["pretrain.patience"],
            batch_size=v["train.batch_size"], lr=v["train.lr"],
            resample_len=v["ddbm.resample_len"], t_min=v["ddbm.t_min"], t_max=v["ddbm.t_max"],
            seed=v["seed"],
        )

    def finetune_settings(self):
        from trajsim.model.training import FinetuneSettings

        v = self.values
        return FinetuneSettings(
            epochs=v["finetune.epochs"], patience=v["finetune.patience"],
            batch_size=v["train.batch_size"], lr=v["train.lr"],
            weights=self.loss_weights(), seed=v["seed"],
        )

    def validate(self) -> "RunConfig":
        """Check every setting before any work starts; raises ConfigError."""
        v = self.values
        self.bbox()
        checks = [
            (v["grid.cell_size"] > 0, "grid.cell_size must be positive"),
            (2 <= v["filter.min_len"] <= v["filter.max_len"], "need 2 <= filter.min_len <= filter.max_len"),
            (0 < v["ddbm.beta_min"] <= v["ddbm.beta_max"], "need 0 < ddbm.beta_min <= ddbm.beta_max"),
            (0 <= v["ddbm.t_min"] < v["ddbm.t_max"] <= 1, "need 0 <= ddbm.t_min < ddbm.t_max <= 1"),
            (v["ddbm.resample_len"] >= 2, "ddbm.resample_len must be >= 2"),
            (v["loss.gamma1"] >= 0 and v["loss.gamma2"] >= 0, "loss.gamma1 and loss.gamma2 must be >= 0"),
            (v["loss.tau_mode"] in TAU_MODES, f"loss.tau_mode must be one of {TAU_MODES}"),
            (v["loss.tau_value"] > 0, "loss.tau_value must be positive"),
            (v["train.batch_size"] >= 3, "train.batch_size must be >= 3"),
            (v["train.lr"] > 0, "train.lr must be positive"),
            (v["pretrain.epochs"] >= 1 and v["finetune.epochs"] >= 1, "epoch counts must be >= 1"),
            (v["pretrain.patience"] >= 1 and v["finetune.patience"] >= 1, "patience values must be >= 1"),
            (v["threads"] >= 0, "threads must be >= 0"),
            (v["seed"] >= 0 and v["split.seed"] >= 0, "seeds must be non-negative"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        self.sam_config().validate()
        return self

    def to_nested(self) -> Dict[str, Any]:
        """Nested mapping for YAML dumps."""
        nested: Dict[str, Any] = {}
        for key, value in self.values.items():
            node = nested
            *parents, leaf = key.split(".")
            for part in parents:
                node = node.setdefault(part, {})
            node[leaf] = value
        return nested


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    """``KEY=VALUE`` strings from ``--set`` into typed values."""
    out: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        out[key] = parse_value(value)
    return out
