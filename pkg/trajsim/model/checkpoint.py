"""Encoder checkpoints: TSPS parameters plus a ``.meta.yml`` sidecar."""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import yaml

from trajsim.errors import ConfigError, DataError
from trajsim.model.sam import SamConfig, SamModel, init_params
from trajsim.nn.params import read_checkpoint
from trajsim.utils.output import atomic_write, sibling

logger = logging.getLogger(__name__)

META_SUFFIX = ".meta.yml"


def meta_path(path: Union[str, Path]) -> Path:
    return sibling(path, META_SUFFIX)


def save_model(model: SamModel, path: Union[str, Path], **meta: Any) -> None:
    """Write parameters and metadata; ``meta`` holds stage, best epoch, seed and similar."""
    model.params.save(path)
    payload = {"model": model.config.to_dict(), **meta}
    with atomic_write(meta_path(path)) as f:
        yaml.safe_dump(payload, f, sort_keys=False)


def read_meta(path: Union[str, Path]) -> Dict[str, Any]:
    sidecar = meta_path(path)
    if not sidecar.exists():
        raise DataError(f"Checkpoint metadata not found: {sidecar}")
    try:
        meta = yaml.safe_load(sidecar.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise DataError(f"{sidecar}: invalid YAML ({e})") from None
    if not isinstance(meta.get("model"), dict):
        raise DataError(f"{sidecar}: missing 'model' section")
    return meta


def load_model(path: Union[str, Path], expected: Optional[SamConfig] = None) -> Tuple[SamModel, Dict[str, Any]]:
    """Restore a model; with ``expected`` set, the stored config must match it exactly."""
    meta = read_meta(path)
    config = SamConfig.from_dict(meta["model"])
    if expected is not None and config != expected:
        stored, wanted = config.to_dict(), expected.to_dict()
        diffs = ", ".join(f"model.{k}: checkpoint {stored[k]!r} vs run {wanted[k]!r}"
                          for k in stored if stored[k] != wanted[k])
        raise ConfigError(f"Checkpoint {path} was trained with a different model config ({diffs})")
    model = SamModel(config, params=init_params(config.validate(), np.random.default_rng(0)))
    model.params.load_state(read_checkpoint(path))
    logger.debug("Loaded %s checkpoint %s (%d values)", meta.get("stage", "?"), path, model.params.num_values())
    return model, meta

