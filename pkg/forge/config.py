from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, FilePath, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .models import LandUse


class Settings(BaseSettings):
    FORGE_LOG_LEVEL: str = "INFO"
    # artifact root served by the API
    FORGE_OUTPUT_DIR: Path = Path("output")
    MAX_PAGE_SIZE: int = 500

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


settings = Settings()


# ---------- pipeline configuration ----------

class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    width_px: int = 64
    height_px: int = 64
    meters_per_px: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def _square_power_of_two(self) -> "GridSpec":
        if self.width_px != self.height_px:
            raise ValueError("grid must be square (width_px == height_px)")
        if self.width_px < 16 or self.width_px & (self.width_px - 1):
            raise ValueError("width_px must be a power of two >= 16")
        return self

    @property
    def side(self) -> int:
        return self.width_px

    @property
    def window_m(self) -> float:
        return self.width_px * self.meters_per_px


class VqConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    latent_grid: int = Field(16, ge=1)
    embed_dim: int = Field(8, ge=1)
    codebook_size: int = Field(64, ge=2)
    hidden_channels: int = Field(16, ge=1)
    beta: float = Field(0.25, gt=0)
    learning_rate: float = Field(3e-4, gt=0)
    epochs: int = Field(2000, ge=1)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    init: Literal["default", "zeros"] = "default"


class ClusterConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # fixed archetype count; when unset the elbow over [k_min, k_max] decides
    k: Optional[int] = Field(None, ge=1)
    k_min: int = Field(1, ge=1)
    k_max: int = Field(10, ge=3)
    restarts: int = Field(5, ge=1)
    max_iter: int = Field(300, ge=1)
    tol: float = Field(1e-9, ge=0)
    use_quantized: bool = True

    @model_validator(mode="after")
    def _range_wide_enough(self) -> "ClusterConfig":
        if self.k_max < self.k_min + 2:
            raise ValueError("k_max must be at least k_min + 2")
        return self


class PathsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    inventory: Optional[FilePath] = None
    eui_baseline: Optional[FilePath] = None
    eui_sampled: Optional[FilePath] = None
    eui_averaged: Optional[FilePath] = None
    actuals: Optional[FilePath] = None
    # per-zone kWh totals that bypass aggregation (published-comparison input)
    estimates: Optional[FilePath] = None
    output_dir: Path = Path("output")


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    paths: PathsConfig = Field(default_factory=PathsConfig)
    land_use_filter: Optional[LandUse] = LandUse.RESIDENTIAL
    storey_height_m: float = Field(3.0, gt=0)
    zone_name: str = "district"
    grid: GridSpec = Field(default_factory=GridSpec)
    height_bin_m: Optional[float] = Field(None, gt=0)
    vq: VqConfig = Field(default_factory=VqConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    test_fraction: float = Field(0.1, gt=0, lt=1)
    seed: int = 0
    sheet_samples: int = Field(8, ge=1)

    @model_validator(mode="after")
    def _latent_fits_grid(self) -> "PipelineConfig":
        side, g = self.grid.side, self.vq.latent_grid
        ratio = side // g
        if side % g or ratio < 2 or ratio & (ratio - 1):
            raise ValueError(
                f"vq.latent_grid={g} must divide grid side {side} by a power of two >= 2"
            )
        return self


_PATH_KEYS = ("inventory", "eui_baseline", "eui_sampled", "eui_averaged",
              "actuals", "estimates", "output_dir")


def _resolve_paths(raw: Dict[str, Any], base: Path) -> Dict[str, Any]:
    paths = raw.get("paths")
    if not isinstance(paths, dict):
        return raw
    resolved = dict(paths)
    for key in _PATH_KEYS:
        value = resolved.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            resolved[key] = str((base / value).resolve())
    return {**raw, "paths": resolved}


def _apply_overrides(raw: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Overrides use dotted keys, e.g. {"vq.epochs": 1, "paths.output_dir": "/tmp/x"}."""
    out = copy.deepcopy(raw)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = out
        *parents, leaf = dotted.split(".")
        for part in parents:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[leaf] = value
    return out


def _ensure_output_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory {path}: {e.strerror}")
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


def load_pipeline_config(path: Path | str, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e.strerror}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1:1: config must be a JSON object")

    raw = _resolve_paths(raw, path.parent.resolve())
    raw = _apply_overrides(raw, overrides or {})
    try:
        config = PipelineConfig.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ConfigError(f"{path}: field {loc}: {err['msg']}")

    _ensure_output_dir(config.paths.output_dir)
    return config


def config_hash(config: PipelineConfig) -> str:
    # output_dir says where artifacts go, not what they contain
    payload = config.model_dump(mode="json", exclude={"paths": {"output_dir"}})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(stage.encode("utf-8")).digest()
    return (seed ^ int.from_bytes(digest[:4], "little")) & 0x7FFFFFFF
