"""Pipeline configuration: one YAML file to validated, frozen settings."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .errors import ConfigError, RasterError
from .provider import ORBIT_DIRECTIONS, PRODUCT_KINDS
from .raster import LakeAOI
from .speckle import LeeParams
from .timeseries import parse_utc

BACKENDS = ("otsu", "model")
DEFAULT_INTERVAL_S = 3600.0
DEFAULT_SEARCH_EPOCH = datetime(2014, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class LakeTarget:
    """One monitored lake plus its product selection."""

    aoi: LakeAOI
    product_kind: str = "GRD_RTC_20m"
    orbit_direction: str = "any"

    def __post_init__(self):
        if self.product_kind not in PRODUCT_KINDS:
            raise ConfigError(
                f"lake {self.aoi.name}: unknown product kind {self.product_kind!r}"
            )
        if self.orbit_direction not in ORBIT_DIRECTIONS:
            raise ConfigError(
                f"lake {self.aoi.name}: unknown orbit direction {self.orbit_direction!r}"
            )

    @property
    def name(self) -> str:
        return self.aoi.name


@dataclass(frozen=True)
class PipelineConfig:
    lakes: tuple[LakeTarget, ...]
    cache_dir: Path
    artifacts_dir: Path
    series_dir: Path
    jobs_dir: Path
    search_url: str
    interval_s: float = DEFAULT_INTERVAL_S
    search_epoch: datetime = DEFAULT_SEARCH_EPOCH
    backend: str = "otsu"
    model_path: Path | None = None
    threshold: float = 0.5
    crop_buffer_m: float = 500.0
    lee: LeeParams = field(default_factory=LeeParams)
    host: str = "127.0.0.1"
    port: int = 8000

    def __post_init__(self):
        if not self.lakes:
            raise ConfigError("config needs at least one lake")
        names = [lake.name for lake in self.lakes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate lake names: {sorted(names)}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown segmentation backend: {self.backend!r}")
        if self.backend == "model":
            if self.model_path is None:
                raise ConfigError("backend 'model' needs a model path")
            if not Path(self.model_path).exists():
                raise ConfigError(f"model file does not exist: {self.model_path}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.interval_s <= 0:
            raise ConfigError(f"interval must be positive, got {self.interval_s}")
        if self.crop_buffer_m < 0:
            raise ConfigError(f"crop buffer must be >= 0, got {self.crop_buffer_m}")
        if not 0 < self.port < 65536:
            raise ConfigError(f"port must be in 1..65535, got {self.port}")

    def lake(self, name: str) -> LakeTarget:
        for target in self.lakes:
            if target.name == name:
                return target
        raise ConfigError(f"unknown lake: {name}")

    def lake_names(self) -> list[str]:
        return [target.name for target in self.lakes]

    @property
    def jobs_path(self) -> Path:
        return self.jobs_dir / "jobs.jsonl"

    @property
    def marks_path(self) -> Path:
        return self.jobs_dir / "marks.json"

    @property
    def status_path(self) -> Path:
        return self.jobs_dir / "status.json"


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _lake_target(row: dict, index: int) -> LakeTarget:
    context = f"lakes[{index}]"
    if not isinstance(row, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(row).__name__}")
    aoi = LakeAOI(
        name=_require(row, "name", context),
        polygon_wkt=_require(row, "wkt", context),
        center_lat=float(_require(row, "center_lat", context)),
        center_lon=float(_require(row, "center_lon", context)),
        altitude_m=float(row.get("altitude_m", 0.0)),
    )
    return LakeTarget(
        aoi=aoi,
        product_kind=row.get("product_kind", "GRD_RTC_20m"),
        orbit_direction=row.get("orbit_direction", "any"),
    )


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a YAML config file.

    Relative paths are resolved against the config file's directory.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")

    base = path.parent

    def resolve(value: str) -> Path:
        p = Path(value).expanduser()
        return p if p.is_absolute() else base / p

    paths = _require(raw, "paths", "config")
    if not isinstance(paths, dict):
        raise ConfigError("config: paths must be a mapping")
    seg = raw.get("segmentation", {}) or {}
    speckle = raw.get("speckle", {}) or {}
    server = raw.get("server", {}) or {}
    lakes_raw = _require(raw, "lakes", "config")
    if not isinstance(lakes_raw, list):
        raise ConfigError("config: lakes must be a list")
    model_value = seg.get("model")

    try:
        lee = LeeParams(
            window=int(speckle.get("window", 7)),
            damping=float(speckle.get("damping", 1.0)),
            looks=float(speckle.get("looks", 1.0)),
        )
        epoch_raw = raw.get("search_epoch")
        return PipelineConfig(
            lakes=tuple(_lake_target(row, i) for i, row in enumerate(lakes_raw)),
            cache_dir=resolve(_require(paths, "cache", "config.paths")),
            artifacts_dir=resolve(_require(paths, "artifacts", "config.paths")),
            series_dir=resolve(_require(paths, "series", "config.paths")),
            jobs_dir=resolve(_require(paths, "jobs", "config.paths")),
            search_url=str(_require(raw, "search_url", "config")),
            interval_s=float(raw.get("interval_s", DEFAULT_INTERVAL_S)),
            search_epoch=parse_utc(str(epoch_raw)) if epoch_raw else DEFAULT_SEARCH_EPOCH,
            backend=seg.get("backend", "otsu"),
            model_path=resolve(model_value) if model_value else None,
            threshold=float(seg.get("threshold", 0.5)),
            crop_buffer_m=float(raw.get("crop_buffer_m", 500.0)),
            lee=lee,
            host=str(server.get("host", "127.0.0.1")),
            port=int(server.get("port", 8000)),
        )
    except (TypeError, ValueError, RasterError) as exc:
        raise ConfigError(f"config value error: {exc}") from exc
