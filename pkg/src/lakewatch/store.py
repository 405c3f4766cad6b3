"""On-disk artifact store: published results, per-lake series, download cache.

Layout:
    artifacts/{lake}/latest.json
    artifacts/{lake}/{granule_id}/overlay.png
    artifacts/{lake}/{granule_id}/mask.tif
    artifacts/{lake}/{granule_id}/prob.tif        (optional)
    artifacts/{lake}/{granule_id}/normalized.tif  (optional)
    series/{lake}.csv
    cache/{sha256}{suffix}

Publication is an idempotent overwrite keyed by granule_id; the latest
pointer is swapped atomically and only ever moves forward in time.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .raster import RasterGrid, save_raster
from .segmentation import BinaryMask, ProbabilityMap
from .timeseries import AreaObservation, AreaSeries, load_series, parse_utc, save_series

LATEST_NAME = "latest.json"
OVERLAY_NAME = "overlay.png"
MASK_NAME = "mask.tif"
PROB_NAME = "prob.tif"
NORMALIZED_NAME = "normalized.tif"


def _write_atomic(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def tree_digest(root: str | Path) -> str:
    """SHA-256 over every file under root, keyed by relative path.

    Stable across runs for identical trees; used to prove read paths
    leave the store untouched.
    """
    root = Path(root)
    digest = hashlib.sha256()
    if root.exists():
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            digest.update(str(path.relative_to(root)).encode())
            digest.update(b"\x00")
            digest.update(path.read_bytes())
    return digest.hexdigest()


class ArtifactStore:
    def __init__(self, artifacts_dir: str | Path, series_dir: str | Path, cache_dir: str | Path):
        self.artifacts_dir = Path(artifacts_dir)
        self.series_dir = Path(series_dir)
        self.cache_dir = Path(cache_dir)

    # -- write side (single ingestion writer) --

    def cache_put(self, payload: bytes, suffix: str = ".tif") -> Path:
        """Store a download under its content digest; returns the path."""
        name = hashlib.sha256(payload).hexdigest() + suffix
        path = self.cache_dir / name
        if not path.exists():
            _write_atomic(path, payload)
        return path

    def publish(
        self,
        observation: AreaObservation,
        overlay_png: bytes,
        mask: BinaryMask,
        probs: ProbabilityMap | None = None,
        normalized: RasterGrid | None = None,
    ) -> dict:
        """Write one granule's artifacts, upsert the series, swap the pointer.

        Re-publishing the same granule overwrites in place; the latest
        pointer only changes when the new acquisition is at least as recent.
        """
        lake = observation.lake
        granule_id = observation.source_granule
        gdir = self.artifacts_dir / lake / granule_id
        gdir.mkdir(parents=True, exist_ok=True)
        (gdir / OVERLAY_NAME).write_bytes(overlay_png)
        save_raster(mask.to_grid(), gdir / MASK_NAME)
        if probs is not None:
            save_raster(probs.to_grid(), gdir / PROB_NAME)
        if normalized is not None:
            save_raster(normalized, gdir / NORMALIZED_NAME)

        series = self.load_series(lake).upsert(observation)
        save_series(series, self.series_path(lake))

        pointer = {
            "lake": lake,
            "granule_id": granule_id,
            "acquired_at": observation.acquired_at.isoformat(),
            "area_m2": observation.area_m2,
            "pixel_count": observation.pixel_count,
            "pixel_size_m": observation.pixel_size_m,
            "overlay": str(gdir / OVERLAY_NAME),
            "mask": str(gdir / MASK_NAME),
            "series": str(self.series_path(lake)),
        }
        current = self.latest(lake)
        if current is None or observation.acquired_at >= parse_utc(current["acquired_at"]):
            _write_atomic(
                self.artifacts_dir / lake / LATEST_NAME,
                json.dumps(pointer, indent=2).encode() + b"\n",
            )
            return pointer
        return current

    # -- read side (API and CLI) --

    def latest(self, lake: str) -> dict | None:
        path = self.artifacts_dir / lake / LATEST_NAME
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def series_path(self, lake: str) -> Path:
        return self.series_dir / f"{lake}.csv"

    def load_series(self, lake: str) -> AreaSeries:
        return load_series(lake, self.series_path(lake))

    def published_lakes(self) -> list[str]:
        if not self.artifacts_dir.exists():
            return []
        return sorted(
            p.name for p in self.artifacts_dir.iterdir() if (p / LATEST_NAME).exists()
        )
