"""Shared fixtures and grid-building helpers."""

from __future__ import annotations

import datetime as dt

import numpy as np
import pytest

from lakewatch.provider import GranuleRecord
from lakewatch.raster import SCALE_LINEAR, LakeAOI, RasterGrid

DEFAULT_ORIGIN = (500000.0, 3100000.0)
DEFAULT_CRS = "EPSG:32645"
EPOCH = dt.datetime(2023, 6, 1, tzinfo=dt.timezone.utc)


def make_grid(
    data,
    valid=None,
    pixel_size_m: float = 20.0,
    origin=DEFAULT_ORIGIN,
    crs_id: str = DEFAULT_CRS,
    nodata=None,
    scale: str = SCALE_LINEAR,
) -> RasterGrid:
    data = np.asarray(data)
    if valid is None:
        valid = np.ones(data.shape, dtype=bool)
    return RasterGrid(
        data=data,
        validity=np.asarray(valid, dtype=bool),
        pixel_size_m=pixel_size_m,
        origin=origin,
        crs_id=crs_id,
        nodata_value=nodata,
        scale=scale,
    )


def square_aoi(
    center_x: float, center_y: float, half_m: float, name: str = "testlake"
) -> LakeAOI:
    """Axis-aligned square AOI in the same planar space as the test grids."""
    x0, x1 = center_x - half_m, center_x + half_m
    y0, y1 = center_y - half_m, center_y + half_m
    wkt = f"POLYGON (({x0} {y0}, {x1} {y0}, {x1} {y1}, {x0} {y1}, {x0} {y0}))"
    return LakeAOI(
        name=name,
        polygon_wkt=wkt,
        center_lat=center_y,
        center_lon=center_x,
        altitude_m=4500.0,
    )


def square_wkt(center_x: float, center_y: float, half_m: float) -> str:
    x0, x1 = center_x - half_m, center_x + half_m
    y0, y1 = center_y - half_m, center_y + half_m
    return f"POLYGON (({x0} {y0}, {x1} {y0}, {x1} {y1}, {x0} {y1}, {x0} {y0}))"


def make_granule(
    granule_id: str,
    days: float = 0.0,
    center=DEFAULT_ORIGIN,
    pixel_size_m: float = 20.0,
    url: str | None = None,
) -> GranuleRecord:
    return GranuleRecord(
        granule_id=granule_id,
        acquired_at=EPOCH + dt.timedelta(days=days),
        footprint_wkt=square_wkt(center[0], center[1], 20000.0),
        download_url=url or f"http://invalid.example/{granule_id}",
        pixel_size_m=pixel_size_m,
    )


def build_granule_payload(
    dirpath,
    rng,
    pixel_size_m: float = 20.0,
    shape=(200, 200),
    origin=DEFAULT_ORIGIN,
    water=(slice(60, 140), slice(60, 140)),
    name: str = "granule.tif",
) -> bytes:
    """Synthetic SAR granule: bright speckled terrain, dark lake blob.

    The default blob fills roughly half of the AOI crop used by the
    ingestion tests.  The classical backend thresholds at the histogram
    mass midpoint after equalization, so a lake-dominated crop is the
    regime where it lands near the water edge.
    """
    from lakewatch.geotiff import write_geotiff

    data = rng.gamma(4.0, 180.0 / 4.0, shape)
    data[water] = rng.gamma(4.0, 20.0 / 4.0, data[water].shape)
    path = dirpath / name
    write_geotiff(
        path,
        data.astype(np.float32),
        pixel_size_m=pixel_size_m,
        origin=origin,
        crs_id=DEFAULT_CRS,
    )
    return path.read_bytes()


@pytest.fixture
def rng():
    return np.random.default_rng(20260821)
