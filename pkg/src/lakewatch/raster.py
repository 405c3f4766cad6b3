"""Georeferenced raster data model: loading, AOI cropping, lattice padding.

A RasterGrid is an immutable value: its arrays are marked read-only at
construction, so grids can be shared freely between worker threads.  All
operations return new grids and never mutate their inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely.wkt
from shapely.geometry import box, shape
from shapely.geometry.base import BaseGeometry

from .errors import AoiOutsideRasterError, RasterError
from .geotiff import read_geotiff, write_geotiff

SCALE_LINEAR = "linear"
SCALE_DB = "db"
SCALE_UINT8 = "uint8"

#: 8-bit nodata sentinel used by normalized products.
UINT8_NODATA = 0


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Single-band georeferenced intensity raster with a validity mask.

    data is a (height, width) array in row-major order; origin is the
    projected (easting, northing) of the top-left corner; pixel_size_m is
    the square pixel edge; scale tags the radiometric interpretation.
    """

    data: np.ndarray
    validity: np.ndarray
    pixel_size_m: float
    origin: tuple[float, float]
    crs_id: str
    nodata_value: float | None = None
    scale: str = SCALE_LINEAR

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        validity = np.asarray(self.validity, dtype=bool)
        if data.ndim != 2:
            raise RasterError(f"grid data must be 2-D, got shape {data.shape}")
        if data.shape != validity.shape:
            raise RasterError(
                f"validity shape {validity.shape} does not match data shape {data.shape}"
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise RasterError("grid must have positive width and height")
        if not self.pixel_size_m > 0:
            raise RasterError(f"pixel size must be positive, got {self.pixel_size_m}")
        if self.nodata_value is not None:
            if math.isnan(self.nodata_value):
                colliding = validity & np.isnan(data)
            else:
                colliding = validity & (data == self.nodata_value)
            if colliding.any():
                raise RasterError(
                    f"{int(colliding.sum())} pixels marked valid but equal to "
                    f"nodata value {self.nodata_value}"
                )
        data.setflags(write=False)
        validity.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "validity", validity)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def footprint(self) -> tuple[float, float, float, float]:
        """(minx, miny, maxx, maxy) of the grid extent in its CRS."""
        x0, y0 = self.origin
        return (
            x0,
            y0 - self.height * self.pixel_size_m,
            x0 + self.width * self.pixel_size_m,
            y0,
        )

    def valid_values(self) -> np.ndarray:
        return self.data[self.validity]


@dataclass(frozen=True)
class LakeAOI:
    """Named lake area-of-interest defined by a WKT polygon."""

    name: str
    polygon_wkt: str
    center_lat: float
    center_lon: float
    altitude_m: float = 0.0
    polygon: BaseGeometry = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        try:
            geom = shapely.wkt.loads(self.polygon_wkt)
        except Exception as exc:
            raise RasterError(f"AOI {self.name!r}: invalid WKT: {exc}") from exc
        if geom.geom_type != "Polygon":
            raise RasterError(f"AOI {self.name!r}: expected a Polygon, got {geom.geom_type}")
        if not geom.is_valid:
            raise RasterError(f"AOI {self.name!r}: polygon is not simple/valid")
        if len(geom.exterior.coords) < 4:  # closed ring: 3 vertices + repeat
            raise RasterError(f"AOI {self.name!r}: polygon needs at least 3 vertices")
        minx, miny, maxx, maxy = geom.bounds
        if not (minx <= self.center_lon <= maxx and miny <= self.center_lat <= maxy):
            raise RasterError(
                f"AOI {self.name!r}: center ({self.center_lon}, {self.center_lat}) "
                "lies outside the polygon bounding box"
            )
        object.__setattr__(self, "polygon", geom)

    @classmethod
    def from_geojson(cls, source: str | Path | dict, name: str | None = None) -> "LakeAOI":
        """Build an AOI from a GeoJSON geometry/Feature/FeatureCollection."""
        if isinstance(source, (str, Path)):
            with open(source, encoding="utf-8") as fh:
                payload = json.load(fh)
        else:
            payload = source
        properties: dict = {}
        if payload.get("type") == "FeatureCollection":
            features = payload.get("features") or []
            if not features:
                raise RasterError("GeoJSON FeatureCollection contains no features")
            payload = features[0]
        if payload.get("type") == "Feature":
            properties = payload.get("properties") or {}
            payload = payload["geometry"]
        geom = shape(payload)
        centroid = geom.centroid
        return cls(
            name=name or str(properties.get("name", "aoi")),
            polygon_wkt=geom.wkt,
            center_lat=float(properties.get("center_lat", centroid.y)),
            center_lon=float(properties.get("center_lon", centroid.x)),
            altitude_m=float(properties.get("altitude_m", 0.0)),
        )


def load_raster(path: str | Path, scale: str | None = None) -> RasterGrid:
    """Load a single-band GeoTIFF into a RasterGrid.

    The validity mask is derived from the GDAL nodata tag (all pixels valid
    when the tag is absent).  scale defaults to "uint8" for 8-bit files and
    "linear" otherwise.
    """
    data, pixel_size, origin, crs_id, nodata = read_geotiff(path)
    if nodata is None:
        validity = np.ones(data.shape, dtype=bool)
    elif math.isnan(nodata):
        validity = ~np.isnan(data)
    else:
        validity = data != nodata
    if scale is None:
        scale = SCALE_UINT8 if data.dtype == np.uint8 else SCALE_LINEAR
    return RasterGrid(
        data=data,
        validity=validity,
        pixel_size_m=pixel_size,
        origin=origin,
        crs_id=crs_id,
        nodata_value=nodata,
        scale=scale,
    )


def save_raster(grid: RasterGrid, path: str | Path) -> None:
    """Write a RasterGrid as a single-band GeoTIFF with its nodata tag."""
    write_geotiff(
        path,
        grid.data,
        pixel_size_m=grid.pixel_size_m,
        origin=grid.origin,
        crs_id=grid.crs_id,
        nodata=grid.nodata_value,
    )


def crop_to_aoi(grid: RasterGrid, aoi: LakeAOI, buffer_m: float = 500.0) -> RasterGrid:
    """Crop to the minimal pixel-aligned sub-grid covering the buffered AOI.

    The buffered polygon's bounding box is expanded outward to whole-pixel
    boundaries (floor the min corner, ceil the max) so no AOI pixel is ever
    lost; the polygon itself is retained only by the caller as metadata.
    """
    polygon = aoi.polygon.buffer(buffer_m) if buffer_m > 0 else aoi.polygon
    if not polygon.intersects(box(*grid.footprint())):
        raise AoiOutsideRasterError(
            f"AOI outside raster footprint: {aoi.name!r} does not intersect the grid"
        )
    minx, miny, maxx, maxy = polygon.bounds
    x0, y0 = grid.origin
    px = grid.pixel_size_m

    col0 = math.floor((minx - x0) / px)
    col1 = math.ceil((maxx - x0) / px)
    row0 = math.floor((y0 - maxy) / px)
    row1 = math.ceil((y0 - miny) / px)

    col0 = max(col0, 0)
    row0 = max(row0, 0)
    col1 = min(col1, grid.width)
    row1 = min(row1, grid.height)
    if col1 <= col0 or row1 <= row0:
        raise AoiOutsideRasterError(
            f"AOI outside raster footprint: {aoi.name!r} covers no whole pixel"
        )

    return replace(
        grid,
        data=grid.data[row0:row1, col0:col1].copy(),
        validity=grid.validity[row0:row1, col0:col1].copy(),
        origin=(x0 + col0 * px, y0 - row0 * px),
    )


def pad_to_lattice(grid: RasterGrid, lattice: int = 256) -> RasterGrid:
    """Zero-pad right/bottom so both dims are the smallest lattice multiples.

    Original pixels occupy the top-left block bit-identically; pad pixels
    carry data 0 and validity False.  The top-left georeferencing is
    unchanged.
    """
    if lattice < 1:
        raise RasterError(f"lattice must be >= 1, got {lattice}")
    new_h = math.ceil(grid.height / lattice) * lattice
    new_w = math.ceil(grid.width / lattice) * lattice
    if (new_h, new_w) == (grid.height, grid.width):
        return grid
    data = np.zeros((new_h, new_w), dtype=grid.data.dtype)
    validity = np.zeros((new_h, new_w), dtype=bool)
    data[: grid.height, : grid.width] = grid.data
    validity[: grid.height, : grid.width] = grid.validity
    return replace(grid, data=data, validity=validity)
