"""Single-band GeoTIFF read/write built on tifffile.

Only the subset of GeoTIFF needed by the pipeline is supported: one band,
pixel-is-area rasters in a projected CRS, square pixels, optional GDAL
nodata tag.  North-up orientation is assumed (row 0 is the northern edge).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import tifffile

from .errors import GeoreferencingError, MultiBandError, UnreadableFileError

TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GEO_ASCII_PARAMS = 34737
TAG_GDAL_NODATA = 42113

_KEY_MODEL_TYPE = 1024
_KEY_RASTER_TYPE = 1025
_KEY_CITATION = 1026
_KEY_PROJECTED_CS = 3072


def _epsg_code(crs_id: str) -> int | None:
    text = crs_id.strip().upper()
    if text.startswith("EPSG:"):
        try:
            return int(text.split(":", 1)[1])
        except ValueError:
            return None
    return None


def write_geotiff(
    path: str | Path,
    data: np.ndarray,
    pixel_size_m: float,
    origin: tuple[float, float],
    crs_id: str,
    nodata: float | None = None,
) -> None:
    """Write a 2-D array as a georeferenced single-band GeoTIFF."""
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {data.shape}")

    keys = [_KEY_MODEL_TYPE, 0, 1, 1, _KEY_RASTER_TYPE, 0, 1, 1]
    epsg = _epsg_code(crs_id)
    ascii_params = ""
    if epsg is not None and 0 < epsg < 65535:
        keys += [_KEY_PROJECTED_CS, 0, 1, epsg]
    if crs_id:
        # citation carries the CRS id verbatim so non-EPSG ids round-trip
        keys += [_KEY_CITATION, TAG_GEO_ASCII_PARAMS, len(crs_id) + 1, 0]
        ascii_params = crs_id + "|"
    directory = [1, 1, 0, len(keys) // 4] + keys

    extratags = [
        (TAG_MODEL_PIXEL_SCALE, "d", 3, (float(pixel_size_m), float(pixel_size_m), 0.0)),
        (TAG_MODEL_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, float(origin[0]), float(origin[1]), 0.0)),
        (TAG_GEO_KEY_DIRECTORY, "H", len(directory), tuple(directory)),
    ]
    if ascii_params:
        extratags.append((TAG_GEO_ASCII_PARAMS, "s", 0, ascii_params))
    if nodata is not None:
        # GDAL readers expect integer-typed rasters to carry an integer-formatted
        # nodata string, so integral values are written without a decimal point.
        value = float(nodata)
        if math.isnan(value):
            text = "nan"
        elif value.is_integer():
            text = str(int(value))
        else:
            text = repr(value)
        extratags.append((TAG_GDAL_NODATA, "s", 0, text))

    tifffile.imwrite(path, data, extratags=extratags)


def read_geotiff(
    path: str | Path,
) -> tuple[np.ndarray, float, tuple[float, float], str, float | None]:
    """Read a single-band GeoTIFF.

    Returns (data, pixel_size_m, origin, crs_id, nodata).  Raises
    UnreadableFileError / MultiBandError / GeoreferencingError with a
    diagnostic when the file cannot serve as pipeline input.
    """
    try:
        tif = tifffile.TiffFile(path)
    except (tifffile.TiffFileError, ValueError, OSError) as exc:
        raise UnreadableFileError(f"unreadable file: {path}: {exc}") from exc

    with tif:
        if len(tif.pages) != 1:
            raise MultiBandError(f"multi-band input: {path} has {len(tif.pages)} pages, expected 1")
        page = tif.pages[0]
        if page.samplesperpixel != 1:
            raise MultiBandError(
                f"multi-band input: {path} has {page.samplesperpixel} samples per pixel"
            )

        scale_tag = page.tags.get(TAG_MODEL_PIXEL_SCALE)
        tiepoint_tag = page.tags.get(TAG_MODEL_TIEPOINT)
        if scale_tag is None or tiepoint_tag is None:
            raise GeoreferencingError(
                f"missing georeferencing: {path} lacks pixel-scale/tiepoint tags"
            )
        sx, sy = float(scale_tag.value[0]), float(scale_tag.value[1])
        if sx <= 0 or not math.isclose(sx, sy, rel_tol=1e-9):
            raise GeoreferencingError(
                f"missing georeferencing: {path} pixel scale {sx}x{sy} is not square"
            )
        tp = tiepoint_tag.value
        if tuple(tp[:2]) != (0.0, 0.0):
            raise GeoreferencingError(
                f"missing georeferencing: {path} tiepoint is not anchored at pixel (0, 0)"
            )
        origin = (float(tp[3]), float(tp[4]))

        crs_id = ""
        directory = page.tags.get(TAG_GEO_KEY_DIRECTORY)
        ascii_params = page.tags.get(TAG_GEO_ASCII_PARAMS)
        if directory is not None:
            entries = list(directory.value)
            for i in range(4, len(entries) - 3, 4):
                key, location, _count, value = entries[i : i + 4]
                if key == _KEY_PROJECTED_CS and location == 0:
                    crs_id = f"EPSG:{value}"
        if not crs_id and ascii_params is not None:
            crs_id = str(ascii_params.value).split("|", 1)[0].strip()

        nodata: float | None = None
        nodata_tag = page.tags.get(TAG_GDAL_NODATA)
        if nodata_tag is not None:
            try:
                nodata = float(str(nodata_tag.value).strip())
            except ValueError:
                nodata = None

        data = page.asarray()

    if data.ndim != 2:
        raise MultiBandError(f"multi-band input: {path} decodes to shape {data.shape}")
    return data, sx, origin, crs_id, nodata
