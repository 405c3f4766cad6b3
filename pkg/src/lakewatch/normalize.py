"""Validity-aware histogram equalization to 8-bit output.

The recipe: build a 256-bin histogram of the valid pixels, take its CDF,
normalize by the smallest nonzero CDF value so the darkest valid pixel
lands at the bottom of the range, and map every valid pixel through the
resulting lookup table with linear interpolation between bin positions.

Output reserves intensity 0 as the nodata sentinel; the lookup table is
floored at 1 so valid data can never collide with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRasterError, RasterError
from .raster import SCALE_UINT8, UINT8_NODATA, RasterGrid

#: number of histogram bins and of output intensity levels
LEVELS = 256

#: lowest output level available to valid pixels (0 is the nodata sentinel)
LUT_FLOOR = 1


@dataclass(frozen=True)
class EqualizationMap:
    """Piecewise-linear intensity map: 257 bin edges, 256 output levels."""

    bin_edges: np.ndarray
    lut: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        lut = np.asarray(self.lut, dtype=np.float64)
        if edges.shape != (LEVELS + 1,):
            raise RasterError(f"expected {LEVELS + 1} bin edges, got {edges.shape}")
        if lut.shape != (LEVELS,):
            raise RasterError(f"expected {LEVELS} lut entries, got {lut.shape}")
        if not (np.diff(edges) > 0).all():
            raise RasterError("bin edges must be strictly ascending")
        if not (np.diff(lut) >= 0).all():
            raise RasterError("lut must be non-decreasing")
        if lut.min() < 0 or lut.max() > 255:
            raise RasterError("lut values must lie in [0, 255]")
        edges.setflags(write=False)
        lut.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "lut", lut)


def build_equalization(grid: RasterGrid) -> EqualizationMap:
    """Histogram-equalization map over the grid's valid pixels.

    A constant raster yields a degenerate map sending its single value
    (and everything else) to 255.
    """
    values = grid.valid_values().astype(np.float64)
    if values.size == 0:
        raise EmptyRasterError("empty raster: no valid pixels to equalize")
    lo = float(values.min())
    hi = float(values.max())
    if lo == hi:
        edges = np.linspace(lo - 0.5, lo + 0.5, LEVELS + 1)
        return EqualizationMap(edges, np.full(LEVELS, 255.0), degenerate=True)

    counts, edges = np.histogram(values, bins=LEVELS, range=(lo, hi))
    cdf = np.cumsum(counts) / values.size
    cdf_min = float(cdf[counts.nonzero()[0][0]])
    lut = np.rint(255.0 * (cdf - cdf_min) / (1.0 - cdf_min))
    lut = np.maximum(lut, LUT_FLOOR)
    return EqualizationMap(edges, lut)


def apply_equalization(grid: RasterGrid, emap: EqualizationMap) -> RasterGrid:
    """Map a grid through an EqualizationMap to an 8-bit grid.

    Valid pixels interpolate linearly between lut entries anchored at the
    bin left edges; out-of-range intensities clamp to the end levels.
    Invalid pixels become the 8-bit nodata sentinel and stay invalid.
    """
    data = grid.data.astype(np.float64)
    mapped = np.interp(data, emap.bin_edges[:-1], emap.lut)
    out = np.floor(mapped).astype(np.uint8)
    out[~grid.validity] = UINT8_NODATA
    return RasterGrid(
        data=out,
        validity=grid.validity.copy(),
        pixel_size_m=grid.pixel_size_m,
        origin=grid.origin,
        crs_id=grid.crs_id,
        nodata_value=float(UINT8_NODATA),
        scale=SCALE_UINT8,
    )


def equalize(grid: RasterGrid) -> tuple[RasterGrid, EqualizationMap]:
    """Build and apply the equalization map in one step."""
    emap = build_equalization(grid)
    return apply_equalization(grid, emap), emap
