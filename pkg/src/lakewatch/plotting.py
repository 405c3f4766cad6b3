"""Rendering: mask-contour overlays and area-series figures."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure
from PIL import Image
from scipy import ndimage

from .errors import ShapeMismatchError
from .raster import SCALE_UINT8, RasterGrid
from .segmentation import BinaryMask
from .timeseries import AreaSeries, TrendReport, fractional_years

CONTOUR_RGB = (255, 0, 0)
FIGURE_DPI = 150


def mask_contour(mask: BinaryMask) -> np.ndarray:
    """Boolean map of water pixels on the water/background boundary.

    One pixel wide, 8-connected: a water pixel is on the contour when any
    of its eight neighbours (or the image edge) is not water.
    """
    water = (mask.classes == 1) & mask.validity
    # border_value=0 treats off-image as background, so edge water is contour
    interior = ndimage.binary_erosion(water, structure=np.ones((3, 3), bool), border_value=0)
    return water & ~interior


def render_overlay(base: RasterGrid, mask: BinaryMask) -> bytes:
    """PNG bytes: grayscale 8-bit base with a red 1-pixel mask contour.

    Invalid base pixels render black.
    """
    if base.scale != SCALE_UINT8:
        raise ShapeMismatchError(f"overlay base must be uint8 scale, got {base.scale}")
    if base.data.shape != mask.classes.shape:
        raise ShapeMismatchError(
            f"overlay shape mismatch: base {base.data.shape}, mask {mask.classes.shape}"
        )
    gray = np.where(base.validity, base.data, 0).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1)
    rgb[mask_contour(mask)] = CONTOUR_RGB
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_overlay(base: RasterGrid, mask: BinaryMask, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render_overlay(base, mask))
    return path


def render_series_plot(
    series: AreaSeries,
    path: str | Path,
    trend: TrendReport | None = None,
) -> Path:
    """Area-vs-date figure with an optional trendline, saved as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = Figure(figsize=(9, 4.5), dpi=FIGURE_DPI)
    ax = fig.subplots()
    dates = [o.acquired_at for o in series.observations]
    areas_km2 = [o.area_m2 / 1e6 for o in series.observations]
    ax.plot(dates, areas_km2, marker="o", markersize=3, linewidth=1.0, label="observed")
    if trend is not None and len(series) >= 2:
        years = fractional_years(series)
        fit = (trend.intercept_m2 + trend.slope_m2_per_year * years) / 1e6
        ax.plot(
            dates,
            fit,
            linestyle="--",
            linewidth=1.2,
            label=f"trend {trend.slope_m2_per_year:+.3g} m$^2$/yr",
        )
    ax.set_xlabel("acquisition date")
    ax.set_ylabel("surface area (km$^2$)")
    ax.set_title(series.lake)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, format="png")
    return path
