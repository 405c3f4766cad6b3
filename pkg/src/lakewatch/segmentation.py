"""Water segmentation: probability maps, masks, and pluggable backends.

Two backends satisfy the same contract: a self-contained classical
reference (Otsu threshold with a sigmoid soft band) and a learned model
consumed as a serialized TorchScript graph.  Open water is assumed dark:
probabilities approach 1 below the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    BackendUnavailableError,
    EmptyRasterError,
    ScaleMismatchError,
    SegmentationError,
    ShapeMismatchError,
)
from .raster import SCALE_UINT8, RasterGrid

#: sigmoid softness around the threshold, in 8-bit intensity levels
DEFAULT_SOFTNESS = 8.0

#: tile edge expected by the model backend
TILE = 256

#: nodata sentinels used when persisting maps/masks as GeoTIFF
PROB_NODATA = -1.0
MASK_NODATA = 255.0


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel water probability with validity and georeferencing."""

    probs: np.ndarray
    validity: np.ndarray
    pixel_size_m: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    crs_id: str = ""
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        validity = np.asarray(self.validity, dtype=bool)
        if probs.ndim != 2 or probs.shape != validity.shape:
            raise ShapeMismatchError(
                f"probability map shape {probs.shape} vs validity {validity.shape}"
            )
        pv = probs[validity]
        if pv.size and (pv.min() < 0.0 or pv.max() > 1.0):
            raise SegmentationError("probabilities outside [0, 1] on valid pixels")
        probs.setflags(write=False)
        validity.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "validity", validity)

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    def to_grid(self) -> RasterGrid:
        data = np.where(self.validity, self.probs, PROB_NODATA).astype(np.float32)
        return RasterGrid(
            data=data,
            validity=self.validity.copy(),
            pixel_size_m=self.pixel_size_m,
            origin=self.origin,
            crs_id=self.crs_id,
            nodata_value=PROB_NODATA,
            scale="probability",
        )


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel class map: 0 background, 1 water."""

    classes: np.ndarray
    validity: np.ndarray
    pixel_size_m: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    crs_id: str = ""

    def __post_init__(self) -> None:
        classes = np.asarray(self.classes, dtype=np.uint8)
        validity = np.asarray(self.validity, dtype=bool)
        if classes.ndim != 2 or classes.shape != validity.shape:
            raise ShapeMismatchError(
                f"mask shape {classes.shape} vs validity {validity.shape}"
            )
        if not np.isin(classes[validity], (0, 1)).all():
            raise SegmentationError("mask classes must be 0 or 1 on valid pixels")
        classes.setflags(write=False)
        validity.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "validity", validity)

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    def water_count(self) -> int:
        return int((self.classes[self.validity] == 1).sum())

    @classmethod
    def from_grid(cls, grid: RasterGrid) -> "BinaryMask":
        """Read a persisted mask: nonzero valid pixels are water."""
        classes = ((grid.data != 0) & grid.validity).astype(np.uint8)
        return cls(
            classes=classes,
            validity=grid.validity.copy(),
            pixel_size_m=grid.pixel_size_m,
            origin=grid.origin,
            crs_id=grid.crs_id,
        )

    def to_grid(self) -> RasterGrid:
        data = np.where(self.validity, self.classes, np.uint8(MASK_NODATA)).astype(np.uint8)
        return RasterGrid(
            data=data,
            validity=self.validity.copy(),
            pixel_size_m=self.pixel_size_m,
            origin=self.origin,
            crs_id=self.crs_id,
            nodata_value=MASK_NODATA,
            scale="mask",
        )


def otsu_threshold(values: np.ndarray) -> float:
    """Otsu's threshold over 8-bit values, centered in the argmax plateau.

    On well-separated bimodal data the between-class variance is flat
    across the empty valley; taking the plateau midpoint keeps the
    threshold away from either mode's tail.
    """
    counts = np.bincount(values.ravel(), minlength=256).astype(np.float64)
    total = counts.sum()
    w0 = np.cumsum(counts)  # class 0 = intensities <= k
    w1 = total - w0
    first_moment = np.cumsum(counts * np.arange(256))
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = np.where(w0 > 0, first_moment / w0, 0.0)
        mu1 = np.where(w1 > 0, (first_moment[-1] - first_moment) / w1, 0.0)
    sigma_b = w0 * w1 * (mu0 - mu1) ** 2
    plateau = np.flatnonzero(sigma_b == sigma_b.max())
    return float(plateau[0] + plateau[-1]) / 2.0


def threshold_segment(grid: RasterGrid, softness: float = DEFAULT_SOFTNESS) -> ProbabilityMap:
    """Classical reference backend: Otsu threshold with a sigmoid soft band.

    Darker-than-threshold pixels approach probability 1.  A constant image
    has no threshold; every valid pixel gets 0.5 and the map is flagged
    low-confidence.
    """
    if grid.scale != SCALE_UINT8:
        raise ScaleMismatchError(
            f"threshold_segment expects 8-bit normalized input, got scale={grid.scale!r}"
        )
    values = grid.valid_values()
    if values.size == 0:
        raise EmptyRasterError("empty raster: no valid pixels to segment")

    flags: tuple[str, ...] = ()
    if (values == values.ravel()[0]).all():
        probs = np.where(grid.validity, 0.5, 0.0)
        flags = ("low-confidence",)
    else:
        t = otsu_threshold(values)
        x = (t - grid.data.astype(np.float64)) / float(softness)
        with np.errstate(over="ignore"):
            probs = 1.0 / (1.0 + np.exp(-x))
        probs = np.where(grid.validity, probs, 0.0)
    return ProbabilityMap(
        probs=probs,
        validity=grid.validity.copy(),
        pixel_size_m=grid.pixel_size_m,
        origin=grid.origin,
        crs_id=grid.crs_id,
        flags=flags,
    )


def binarize(pm: ProbabilityMap, threshold: float = 0.5) -> BinaryMask:
    """Class 1 where p >= threshold and valid; invalid pixels are class 0."""
    if not 0.0 < threshold < 1.0:
        raise SegmentationError(f"threshold must lie in (0, 1), got {threshold}")
    classes = ((pm.probs >= threshold) & pm.validity).astype(np.uint8)
    return BinaryMask(
        classes=classes,
        validity=pm.validity.copy(),
        pixel_size_m=pm.pixel_size_m,
        origin=pm.origin,
        crs_id=pm.crs_id,
    )


def largest_component(mask: BinaryMask, connectivity: int = 8) -> BinaryMask:
    """Keep only the largest connected water component.

    Size ties go to the component whose first pixel comes earliest in
    row-major order, which is the lowest label id under raster-scan
    labeling.  An empty mask passes through.
    """
    if connectivity not in (4, 8):
        raise SegmentationError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = np.ones((3, 3), dtype=int) if connectivity == 8 else None
    labels, n = ndimage.label(mask.classes == 1, structure=structure)
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1  # argmax takes the first maximum
    return BinaryMask(
        classes=(labels == keep).astype(np.uint8),
        validity=mask.validity.copy(),
        pixel_size_m=mask.pixel_size_m,
        origin=mask.origin,
        crs_id=mask.crs_id,
    )


class SegmenterBackend:
    """Contract: segment(grid) -> ProbabilityMap of identical shape.

    Invalid input pixels must come back with p = 0 and invalid; output
    validity equals input validity.  Implementations must be safe for
    concurrent read-only use.
    """

    identifier: str = "abstract"

    def segment(self, grid: RasterGrid) -> ProbabilityMap:
        raise NotImplementedError


class OtsuBackend(SegmenterBackend):
    identifier = "otsu"

    def __init__(self, softness: float = DEFAULT_SOFTNESS):
        self.softness = softness

    def segment(self, grid: RasterGrid) -> ProbabilityMap:
        return threshold_segment(grid, softness=self.softness)


class ModelBackend(SegmenterBackend):
    """Learned backend consuming a serialized TorchScript graph.

    Input is tiled into 256-square patches (the grid must already be on
    the lattice), each inferred independently as a float (1, 1, 256, 256)
    tensor scaled to [0, 1], and the probability tiles are stitched back
    without overlap blending.
    """

    identifier = "model"

    def __init__(self, model_path: str | Path):
        self.model_path = Path(model_path)
        self._model = None

    def _load(self):
        if self._model is not None:
            return self._model
        try:
            import torch
        except ImportError as exc:
            raise BackendUnavailableError(
                "backend unavailable: torch is not installed"
            ) from exc
        if not self.model_path.exists():
            raise BackendUnavailableError(
                f"backend unavailable: model file {self.model_path} not found"
            )
        try:
            self._model = torch.jit.load(str(self.model_path), map_location="cpu")
            self._model.eval()
        except Exception as exc:
            raise BackendUnavailableError(
                f"backend unavailable: cannot load {self.model_path}: {exc}"
            ) from exc
        return self._model

    def segment(self, grid: RasterGrid) -> ProbabilityMap:
        import torch

        model = self._load()
        if grid.height % TILE or grid.width % TILE:
            raise SegmentationError(
                f"model backend needs lattice-padded input, got {grid.height}x{grid.width}"
            )
        probs = np.zeros((grid.height, grid.width), dtype=np.float64)
        data = grid.data.astype(np.float32)
        if grid.scale == SCALE_UINT8:
            data = data / 255.0
        with torch.no_grad():
            for top in range(0, grid.height, TILE):
                for left in range(0, grid.width, TILE):
                    tile = data[top : top + TILE, left : left + TILE]
                    tin = torch.from_numpy(tile).reshape(1, 1, TILE, TILE)
                    tout = model(tin)
                    out = tout.detach().cpu().numpy().squeeze()
                    if out.shape != (TILE, TILE):
                        raise SegmentationError(
                            f"model emitted shape {tuple(tout.shape)}, expected tile {TILE}x{TILE}"
                        )
                    probs[top : top + TILE, left : left + TILE] = np.clip(out, 0.0, 1.0)
        probs = np.where(grid.validity, probs, 0.0)
        return ProbabilityMap(
            probs=probs,
            validity=grid.validity.copy(),
            pixel_size_m=grid.pixel_size_m,
            origin=grid.origin,
            crs_id=grid.crs_id,
        )


def run_model_backend(grid: RasterGrid, model_path: str | Path) -> ProbabilityMap:
    """One-shot tiled inference through a TorchScript model file."""
    return ModelBackend(model_path).segment(grid)


def get_backend(name: str, model_path: str | Path | None = None) -> SegmenterBackend:
    if name == "otsu":
        return OtsuBackend()
    if name == "model":
        if model_path is None:
            raise BackendUnavailableError("backend unavailable: model backend needs a model path")
        return ModelBackend(model_path)
    raise BackendUnavailableError(f"backend unavailable: unknown backend {name!r}")
