"""Exception hierarchy for the lakewatch pipeline.

Exit-code mapping used by the CLI:
  1 -> usage/config errors, 2 -> data errors, 3 -> remote/service errors.
"""


class LakewatchError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(LakewatchError):
    """Invalid or unresolvable pipeline configuration."""


class RasterError(LakewatchError):
    """Problems reading, writing, or combining rasters."""


class UnreadableFileError(RasterError):
    """File is not a readable single-band GeoTIFF."""


class MultiBandError(RasterError):
    """GeoTIFF has more than one band/page."""


class GeoreferencingError(RasterError):
    """GeoTIFF lacks pixel-scale/tiepoint georeferencing."""


class AoiOutsideRasterError(RasterError):
    """Requested AOI does not intersect the raster footprint."""


class ScaleMismatchError(RasterError):
    """Operation expects a different intensity scale (e.g. linear vs dB)."""


class WindowError(RasterError):
    """Filter window is even, too small, or larger than the grid."""


class EmptyRasterError(RasterError):
    """Grid contains no valid pixels."""


class ShapeMismatchError(LakewatchError):
    """Two per-pixel structures do not share width/height."""


class EvaluationError(LakewatchError):
    """Loss/metric computation is undefined for the given inputs."""


class SegmentationError(LakewatchError):
    """Segmentation backend failure."""


class BackendUnavailableError(SegmentationError):
    """Requested segmentation backend cannot be loaded."""


class SeriesError(LakewatchError):
    """Area time-series cannot satisfy the request (e.g. too few points)."""


class JobStateError(LakewatchError):
    """Illegal ingest-job state transition."""


class RetryableSearchError(LakewatchError):
    """Transient search/download failure; the scheduler may retry."""


class SearchResponseError(LakewatchError):
    """Catalog endpoint returned a malformed or unexpected payload."""
