"""Automated SAR monitoring of glacial lakes.

The package is organized as a small library plus a CLI:

  raster / speckle / normalize   preprocessing of SAR backscatter rasters
  segmentation / evaluation      open-water extraction and its metrics
  timeseries / plotting          area series, trends, overlays, and figures
  provider / jobs / ingestion    scheduled granule ingest with durable state
  store / api                    artifact store and the read-only REST API
  config / cli                   pipeline configuration and the entry point
"""

__version__ = "0.1.0"

from .errors import LakewatchError

__all__ = ["LakewatchError", "__version__"]
