"""Single command-line entry point wiring all modules.

Subcommands map onto the pipeline stages: ``preprocess`` and ``segment``
run the raster chain on single files, ``evaluate``/``area``/``series``/
``trend`` produce JSON reports (``series`` and ``trend`` can render a
figure next to the report), and ``ingest-once``/``serve``/``run`` drive
the services.  Exit codes: 0 success, 1 usage or config error, 2 data
error, 3 remote-service error.  Reports go to stdout as JSON; errors go
to stderr as one ``error:`` line.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from pathlib import Path

import shapely.wkt

from .config import BACKENDS, load_config
from .errors import (
    ConfigError,
    LakewatchError,
    RetryableSearchError,
    SearchResponseError,
    SeriesError,
)
from .normalize import equalize
from .raster import LakeAOI, crop_to_aoi, load_raster, pad_to_lattice, save_raster
from .segmentation import BinaryMask, binarize, get_backend, largest_component
from .speckle import LeeParams, enhanced_lee
from .timeseries import linear_trend, load_series, mask_area, summer_maxima

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REMOTE = 3


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2))


def _load_aoi(path: str, name: str | None) -> LakeAOI:
    """AOI from a GeoJSON file, or from a file holding bare WKT."""
    path = Path(path)
    if path.suffix.lower() in (".json", ".geojson"):
        return LakeAOI.from_geojson(path, name=name)
    wkt = path.read_text(encoding="utf-8").strip()
    centroid = shapely.wkt.loads(wkt).centroid
    return LakeAOI(
        name=name or path.stem,
        polygon_wkt=wkt,
        center_lat=centroid.y,
        center_lon=centroid.x,
    )


def _cmd_preprocess(args) -> int:
    grid = load_raster(args.src)
    if args.aoi:
        aoi = _load_aoi(args.aoi, args.aoi_name)
        grid = crop_to_aoi(grid, aoi, buffer_m=args.buffer)
    if args.speckle:
        grid = enhanced_lee(
            grid, LeeParams(window=args.window, damping=args.damping, looks=args.looks)
        )
    normalized, _ = equalize(pad_to_lattice(grid, args.lattice))
    save_raster(normalized, args.out)
    _emit(
        {
            "input": args.src,
            "output": args.out,
            "height": normalized.height,
            "width": normalized.width,
            "valid_pixels": int(normalized.validity.sum()),
        }
    )
    return EXIT_OK


def _cmd_segment(args) -> int:
    backend = get_backend(args.backend, args.model)
    grid = load_raster(args.src)
    probs = backend.segment(grid)
    mask = largest_component(binarize(probs, args.threshold))
    save_raster(mask.to_grid(), args.out)
    if args.prob_out:
        save_raster(probs.to_grid(), args.prob_out)
    report = {
        "output": args.out,
        "water_pixels": mask.water_count(),
        "pixel_size_m": mask.pixel_size_m,
        "area_m2": mask_area(mask),
    }
    if probs.flags:
        report["flags"] = list(probs.flags)
    _emit(report)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .evaluation import confusion, metrics

    pred = BinaryMask.from_grid(load_raster(args.pred))
    truth = BinaryMask.from_grid(load_raster(args.truth))
    counts = confusion(pred, truth)
    _emit(metrics(counts).as_dict(counts=counts))
    return EXIT_OK


def _cmd_area(args) -> int:
    mask = BinaryMask.from_grid(load_raster(args.mask))
    pixel_size = args.pixel_size if args.pixel_size is not None else mask.pixel_size_m
    _emit(
        {
            "pixel_count": mask.water_count(),
            "pixel_size_m": pixel_size,
            "area_m2": mask_area(mask, pixel_size),
        }
    )
    return EXIT_OK


def _load_cli_series(args):
    # the store treats a missing series as empty; a named file must exist
    if not Path(args.csv).is_file():
        raise SeriesError(f"no such series file: {args.csv}")
    lake = args.lake or Path(args.csv).stem
    series = load_series(lake, args.csv)
    if args.summer:
        series = summer_maxima(series)
    return series


def _cmd_series(args) -> int:
    series = _load_cli_series(args)
    report = {
        "lake": series.lake,
        "count": len(series),
        "observations": [
            {
                "date": obs.acquired_at.isoformat(),
                "area_m2": obs.area_m2,
                "pixel_count": obs.pixel_count,
                "pixel_size_m": obs.pixel_size_m,
                "granule_id": obs.source_granule,
            }
            for obs in series.observations
        ],
    }
    if args.plot:
        from .plotting import render_series_plot

        report["plot"] = str(render_series_plot(series, args.plot))
    _emit(report)
    return EXIT_OK


def _cmd_trend(args) -> int:
    series = _load_cli_series(args)
    trend = linear_trend(series)
    report = {"lake": series.lake, "n_observations": len(series), **trend.as_dict()}
    if args.plot:
        from .plotting import render_series_plot

        report["plot"] = str(render_series_plot(series, args.plot, trend=trend))
    _emit(report)
    return EXIT_OK


def _cmd_ingest_once(args) -> int:
    from .ingestion import IngestionEngine

    engine = IngestionEngine(load_config(args.config))
    _emit(engine.run_once(workers=args.workers))
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .api import serve

    serve(load_config(args.config))
    return EXIT_OK


def _cmd_run(args) -> int:
    """Scheduler thread plus the API server in one process."""
    from .api import serve
    from .ingestion import IngestionEngine

    config = load_config(args.config)
    engine = IngestionEngine(config)
    shutdown = threading.Event()
    scheduler = threading.Thread(
        target=engine.run_scheduler,
        args=(shutdown,),
        kwargs={"interval_s": args.interval},
        name="scheduler",
        daemon=True,
    )
    scheduler.start()
    try:
        serve(config)  # blocks until the server is told to stop
    finally:
        shutdown.set()
        scheduler.join(timeout=30.0)
    return EXIT_OK


def _add_series_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--csv", required=True, help="area series CSV")
    sub.add_argument("--lake", help="lake name (default: CSV file stem)")
    sub.add_argument(
        "--summer", action="store_true", help="reduce to per-year summer maxima first"
    )
    sub.add_argument("--plot", help="also render a PNG figure to this path")


def _add_config_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="pipeline config YAML")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lakewatch", description="glacial-lake surface monitoring pipeline"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("preprocess", help="crop, filter, pad, and normalize a granule")
    sub.add_argument("--in", dest="src", required=True, help="input GeoTIFF")
    sub.add_argument("--out", required=True, help="output 8-bit GeoTIFF")
    sub.add_argument("--aoi", help="AOI file (GeoJSON or bare WKT)")
    sub.add_argument("--aoi-name", help="AOI name override")
    sub.add_argument("--buffer", type=float, default=500.0, help="AOI buffer in meters")
    sub.add_argument("--speckle", action="store_true", help="apply the speckle filter")
    sub.add_argument("--window", type=int, default=LeeParams().window)
    sub.add_argument("--damping", type=float, default=LeeParams().damping)
    sub.add_argument("--looks", type=float, default=LeeParams().looks)
    sub.add_argument("--lattice", type=int, default=256, help="padding lattice size")
    sub.set_defaults(handler=_cmd_preprocess)

    sub = commands.add_parser("segment", help="segment open water in a normalized granule")
    sub.add_argument("--in", dest="src", required=True, help="normalized 8-bit GeoTIFF")
    sub.add_argument("--out", required=True, help="output mask GeoTIFF")
    sub.add_argument("--backend", choices=BACKENDS, default="otsu")
    sub.add_argument("--model", help="model file for the model backend")
    sub.add_argument("--threshold", type=float, default=0.5)
    sub.add_argument("--prob-out", help="also write the probability raster here")
    sub.set_defaults(handler=_cmd_segment)

    sub = commands.add_parser("evaluate", help="score a mask against ground truth")
    sub.add_argument("--pred", required=True, help="predicted mask GeoTIFF")
    sub.add_argument("--truth", required=True, help="truth mask GeoTIFF")
    sub.set_defaults(handler=_cmd_evaluate)

    sub = commands.add_parser("area", help="surface area of a mask")
    sub.add_argument("--mask", required=True, help="mask GeoTIFF")
    sub.add_argument("--pixel-size", type=float, help="pixel size override in meters")
    sub.set_defaults(handler=_cmd_area)

    sub = commands.add_parser("series", help="report an area time series")
    _add_series_flags(sub)
    sub.set_defaults(handler=_cmd_series)

    sub = commands.add_parser("trend", help="linear trend over an area time series")
    _add_series_flags(sub)
    sub.set_defaults(handler=_cmd_trend)

    sub = commands.add_parser("ingest-once", help="poll and drain all executable jobs")
    _add_config_flag(sub)
    sub.add_argument("--workers", type=int, default=2, help="download worker threads")
    sub.set_defaults(handler=_cmd_ingest_once)

    sub = commands.add_parser("serve", help="run the read-only API server")
    _add_config_flag(sub)
    sub.set_defaults(handler=_cmd_serve)

    sub = commands.add_parser("run", help="scheduler and API server in one process")
    _add_config_flag(sub)
    sub.add_argument("--interval", type=float, help="poll interval override in seconds")
    sub.set_defaults(handler=_cmd_run)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed usage; fold its exit codes into ours
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RetryableSearchError, SearchResponseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (LakewatchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
