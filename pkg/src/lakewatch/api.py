"""Read-only REST service over the artifact store.

Routes:

    GET /health                     service status and job counters
    GET /lakes                      configured lake names
    GET /lakes/{lake}/areas         area series rows, optional from/to bounds
    GET /images/{lake}/latest       newest overlay PNG with metadata headers

No request mutates the store; the ingestion engine is the only writer and
swaps the latest pointer atomically, so every response is a consistent
snapshot.  Error bodies carry a machine-readable ``reason`` field.
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse, Response

from .config import PipelineConfig
from .errors import JobStateError, SeriesError
from .jobs import DISCOVERED, DOWNLOADING, FAILED, PREPROCESSED, SEGMENTED, JobStore, read_status
from .store import LATEST_NAME, ArtifactStore
from .timeseries import parse_utc

PENDING_STATES = (DISCOVERED, DOWNLOADING, PREPROCESSED, SEGMENTED)

_DAY = dt.timedelta(days=1)
_MICROSECOND = dt.timedelta(microseconds=1)


def _reason(status_code: int, reason: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"reason": reason})


def _parse_bound(value: str, end: bool) -> dt.datetime:
    """Resolve a from/to query value to an inclusive UTC bound.

    Bare dates cover the whole day: a ``to`` date resolves to the last
    instant of that day.  Full timestamps are used as given.
    """
    try:
        day = dt.date.fromisoformat(value)
    except ValueError:
        return parse_utc(value)
    start = dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc)
    return start + _DAY - _MICROSECOND if end else start


def create_app(config: PipelineConfig) -> FastAPI:
    """Build the service around ``config``'s store and job-log paths.

    The store directories are provisioned here so a freshly configured
    service reports healthy; ``/health`` degrades only when they go
    missing afterwards or the job log stops parsing.
    """
    store = ArtifactStore(config.artifacts_dir, config.series_dir, config.cache_dir)
    store.artifacts_dir.mkdir(parents=True, exist_ok=True)
    store.series_dir.mkdir(parents=True, exist_ok=True)
    jobs = JobStore(config.jobs_path)
    app = FastAPI(title="lakewatch", docs_url=None, redoc_url=None)

    @app.get("/health")
    def health():
        status = "ok"
        if not store.artifacts_dir.is_dir() or not store.series_dir.is_dir():
            status = "degraded"
        pending = failed = 0
        try:
            counts = jobs.counts()
        except JobStateError:
            status = "degraded"
        else:
            pending = sum(counts[state] for state in PENDING_STATES)
            failed = counts[FAILED]
        heartbeat = None
        try:
            heartbeat = read_status(config.status_path)
        except ValueError:
            status = "degraded"
        return {
            "status": status,
            "last_poll_at": heartbeat["last_poll_at"] if heartbeat else None,
            "jobs_pending": pending,
            "jobs_failed": failed,
        }

    @app.get("/lakes")
    def lakes():
        return config.lake_names()

    @app.get("/lakes/{lake}/areas")
    def areas(
        lake: str,
        from_: str | None = Query(default=None, alias="from"),
        to: str | None = Query(default=None, alias="to"),
    ):
        if lake not in config.lake_names():
            return _reason(404, "unknown_lake")
        try:
            lower = _parse_bound(from_, end=False) if from_ else None
            upper = _parse_bound(to, end=True) if to else None
        except (ValueError, SeriesError):
            return _reason(400, "bad_dates")
        if lower is not None and upper is not None and lower > upper:
            return _reason(400, "bad_dates")
        try:
            series = store.load_series(lake)
        except SeriesError:
            return _reason(503, "store_unreadable")
        return [
            {
                "date": obs.acquired_at.isoformat(),
                "area_m2": obs.area_m2,
                "granule_id": obs.source_granule,
            }
            for obs in series.observations
            if (lower is None or obs.acquired_at >= lower)
            and (upper is None or obs.acquired_at <= upper)
        ]

    @app.get("/images/{lake}/latest")
    def latest_image(lake: str):
        if lake not in config.lake_names():
            return _reason(404, "unknown_lake")
        pointer_path = store.artifacts_dir / lake / LATEST_NAME
        if not pointer_path.exists():
            return _reason(404, "no_results")
        try:
            pointer = json.loads(pointer_path.read_text(encoding="utf-8"))
            png = Path(pointer["overlay"]).read_bytes()
        except (OSError, ValueError, KeyError):
            return _reason(503, "store_unreadable")
        return Response(
            content=png,
            media_type="image/png",
            headers={
                "X-Acquired-At": pointer["acquired_at"],
                "X-Area-M2": str(pointer["area_m2"]),
                "X-Granule-Id": pointer["granule_id"],
            },
        )

    return app


def serve(config: PipelineConfig) -> None:
    """Run the service under uvicorn on the configured address."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
