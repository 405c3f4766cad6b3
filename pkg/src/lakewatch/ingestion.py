"""The ingestion engine: polling, the granule processing chain, scheduling.

poll_once discovers unseen granules and records them durably BEFORE the
per-lake high-water mark advances, so a crash in between costs a repeat
query, never a lost or duplicated granule.  execute_job drives one job
through download, preprocessing, segmentation, and publication, recording
every hop in the job log.  The scheduler runs cycles strictly one at a
time and backs off exponentially (capped at the tick interval) while the
search endpoint misbehaves.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timedelta, timezone

from .config import LakeTarget, PipelineConfig
from .errors import RetryableSearchError
from .jobs import (
    DISCOVERED,
    DOWNLOADING,
    FAILED,
    PREPROCESSED,
    PUBLISHED,
    SEGMENTED,
    IngestJob,
    JobStore,
    MarkStore,
    write_status,
)
from .normalize import equalize
from .plotting import render_overlay
from .provider import SearchClient, SearchQuery
from .raster import crop_to_aoi, load_raster, pad_to_lattice
from .segmentation import binarize, get_backend, largest_component
from .speckle import enhanced_lee
from .store import ArtifactStore
from .timeseries import AreaObservation

MARK_OVERLAP = timedelta(days=1)
DEFAULT_WORKERS = 2
BACKOFF_FLOOR_S = 1.0


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class IngestionEngine:
    """One scheduler's worth of state: clients, stores, and the chain."""

    def __init__(self, config: PipelineConfig, client: SearchClient | None = None, clock=None):
        self.config = config
        self.client = client or SearchClient(config.search_url)
        self.jobs = JobStore(config.jobs_path)
        self.marks = MarkStore(config.marks_path)
        self.store = ArtifactStore(config.artifacts_dir, config.series_dir, config.cache_dir)
        self.backend = get_backend(config.backend, config.model_path)
        self.clock = clock or _utcnow
        self._publish_lock = threading.Lock()
        # test seam: runs after new job records are durable, before the
        # mark advances; a crash here must not duplicate publications
        self.after_record_hook = None

    # -- discovery --

    def poll_once(self) -> list[IngestJob]:
        """Create Discovered jobs for unseen granules across all lakes."""
        now = self.clock()
        known = self.jobs.load()
        created: list[IngestJob] = []
        for target in self.config.lakes:
            mark = self.marks.get(target.name)
            start = mark - MARK_OVERLAP if mark else self.config.search_epoch
            records = self.client.search(
                SearchQuery(
                    wkt=target.aoi.polygon_wkt,
                    start=start,
                    end=now,
                    product_kind=target.product_kind,
                    orbit_direction=target.orbit_direction,
                )
            )
            fresh = [
                IngestJob.discover(target.name, record, now=now)
                for record in records
                if f"{target.name}:{record.granule_id}" not in known
            ]
            for job in fresh:
                self.jobs.append(job)
                known[job.job_id] = job
            created.extend(fresh)
            if self.after_record_hook is not None:
                self.after_record_hook()
            if records:
                newest = max(record.acquired_at for record in records)
                if mark is None or newest > mark:
                    self.marks.set(target.name, newest)
        write_status(self.config.status_path, now)
        return created

    # -- execution --

    def executable_jobs(self) -> list[IngestJob]:
        """Jobs ready to run: Discovered, plus Failed with retry budget."""
        jobs = [
            job
            for job in self.jobs.load().values()
            if job.state == DISCOVERED or job.retryable
        ]
        jobs.sort(key=lambda j: (j.granule.acquired_at, j.job_id))
        return jobs

    def execute_job(self, job: IngestJob) -> IngestJob:
        """Run the processing chain; every outcome lands in the job log.

        Raises JobStateError without side effects when the job is not
        executable (already Published, mid-flight, or out of retries).
        """
        job = self.jobs.append(job.advance(DOWNLOADING, now=self.clock()))
        try:
            target = self.config.lake(job.lake)
            payload = self.client.download(job.granule.download_url)
            grid = load_raster(self.store.cache_put(payload))
            grid = crop_to_aoi(grid, target.aoi, buffer_m=self.config.crop_buffer_m)
            if target.product_kind == "OPERA_RTC_30m":
                # the 30 m product arrives unfiltered; 20 m RTC is despeckled upstream
                grid = enhanced_lee(grid, self.config.lee)
            normalized, _ = equalize(pad_to_lattice(grid))
            job = self.jobs.append(job.advance(PREPROCESSED, now=self.clock()))

            probs = self.backend.segment(normalized)
            mask = largest_component(binarize(probs, self.config.threshold))
            job = self.jobs.append(job.advance(SEGMENTED, now=self.clock()))

            observation = AreaObservation.from_count(
                lake=job.lake,
                acquired_at=job.granule.acquired_at,
                pixel_count=mask.water_count(),
                pixel_size_m=job.granule.pixel_size_m,
                source_granule=job.granule.granule_id,
            )
            overlay = render_overlay(normalized, mask)
            with self._publish_lock:
                self.store.publish(
                    observation, overlay, mask, probs=probs, normalized=normalized
                )
            return self.jobs.append(job.advance(PUBLISHED, now=self.clock()))
        except Exception as exc:
            return self.jobs.append(
                job.advance(FAILED, error=str(exc), now=self.clock())
            )

    def run_once(self, workers: int = DEFAULT_WORKERS) -> dict:
        """One full cycle: poll, then drain every executable job."""
        created = self.poll_once()
        pending = self.executable_jobs()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(self.execute_job, pending))
        return {
            "discovered": len(created),
            "executed": len(results),
            "published": sum(1 for job in results if job.state == PUBLISHED),
            "failed": sum(1 for job in results if job.state == FAILED),
        }

    # -- scheduling --

    def run_scheduler(
        self,
        shutdown: threading.Event,
        interval_s: float | None = None,
        max_cycles: int | None = None,
    ) -> int:
        """Cycle until shutdown; returns the number of completed cycles.

        Cycles are strictly sequential, so a slow cycle suppresses the
        next tick rather than overlapping it.  A cycle in flight always
        finishes before shutdown is honoured.
        """
        interval = self.config.interval_s if interval_s is None else interval_s
        backoff = min(BACKOFF_FLOOR_S, interval)
        cycles = 0
        while not shutdown.is_set():
            try:
                self.run_once()
                delay = interval
                backoff = min(BACKOFF_FLOOR_S, interval)
            except RetryableSearchError:
                delay = backoff
                backoff = min(backoff * 2.0, interval)
            cycles += 1
            if max_cycles is not None and cycles >= max_cycles:
                break
            shutdown.wait(delay)
        return cycles
