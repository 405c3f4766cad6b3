"""Durable ingest-job state: lifecycle records, JSONL log, high-water marks.

A job is one granule's journey for one lake.  States move along

    Discovered -> Downloading -> Preprocessed -> Segmented -> Published

with any state allowed to drop to Failed, and Failed allowed back into
Downloading while the retry budget lasts.  Every transition is appended
to a JSON-lines log and fsynced before the caller proceeds; the current
state of a job is the last record bearing its job_id, so a torn final
line from a crash is simply ignored on reload.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from .errors import JobStateError
from .provider import GranuleRecord
from .timeseries import parse_utc

DISCOVERED = "Discovered"
DOWNLOADING = "Downloading"
PREPROCESSED = "Preprocessed"
SEGMENTED = "Segmented"
PUBLISHED = "Published"
FAILED = "Failed"

STATES = (DISCOVERED, DOWNLOADING, PREPROCESSED, SEGMENTED, PUBLISHED, FAILED)

# forward chain plus the universal drop to Failed and the retry re-entry
ALLOWED_TRANSITIONS: dict[str, frozenset[str]] = {
    DISCOVERED: frozenset({DOWNLOADING, FAILED}),
    DOWNLOADING: frozenset({PREPROCESSED, FAILED}),
    PREPROCESSED: frozenset({SEGMENTED, FAILED}),
    SEGMENTED: frozenset({PUBLISHED, FAILED}),
    PUBLISHED: frozenset({FAILED}),
    FAILED: frozenset({DOWNLOADING}),
}

MAX_ATTEMPTS = 3


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def job_id_for(lake: str, granule_id: str) -> str:
    return f"{lake}:{granule_id}"


@dataclass(frozen=True)
class IngestJob:
    """Lifecycle record of one granule from discovery to publication."""

    job_id: str
    lake: str
    granule: GranuleRecord
    state: str = DISCOVERED
    attempts: int = 0
    last_error: str | None = None
    updated_at: datetime | None = None

    def __post_init__(self):
        if self.state not in STATES:
            raise JobStateError(f"unknown job state: {self.state}")
        if self.attempts < 0:
            raise JobStateError(f"attempts must be >= 0, got {self.attempts}")
        if self.updated_at is None:
            object.__setattr__(self, "updated_at", _utcnow())

    @classmethod
    def discover(cls, lake: str, granule: GranuleRecord, now: datetime | None = None) -> "IngestJob":
        return cls(
            job_id=job_id_for(lake, granule.granule_id),
            lake=lake,
            granule=granule,
            state=DISCOVERED,
            updated_at=now,
        )

    @property
    def retryable(self) -> bool:
        return self.state == FAILED and self.attempts < MAX_ATTEMPTS

    def advance(self, new_state: str, error: str | None = None, now: datetime | None = None) -> "IngestJob":
        """New record one legal transition on; attempts grow on failure."""
        if new_state not in ALLOWED_TRANSITIONS.get(self.state, frozenset()):
            raise JobStateError(
                f"invalid state transition: {self.state} -> {new_state} ({self.job_id})"
            )
        if self.state == FAILED and new_state == DOWNLOADING and self.attempts >= MAX_ATTEMPTS:
            raise JobStateError(
                f"retry budget exhausted after {self.attempts} attempts ({self.job_id})"
            )
        if new_state == FAILED:
            return replace(
                self,
                state=new_state,
                attempts=self.attempts + 1,
                last_error=error,
                updated_at=now or _utcnow(),
            )
        return replace(
            self, state=new_state, last_error=None, updated_at=now or _utcnow()
        )

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "lake": self.lake,
            "granule": self.granule.to_json(),
            "state": self.state,
            "attempts": self.attempts,
            "last_error": self.last_error,
            "updated_at": self.updated_at.isoformat(),
        }

    @classmethod
    def from_json(cls, row: dict) -> "IngestJob":
        return cls(
            job_id=row["job_id"],
            lake=row["lake"],
            granule=GranuleRecord.from_json(row["granule"]),
            state=row["state"],
            attempts=row["attempts"],
            last_error=row.get("last_error"),
            updated_at=parse_utc(row["updated_at"]),
        )


class JobStore:
    """Append-only JSONL log; current state = last record per job_id.

    Writes are serialized by an in-process lock; worker threads share
    one store instance.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._write_lock = threading.Lock()

    def append(self, job: IngestJob) -> IngestJob:
        """Durably record one transition; returns the job unchanged."""
        line = json.dumps(job.to_json(), separators=(",", ":")) + "\n"
        with self._write_lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
        return job

    def load(self) -> dict[str, IngestJob]:
        """Replay the log; last record wins per job_id.

        A record that fails to decode on the final line is a torn write
        from a crash and is dropped; anywhere earlier it is corruption.
        """
        if not self.path.exists():
            return {}
        jobs: dict[str, IngestJob] = {}
        lines = self.path.read_text(encoding="utf-8").splitlines()
        for index, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                if index == len(lines) - 1:
                    break
                raise JobStateError(
                    f"corrupt job log at line {index + 1}: {exc}"
                ) from exc
            job = IngestJob.from_json(row)
            jobs[job.job_id] = job
        return jobs

    def compact(self) -> int:
        """Rewrite the log to one line per job; returns lines dropped."""
        jobs = self.load()
        before = sum(1 for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip()) if self.path.exists() else 0
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for job_id in sorted(jobs):
                fh.write(json.dumps(jobs[job_id].to_json(), separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(self.path)
        return before - len(jobs)

    def counts(self) -> dict[str, int]:
        out = {state: 0 for state in STATES}
        for job in self.load().values():
            out[job.state] += 1
        return out


class MarkStore:
    """Per-lake high-water marks over granule acquisition times."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def load(self) -> dict[str, datetime]:
        if not self.path.exists():
            return {}
        raw = json.loads(self.path.read_text(encoding="utf-8"))
        return {lake: parse_utc(value) for lake, value in raw.items()}

    def get(self, lake: str) -> datetime | None:
        return self.load().get(lake)

    def set(self, lake: str, when: datetime) -> None:
        if when.tzinfo is None:
            raise JobStateError(f"mark for {lake} must be timezone-aware")
        marks = self.load()
        marks[lake] = when
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        payload = {lake: mark.isoformat() for lake, mark in sorted(marks.items())}
        tmp.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        tmp.replace(self.path)


def write_status(path: str | Path, last_poll_at: datetime) -> None:
    """Scheduler heartbeat consumed by the health endpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(
        json.dumps({"last_poll_at": last_poll_at.isoformat()}) + "\n", encoding="utf-8"
    )
    tmp.replace(path)


def read_status(path: str | Path) -> dict | None:
    path = Path(path)
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))
