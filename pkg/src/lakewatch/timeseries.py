"""Surface-area observations, series assembly, summer maxima, trends.

A series is kept strictly time-ordered with one row per observation and
is persisted as one CSV per lake with the columns
date,area_m2,pixel_count,pixel_size_m,source_granule (ISO-8601 dates).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from io import StringIO
from pathlib import Path

import numpy as np

from .errors import SeriesError
from .segmentation import BinaryMask

#: summer window for maxima extraction: June through September inclusive
SUMMER_MONTHS = (6, 9)

SERIES_COLUMNS = ("date", "area_m2", "pixel_count", "pixel_size_m", "source_granule")

_SECONDS_PER_YEAR = 365.25 * 86400.0


def parse_utc(text: str) -> datetime:
    """ISO-8601 to an aware UTC datetime; naive input is taken as UTC."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class AreaObservation:
    """One dated surface-area measurement for one lake."""

    lake: str
    acquired_at: datetime
    area_m2: float
    pixel_count: int
    pixel_size_m: float
    source_granule: str

    def __post_init__(self) -> None:
        if self.acquired_at.tzinfo is None:
            raise SeriesError(f"acquired_at must be timezone-aware: {self.acquired_at}")
        if self.pixel_count < 0 or self.pixel_size_m <= 0:
            raise SeriesError("pixel count must be >= 0 and pixel size positive")
        expected = self.pixel_count * self.pixel_size_m * self.pixel_size_m
        if self.area_m2 != expected:
            raise SeriesError(
                f"area {self.area_m2} != pixel_count x pixel_size^2 = {expected}"
            )

    @classmethod
    def from_count(
        cls,
        lake: str,
        acquired_at: datetime,
        pixel_count: int,
        pixel_size_m: float,
        source_granule: str,
    ) -> "AreaObservation":
        return cls(
            acquired_at=acquired_at,
            lake=lake,
            area_m2=pixel_count * pixel_size_m * pixel_size_m,
            pixel_count=pixel_count,
            pixel_size_m=pixel_size_m,
            source_granule=source_granule,
        )


@dataclass(frozen=True)
class AreaSeries:
    """Strictly time-ordered observations of a single lake."""

    lake: str
    observations: tuple[AreaObservation, ...]

    def __post_init__(self) -> None:
        obs = tuple(self.observations)
        for o in obs:
            if o.lake != self.lake:
                raise SeriesError(f"observation for {o.lake!r} in series {self.lake!r}")
        stamps = [o.acquired_at for o in obs]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise SeriesError("observations must be strictly increasing in time")
        object.__setattr__(self, "observations", obs)

    def __len__(self) -> int:
        return len(self.observations)

    @classmethod
    def build(cls, lake: str, observations) -> "AreaSeries":
        """Sort observations and build a series (timestamps must be unique)."""
        return cls(lake, tuple(sorted(observations, key=lambda o: o.acquired_at)))

    def upsert(self, obs: AreaObservation) -> "AreaSeries":
        """Insert or replace by source_granule, keeping time order."""
        kept = [o for o in self.observations if o.source_granule != obs.source_granule]
        return AreaSeries.build(self.lake, kept + [obs])


@dataclass(frozen=True)
class TrendReport:
    slope_m2_per_year: float
    intercept_m2: float
    r_squared: float
    n_points: int
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        out = {
            "slope_m2_per_year": self.slope_m2_per_year,
            "intercept_m2": self.intercept_m2,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }
        if self.flags:
            out["flags"] = list(self.flags)
        return out


def mask_area(mask: BinaryMask, pixel_size_m: float | None = None) -> float:
    """Water-pixel count times the pixel area.

    The mask's own pixel size is used unless an override is given.
    """
    size = mask.pixel_size_m if pixel_size_m is None else pixel_size_m
    if size <= 0:
        raise SeriesError(f"pixel size must be positive, got {size}")
    return mask.water_count() * size * size


def summer_maxima(series: AreaSeries, months: tuple[int, int] = SUMMER_MONTHS) -> AreaSeries:
    """Per calendar year, the largest in-window observation.

    Years without any in-window observation are omitted; ties go to the
    earliest observation of the tied maximum.
    """
    lo, hi = months
    by_year: dict[int, AreaObservation] = {}
    for obs in series.observations:
        if not lo <= obs.acquired_at.month <= hi:
            continue
        year = obs.acquired_at.year
        best = by_year.get(year)
        if best is None or obs.area_m2 > best.area_m2:
            by_year[year] = obs
    return AreaSeries.build(series.lake, list(by_year.values()))


def fractional_years(series: AreaSeries) -> np.ndarray:
    """Observation times in years since the first observation."""
    t0 = series.observations[0].acquired_at
    return np.array(
        [(o.acquired_at - t0).total_seconds() / _SECONDS_PER_YEAR for o in series.observations]
    )


def linear_trend(series: AreaSeries) -> TrendReport:
    """Ordinary least squares of area against time in fractional years."""
    if len(series) < 2:
        raise SeriesError(f"trend needs >= 2 observations, got {len(series)}")
    areas = np.array([o.area_m2 for o in series.observations])
    if (areas == areas[0]).all():
        return TrendReport(
            slope_m2_per_year=0.0,
            intercept_m2=float(areas[0]),
            r_squared=0.0,
            n_points=len(series),
            flags=("degenerate:r_squared",),
        )
    t = fractional_years(series)
    slope, intercept = np.polyfit(t, areas, deg=1)
    fitted = intercept + slope * t
    ss_res = float(((areas - fitted) ** 2).sum())
    ss_tot = float(((areas - areas.mean()) ** 2).sum())
    return TrendReport(
        slope_m2_per_year=float(slope),
        intercept_m2=float(intercept),
        r_squared=1.0 - ss_res / ss_tot,
        n_points=len(series),
    )


def series_to_csv(series: AreaSeries) -> str:
    """Render a series in the canonical CSV schema."""
    buf = StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_COLUMNS)
    for o in series.observations:
        writer.writerow(
            [
                o.acquired_at.isoformat(),
                repr(o.area_m2),
                o.pixel_count,
                repr(o.pixel_size_m),
                o.source_granule,
            ]
        )
    return buf.getvalue()


def series_from_csv(lake: str, text: str) -> AreaSeries:
    """Parse the canonical CSV schema back into a series."""
    reader = csv.reader(StringIO(text))
    rows = list(reader)
    if not rows or tuple(rows[0]) != SERIES_COLUMNS:
        raise SeriesError(f"series CSV for {lake!r} has an unexpected header")
    observations = []
    for row in rows[1:]:
        if not row:
            continue
        date, area, count, size, granule = row
        observations.append(
            AreaObservation(
                acquired_at=parse_utc(date),
                lake=lake,
                area_m2=float(area),
                pixel_count=int(count),
                pixel_size_m=float(size),
                source_granule=granule,
            )
        )
    return AreaSeries.build(lake, observations)


def load_series(lake: str, path: str | Path) -> AreaSeries:
    """Read a lake's series from disk; a missing file is an empty series."""
    path = Path(path)
    if not path.exists():
        return AreaSeries(lake, ())
    return series_from_csv(lake, path.read_text(encoding="utf-8"))


def save_series(series: AreaSeries, path: str | Path) -> None:
    """Atomic whole-file rewrite so readers never see a torn series."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(series_to_csv(series), encoding="utf-8")
    tmp.replace(path)
