"""Granule discovery and download: HTTP search contract, client, and mock.

The search endpoint speaks a small granule-catalog protocol:

    GET /search?wkt=...&start=...&end=...&product=...&orbit=...
        -> {"results": [granule record, ...]}
    GET /download/{granule_id}
        -> raster bytes

The client treats network faults and 5xx as retryable; anything
structurally wrong with a response is fatal and carries a payload excerpt.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import requests
from shapely import wkt as shapely_wkt
from shapely.errors import ShapelyError

from .errors import RetryableSearchError, SearchResponseError
from .timeseries import parse_utc

PRODUCT_KINDS = ("GRD_RTC_20m", "OPERA_RTC_30m")
PRODUCT_PIXEL_SIZE = {"GRD_RTC_20m": 20.0, "OPERA_RTC_30m": 30.0}
ORBIT_DIRECTIONS = ("ascending", "descending", "any")
EXCERPT_CHARS = 200


def _parse_polygon(text: str, label: str):
    try:
        geom = shapely_wkt.loads(text)
    except ShapelyError as exc:
        raise SearchResponseError(f"{label} is not valid WKT: {exc}") from exc
    if geom.geom_type != "Polygon":
        raise SearchResponseError(f"{label} must be a polygon, got {geom.geom_type}")
    return geom


@dataclass(frozen=True)
class SearchQuery:
    """Spatiotemporal catalog filter for one lake."""

    wkt: str
    start: datetime
    end: datetime
    product_kind: str = "GRD_RTC_20m"
    orbit_direction: str = "any"

    def __post_init__(self):
        _parse_polygon(self.wkt, "query wkt")
        if self.start.tzinfo is None or self.end.tzinfo is None:
            raise SearchResponseError("query datetimes must be timezone-aware")
        if not self.start < self.end:
            raise SearchResponseError(
                f"query start must precede end: {self.start} >= {self.end}"
            )
        if self.product_kind not in PRODUCT_KINDS:
            raise SearchResponseError(f"unknown product kind: {self.product_kind}")
        if self.orbit_direction not in ORBIT_DIRECTIONS:
            raise SearchResponseError(f"unknown orbit direction: {self.orbit_direction}")

    def params(self) -> dict[str, str]:
        return {
            "wkt": self.wkt,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "product": self.product_kind,
            "orbit": self.orbit_direction,
        }


@dataclass(frozen=True)
class GranuleRecord:
    """One catalog entry: identity, footprint, and where to fetch it."""

    granule_id: str
    acquired_at: datetime
    footprint_wkt: str
    download_url: str
    pixel_size_m: float
    polarization: str = "VV"
    orbit_direction: str = "ascending"

    def __post_init__(self):
        if not self.granule_id:
            raise SearchResponseError("granule record missing granule_id")
        if self.acquired_at.tzinfo is None:
            raise SearchResponseError(f"granule {self.granule_id}: naive acquired_at")
        if self.pixel_size_m not in (20.0, 30.0):
            raise SearchResponseError(
                f"granule {self.granule_id}: pixel size must be 20 or 30 m, "
                f"got {self.pixel_size_m}"
            )
        _parse_polygon(self.footprint_wkt, f"granule {self.granule_id} footprint")

    def to_json(self) -> dict:
        return {
            "granule_id": self.granule_id,
            "acquired_at": self.acquired_at.isoformat(),
            "footprint_wkt": self.footprint_wkt,
            "download_url": self.download_url,
            "pixel_size_m": self.pixel_size_m,
            "polarization": self.polarization,
            "orbit_direction": self.orbit_direction,
        }

    @classmethod
    def from_json(cls, row: dict) -> "GranuleRecord":
        try:
            return cls(
                granule_id=row["granule_id"],
                acquired_at=parse_utc(row["acquired_at"]),
                footprint_wkt=row["footprint_wkt"],
                download_url=row["download_url"],
                pixel_size_m=float(row["pixel_size_m"]),
                polarization=row.get("polarization", "VV"),
                orbit_direction=row.get("orbit_direction", "ascending"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SearchResponseError(
                f"malformed granule record: {exc}: {json.dumps(row)[:EXCERPT_CHARS]}"
            ) from exc


class SearchClient:
    """HTTP client for the search contract above."""

    def __init__(self, base_url: str, timeout_s: float = 30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def search(self, query: SearchQuery) -> list[GranuleRecord]:
        try:
            resp = self.session.get(
                f"{self.base_url}/search", params=query.params(), timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise RetryableSearchError(f"search request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise RetryableSearchError(f"search returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise SearchResponseError(
                f"search returned HTTP {resp.status_code}: {resp.text[:EXCERPT_CHARS]}"
            )
        try:
            rows = resp.json()["results"]
            records = [GranuleRecord.from_json(row) for row in rows]
        except (ValueError, KeyError, TypeError) as exc:
            raise SearchResponseError(
                f"malformed search response: {exc}: {resp.text[:EXCERPT_CHARS]}"
            ) from exc
        return sorted(records, key=lambda r: (r.acquired_at, r.granule_id))

    def download(self, url: str) -> bytes:
        try:
            resp = self.session.get(url, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise RetryableSearchError(f"download request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise RetryableSearchError(f"download returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise SearchResponseError(
                f"download returned HTTP {resp.status_code}: {url}"
            )
        return resp.content


class MockProvider:
    """In-process search/download server with a scriptable catalog.

    Binds an ephemeral localhost port.  fail_next(n) makes the next n
    requests return HTTP 500 to exercise retry paths; garbage_next()
    serves one syntactically broken search response.
    """

    def __init__(self):
        self.catalog: list[GranuleRecord] = []
        self.payloads: dict[str, bytes] = {}
        self.request_count = 0
        self._fail_budget = 0
        self._garbage_budget = 0
        self._lock = threading.Lock()
        provider = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                provider._handle(self)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_address[1]}"

    def start(self) -> "MockProvider":
        # short poll keeps shutdown() snappy in test teardown
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05), daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockProvider":
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def add_granule(self, record: GranuleRecord, payload: bytes) -> None:
        with self._lock:
            self.catalog.append(record)
            self.payloads[record.granule_id] = payload

    def fail_next(self, n: int = 1) -> None:
        with self._lock:
            self._fail_budget = n

    def garbage_next(self) -> None:
        with self._lock:
            self._garbage_budget = 1

    def download_url(self, granule_id: str) -> str:
        return f"{self.base_url}/download/{granule_id}"

    # -- request handling --

    def _handle(self, req: BaseHTTPRequestHandler) -> None:
        with self._lock:
            self.request_count += 1
            if self._fail_budget > 0:
                self._fail_budget -= 1
                req.send_response(500)
                req.end_headers()
                req.wfile.write(b"injected failure")
                return
            catalog = list(self.catalog)
            payloads = dict(self.payloads)
            garbage = self._garbage_budget > 0
            if garbage:
                self._garbage_budget = 0
        parsed = urlparse(req.path)
        if parsed.path == "/search":
            body, status = self._search_response(parse_qs(parsed.query), catalog, garbage)
            req.send_response(status)
            req.send_header("Content-Type", "application/json")
            req.end_headers()
            req.wfile.write(body)
        elif parsed.path.startswith("/download/"):
            granule_id = parsed.path.removeprefix("/download/")
            payload = payloads.get(granule_id)
            if payload is None:
                req.send_response(404)
                req.end_headers()
                req.wfile.write(b"no such granule")
            else:
                req.send_response(200)
                req.send_header("Content-Type", "application/octet-stream")
                req.end_headers()
                req.wfile.write(payload)
        else:
            req.send_response(404)
            req.end_headers()
            req.wfile.write(b"no such route")

    def _search_response(self, params, catalog, garbage) -> tuple[bytes, int]:
        if garbage:
            return b"{not json at all", 200
        try:
            aoi = shapely_wkt.loads(params["wkt"][0])
            start = parse_utc(params["start"][0])
            end = parse_utc(params["end"][0])
            product = params["product"][0]
            orbit = params["orbit"][0]
        except (KeyError, IndexError, ValueError, ShapelyError) as exc:
            return json.dumps({"error": str(exc)}).encode(), 400
        pixel_size = PRODUCT_PIXEL_SIZE.get(product)
        hits = [
            r
            for r in catalog
            if r.pixel_size_m == pixel_size
            and start <= r.acquired_at <= end
            and (orbit == "any" or r.orbit_direction == orbit)
            and aoi.intersects(shapely_wkt.loads(r.footprint_wkt))
        ]
        hits.sort(key=lambda r: (r.acquired_at, r.granule_id))
        return json.dumps({"results": [r.to_json() for r in hits]}).encode(), 200
