"""Release gate: one test per shipping criterion, with runtime budgets.

Each criterion is a single test whose name carries the verdict under
``pytest -v``; the body also prints a ``criterion N (...): PASS/FAIL``
line.  Budgets are asserted, so a pathological slowdown fails the gate.
"""

import contextlib
import datetime as dt
import json
import subprocess
import sys
import time

import numpy as np
import yaml
from fastapi.testclient import TestClient

from conftest import build_granule_payload, make_granule, make_grid, square_wkt
from lakewatch.api import create_app
from lakewatch.cli import main
from lakewatch.config import load_config
from lakewatch.evaluation import (
    ConfusionCounts,
    FocalParams,
    bce_loss,
    dice_loss,
    focal_loss,
    metrics,
    total_loss,
)
from lakewatch.jobs import PUBLISHED, JobStore
from lakewatch.normalize import equalize
from lakewatch.provider import MockProvider
from lakewatch.raster import SCALE_UINT8, load_raster, pad_to_lattice, save_raster
from lakewatch.segmentation import BinaryMask, ProbabilityMap
from lakewatch.speckle import LeeParams, enhanced_lee
from lakewatch.timeseries import (
    AreaObservation,
    AreaSeries,
    linear_trend,
    mask_area,
    series_from_csv,
    summer_maxima,
)
from oracles import enhanced_lee_oracle, fd_gradient

UTC = dt.timezone.utc
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@contextlib.contextmanager
def criterion(number: int, label: str, budget_s: float):
    start = time.monotonic()
    try:
        yield
        elapsed = time.monotonic() - start
        if elapsed >= budget_s:
            raise AssertionError(
                f"runtime {elapsed:.2f}s exceeds the {budget_s:.0f}s budget"
            )
    except BaseException:
        print(f"criterion {number} ({label}): FAIL")
        raise
    print(f"criterion {number} ({label}): PASS ({elapsed:.2f}s)")


def test_criterion_1_metric_reproduction():
    with criterion(1, "metric reproduction", 1.0):
        counts = ConfusionCounts(tp=140443, tn=3057227, fp=7787, fn=5807)
        report = metrics(counts)
        assert abs(report.accuracy - 0.9958) <= 5e-4
        assert abs(report.precision - 0.9475) <= 5e-4
        assert abs(report.recall - 0.9603) <= 5e-4
        assert abs(report.f1 - 0.9538) <= 5e-4
        # IoU over summed counts; a per-batch mean of the same data would
        # land near 0.9130, and the two must not be conflated
        assert abs(report.iou - 0.9117) <= 5e-4
        assert abs(report.iou - 0.9130) > 5e-4


def test_criterion_2_loss_gradients():
    with criterion(2, "loss correctness", 10.0):
        rng = np.random.default_rng(20260821)
        params = FocalParams()
        losses = (
            lambda pm, mask: bce_loss(pm, mask),
            lambda pm, mask: focal_loss(pm, mask, params),
            lambda pm, mask: dice_loss(pm, mask),
            lambda pm, mask: total_loss(pm, mask, params),
        )
        for _ in range(50):
            p = rng.uniform(0.02, 0.98, (16, 16))
            valid = np.ones((16, 16), dtype=bool)
            mask = BinaryMask(
                classes=(rng.random((16, 16)) < 0.4).astype(np.uint8), validity=valid
            )

            def rebuild(q):
                return ProbabilityMap(probs=np.clip(q, 0.0, 1.0), validity=valid)

            pm = rebuild(p)
            for loss in losses:
                value, grad = loss(pm, mask)
                fd = fd_gradient(lambda q: loss(rebuild(q), mask)[0], p, valid)
                rel = np.abs(grad - fd) / np.maximum(np.abs(grad) + np.abs(fd), 1e-12)
                assert rel.max() < 1e-5

            half_bce = 0.5 * bce_loss(pm, mask)[0]
            reduced = focal_loss(pm, mask, FocalParams(alpha=0.5, gamma=0.0))[0]
            assert abs(reduced - half_bce) <= 1e-12

            parts = (
                bce_loss(pm, mask)[0]
                + dice_loss(pm, mask)[0]
                + focal_loss(pm, mask, params)[0]
            )
            assert abs(total_loss(pm, mask, params)[0] - parts) <= 1e-12


def test_criterion_3_enhanced_lee():
    with criterion(3, "speckle filter", 10.0):
        rng = np.random.default_rng(31)
        params = LeeParams()
        for i in range(20):
            mean = float(rng.uniform(10.0, 300.0))
            data = rng.gamma(4.0, mean / 4.0, (32, 32))
            valid = np.ones((32, 32), dtype=bool)
            if i % 4 == 0:  # some grids carry nodata holes
                valid = rng.random((32, 32)) > 0.1
            out = enhanced_lee(make_grid(data, valid=valid), params)
            expected = enhanced_lee_oracle(data, valid, params)
            assert np.array_equal(out.data[valid], expected[valid])
            assert np.array_equal(out.validity, valid)

        flat = enhanced_lee(make_grid(np.full((20, 20), 5.0)), params)
        assert np.array_equal(flat.data, np.full((20, 20), 5.0))

        field = np.ones((15, 15), dtype=np.float64)
        field[7, 7] = 1000.0
        spiky = enhanced_lee(make_grid(field), LeeParams(window=7, looks=1.0))
        assert spiky.data[7, 7] == 1000.0

        clean = np.full((64, 64), 100.0)
        speckled = clean * rng.gamma(1.0, 1.0, clean.shape)
        filtered = enhanced_lee(make_grid(speckled), LeeParams(looks=1.0))
        assert filtered.data.var() < speckled.var()


def test_criterion_4_normalization(tmp_path):
    with criterion(4, "normalization", 5.0):
        rng = np.random.default_rng(41)

        vals = rng.normal(10.0, 4.0, (64, 64))
        out, _ = equalize(make_grid(vals))
        order = np.argsort(vals.ravel(), kind="stable")
        assert (np.diff(out.data.ravel().astype(int)[order]) >= 0).all()
        assert out.data.dtype == np.uint8
        assert out.scale == SCALE_UINT8
        assert out.data.min() >= 1 and out.data.max() <= 255

        holes = rng.random((32, 32)) > 0.2
        masked, _ = equalize(make_grid(rng.random((32, 32)), valid=holes))
        assert (masked.data[~holes] == 0).all()
        assert masked.nodata_value == 0
        path = tmp_path / "normalized.tif"
        save_raster(masked, path)
        reloaded = load_raster(path)
        assert reloaded.data.dtype == np.uint8
        assert np.array_equal(reloaded.data, masked.data)
        assert np.array_equal(reloaded.validity, holes)
        assert reloaded.nodata_value == 0

        two = np.where(rng.random((40, 40)) < 0.5, 3.0, 90.0)
        levels, _ = equalize(make_grid(two))
        assert set(np.unique(levels.data)) == {1, 255}

        ramp = (np.arange(65536, dtype=np.float64) / 65536.0).reshape(256, 256)
        flat, _ = equalize(make_grid(ramp))
        empirical = np.cumsum(np.bincount(flat.data.ravel(), minlength=256)) / 65536.0
        ideal = (np.arange(256) + 1) / 256.0
        assert np.abs(empirical - ideal).max() < 2.0 / 256.0


def test_criterion_5_lattice_padding():
    with criterion(5, "lattice padding", 5.0):
        rng = np.random.default_rng(51)
        for _ in range(100):
            h = int(rng.integers(1, 700))
            w = int(rng.integers(1, 700))
            data = rng.random((h, w)).astype(np.float32)
            valid = rng.random((h, w)) > 0.1
            grid = make_grid(data, valid=valid)
            padded = pad_to_lattice(grid)
            assert padded.height == -(-h // 256) * 256
            assert padded.width == -(-w // 256) * 256
            assert np.array_equal(padded.data[:h, :w], data)
            assert np.array_equal(padded.validity[:h, :w], valid)
            assert (padded.data[h:, :] == 0).all() and (padded.data[:, w:] == 0).all()
            assert not padded.validity[h:, :].any()
            assert not padded.validity[:, w:].any()
            again = pad_to_lattice(padded)
            assert again.height == padded.height and again.width == padded.width
            assert np.array_equal(again.data, padded.data)
            assert np.array_equal(again.validity, padded.validity)


def test_criterion_6_area_arithmetic():
    with criterion(6, "area arithmetic", 1.0):
        one = BinaryMask(
            classes=np.ones((1, 1), dtype=np.uint8),
            validity=np.ones((1, 1), dtype=bool),
            pixel_size_m=30.0,
        )
        assert mask_area(one) == 900.0

        classes = np.ones((55, 70), dtype=np.uint8)  # 3850 pixels
        tsho = BinaryMask(
            classes=classes,
            validity=np.ones(classes.shape, dtype=bool),
            pixel_size_m=20.0,
        )
        assert mask_area(tsho) == 1.54e6
        assert mask_area(tsho) / 1e6 == 1.54


def test_criterion_7_trend_recovery():
    with criterion(7, "trend recovery", 5.0):
        rng = np.random.default_rng(10)
        start = dt.datetime(2014, 1, 15, tzinfo=UTC)
        observations = []
        for k in range(132):  # 11 years, monthly
            when = dt.datetime(2014 + k // 12, k % 12 + 1, 15, tzinfo=UTC)
            t = (when - start).total_seconds() / (365.25 * 86400.0)
            area = (
                1.5e6
                + 8e3 * t
                + 5e4 * np.sin(2.0 * np.pi * (t - 0.33))
                + rng.normal(0.0, 2e4)
            )
            observations.append(
                AreaObservation.from_count(
                    lake="tsho",
                    acquired_at=when,
                    pixel_count=max(int(round(area / 400.0)), 0),
                    pixel_size_m=20.0,
                    source_granule=f"G{k:04d}",
                )
            )
        series = AreaSeries(lake="tsho", observations=tuple(observations))
        maxima = summer_maxima(series)
        assert len(maxima) == 11
        trend = linear_trend(maxima)
        assert abs(trend.slope_m2_per_year - 8e3) / 8e3 < 0.10


def _write_pipeline_config(tmp_path, search_url):
    cfg = {
        "search_url": search_url,
        "paths": {
            "cache": "data/cache",
            "artifacts": "data/artifacts",
            "series": "data/series",
            "jobs": "data/jobs",
        },
        "lakes": [
            {
                "name": "tsho",
                "wkt": square_wkt(502000.0, 3098000.0, 600.0),
                "center_lat": 3098000.0,
                "center_lon": 502000.0,
                "altitude_m": 4580.0,
            }
        ],
    }
    path = tmp_path / "lakewatch.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


def _cli_json(capsys, *argv) -> dict:
    assert main(list(argv)) == 0
    return json.loads(capsys.readouterr().out)


def test_criterion_8_end_to_end(tmp_path, capsys):
    with criterion(8, "end-to-end pipeline", 60.0):
        rng = np.random.default_rng(81)
        with MockProvider() as provider:
            for gid, days in (("G0001", 3.0), ("G0002", 6.0), ("G0003", 9.0)):
                payload = build_granule_payload(tmp_path, rng, name=f"{gid}.tif")
                provider.add_granule(
                    make_granule(gid, days=days, url=provider.download_url(gid)),
                    payload,
                )
            cfg_path = _write_pipeline_config(tmp_path, provider.base_url)

            summary = _cli_json(capsys, "ingest-once", "--config", str(cfg_path))
            assert summary["discovered"] == 3
            assert summary["published"] == 3

            config = load_config(cfg_path)
            csv_text = (config.series_dir / "tsho.csv").read_text(encoding="utf-8")
            on_disk = series_from_csv("tsho", csv_text)
            newest = on_disk.observations[-1]
            assert newest.source_granule == "G0003"

            with TestClient(create_app(config)) as client:
                resp = client.get("/images/tsho/latest")
                assert resp.status_code == 200
                assert resp.content.startswith(PNG_MAGIC)
                assert resp.headers["x-granule-id"] == "G0003"
                assert resp.headers["x-acquired-at"] == newest.acquired_at.isoformat()
                assert resp.headers["x-area-m2"] == str(newest.area_m2)

                rows = client.get("/lakes/tsho/areas").json()
                assert len(rows) == 3
                assert [r["granule_id"] for r in rows] == ["G0001", "G0002", "G0003"]
                for row, obs in zip(rows, on_disk.observations):
                    assert row["date"] == obs.acquired_at.isoformat()
                    assert row["area_m2"] == obs.area_m2

            before = len(JobStore(config.jobs_path).load())
            again = _cli_json(capsys, "ingest-once", "--config", str(cfg_path))
            assert again["discovered"] == 0
            assert again["executed"] == 0
            assert len(JobStore(config.jobs_path).load()) == before


CRASH_SCRIPT = """\
import os
import sys

from lakewatch.config import load_config
from lakewatch.ingestion import IngestionEngine

engine = IngestionEngine(load_config(sys.argv[1]))
engine.after_record_hook = lambda: os._exit(42)
engine.poll_once()
"""


def test_criterion_9_fault_injection(tmp_path, capsys):
    with criterion(9, "fault injection", 30.0):
        rng = np.random.default_rng(91)
        with MockProvider() as provider:
            payload = build_granule_payload(tmp_path, rng)
            provider.add_granule(
                make_granule("G0001", days=3.0, url=provider.download_url("G0001")),
                payload,
            )
            cfg_path = _write_pipeline_config(tmp_path, provider.base_url)
            config = load_config(cfg_path)

            script = tmp_path / "crash.py"
            script.write_text(CRASH_SCRIPT, encoding="utf-8")
            proc = subprocess.run(
                [sys.executable, str(script), str(cfg_path)],
                capture_output=True,
                timeout=60,
            )
            # the process must die after the job record is durable but
            # before the high-water mark advances
            assert proc.returncode == 42, proc.stderr.decode()
            assert len(JobStore(config.jobs_path).load()) == 1
            assert not config.marks_path.exists()

            summary = _cli_json(capsys, "ingest-once", "--config", str(cfg_path))
            assert summary["discovered"] == 0  # the crashed poll's record survives
            assert summary["published"] == 1

            jobs = JobStore(config.jobs_path).load()
            assert [job.state for job in jobs.values()] == [PUBLISHED]
            assert config.marks_path.exists()

            csv_text = (config.series_dir / "tsho.csv").read_text(encoding="utf-8")
            assert len(series_from_csv("tsho", csv_text)) == 1

            final = _cli_json(capsys, "ingest-once", "--config", str(cfg_path))
            assert final == {"discovered": 0, "executed": 0, "published": 0, "failed": 0}
            assert len(series_from_csv(
                "tsho", (config.series_dir / "tsho.csv").read_text(encoding="utf-8")
            )) == 1
