"""Segmentation backends, binarization, component filtering."""

import numpy as np
import pytest

from lakewatch.errors import (
    BackendUnavailableError,
    EmptyRasterError,
    ScaleMismatchError,
    SegmentationError,
    ShapeMismatchError,
)
from lakewatch.raster import SCALE_UINT8
from lakewatch.segmentation import (
    BinaryMask,
    ModelBackend,
    OtsuBackend,
    ProbabilityMap,
    binarize,
    get_backend,
    largest_component,
    run_model_backend,
    threshold_segment,
)

from conftest import make_grid


def uint8_grid(data, valid=None, **kw):
    return make_grid(np.asarray(data, dtype=np.uint8), valid=valid, scale=SCALE_UINT8, **kw)


def make_pm(probs, valid=None):
    probs = np.asarray(probs, dtype=np.float64)
    if valid is None:
        valid = np.ones(probs.shape, dtype=bool)
    return ProbabilityMap(probs=probs, validity=valid)


def make_mask(classes, valid=None):
    classes = np.asarray(classes, dtype=np.uint8)
    if valid is None:
        valid = np.ones(classes.shape, dtype=bool)
    return BinaryMask(classes=classes, validity=valid)


class TestTypes:
    def test_probability_range_enforced(self):
        with pytest.raises(SegmentationError, match=r"\[0, 1\]"):
            make_pm(np.full((4, 4), 1.5))

    def test_probability_shape_enforced(self):
        with pytest.raises(ShapeMismatchError):
            ProbabilityMap(probs=np.zeros((4, 4)), validity=np.ones((4, 5), dtype=bool))

    def test_mask_classes_enforced(self):
        with pytest.raises(SegmentationError, match="0 or 1"):
            make_mask(np.full((4, 4), 7))

    def test_mask_grid_roundtrip(self):
        classes = np.zeros((8, 8), dtype=np.uint8)
        classes[2:5, 2:5] = 1
        valid = np.ones((8, 8), dtype=bool)
        valid[0, 0] = False
        m = BinaryMask(classes=classes, validity=valid, pixel_size_m=20.0)
        back = BinaryMask.from_grid(m.to_grid())
        np.testing.assert_array_equal(back.classes[valid], m.classes[valid])
        np.testing.assert_array_equal(back.validity, valid)


class TestThresholdSegment:
    def bimodal(self, rng):
        data = np.clip(rng.normal(180.0, 10.0, (64, 64)), 0, 255)
        lake = np.zeros((64, 64), dtype=bool)
        lake[20:44, 20:44] = True
        data[lake] = np.clip(rng.normal(20.0, 3.0, lake.sum()), 0, 255)
        return data.astype(np.uint8), lake

    def test_bimodal_separation(self, rng):
        data, lake = self.bimodal(rng)
        pm = threshold_segment(uint8_grid(data))
        assert (pm.probs[lake] > 0.99).all()
        assert (pm.probs[~lake] < 0.01).all()

    def test_constant_image_low_confidence(self):
        pm = threshold_segment(uint8_grid(np.full((16, 16), 77)))
        assert pm.flags == ("low-confidence",)
        assert (pm.probs == 0.5).all()

    def test_inverted_image_misclassifies_by_design(self, rng):
        data, lake = self.bimodal(rng)
        pm = threshold_segment(uint8_grid(255 - data))
        # bright lake scores as background under the dark-water assumption
        assert (pm.probs[lake] < 0.01).all()

    def test_rejects_unnormalized_input(self):
        g = make_grid(np.ones((8, 8)))
        with pytest.raises(ScaleMismatchError, match="8-bit"):
            threshold_segment(g)

    def test_all_invalid_rejected(self):
        g = uint8_grid(np.ones((8, 8)), valid=np.zeros((8, 8), dtype=bool))
        with pytest.raises(EmptyRasterError):
            threshold_segment(g)

    def test_invalid_pixels_zero_probability(self, rng):
        data, _ = self.bimodal(rng)
        valid = np.ones((64, 64), dtype=bool)
        valid[:4] = False
        pm = threshold_segment(uint8_grid(data, valid=valid))
        assert (pm.probs[~valid] == 0.0).all()
        np.testing.assert_array_equal(pm.validity, valid)


class TestBinarize:
    def test_all_above(self):
        m = binarize(make_pm(np.full((4, 4), 0.7)))
        assert (m.classes == 1).all()

    def test_tie_is_water(self):
        m = binarize(make_pm(np.full((4, 4), 0.5)), threshold=0.5)
        assert (m.classes == 1).all()

    def test_matches_pixel_loop(self, rng):
        probs = rng.random((16, 16))
        valid = rng.random((16, 16)) > 0.2
        m = binarize(make_pm(probs, valid), threshold=0.4)
        for i in range(16):
            for j in range(16):
                expected = 1 if (probs[i, j] >= 0.4 and valid[i, j]) else 0
                assert m.classes[i, j] == expected

    def test_monotone_in_threshold(self, rng):
        pm = make_pm(rng.random((32, 32)))
        lo = binarize(pm, threshold=0.3)
        hi = binarize(pm, threshold=0.7)
        assert not ((hi.classes == 1) & (lo.classes == 0)).any()

    def test_invalid_pixels_background(self, rng):
        valid = np.zeros((4, 4), dtype=bool)
        valid[0, 0] = True
        m = binarize(make_pm(np.full((4, 4), 0.9), valid))
        assert m.classes[0, 0] == 1
        assert (m.classes[~valid] == 0).all()

    def test_rejects_degenerate_threshold(self):
        pm = make_pm(np.full((2, 2), 0.5))
        for t in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(SegmentationError, match="threshold"):
                binarize(pm, threshold=t)


class TestLargestComponent:
    def test_two_blobs(self):
        classes = np.zeros((20, 20), dtype=np.uint8)
        classes[1:11, 1:11] = 1  # 100 px
        classes[15:16, 15:20] = 1  # 5 px
        out = largest_component(make_mask(classes))
        assert out.water_count() == 100
        assert not out.classes[15:16, 15:20].any()

    def test_empty_mask(self):
        out = largest_component(make_mask(np.zeros((8, 8))))
        assert out.water_count() == 0

    def test_single_blob_unchanged(self):
        classes = np.zeros((10, 10), dtype=np.uint8)
        classes[3:6, 3:6] = 1
        out = largest_component(make_mask(classes))
        np.testing.assert_array_equal(out.classes, classes)

    def test_tie_breaks_to_earliest_row_major(self):
        classes = np.zeros((10, 10), dtype=np.uint8)
        classes[8, 0:3] = 1  # later in scan order
        classes[0, 7:10] = 1  # earlier
        out = largest_component(make_mask(classes))
        assert out.classes[0, 7:10].all()
        assert not out.classes[8, 0:3].any()

    def test_diagonal_connectivity(self):
        classes = np.zeros((6, 6), dtype=np.uint8)
        classes[0, 0] = classes[1, 1] = classes[2, 2] = 1
        classes[5, 0] = 1
        eight = largest_component(make_mask(classes), connectivity=8)
        assert eight.water_count() == 3
        four = largest_component(make_mask(classes), connectivity=4)
        assert four.water_count() == 1

    def test_output_subset_of_input(self, rng):
        classes = (rng.random((40, 40)) > 0.55).astype(np.uint8)
        out = largest_component(make_mask(classes))
        assert not ((out.classes == 1) & (classes == 0)).any()

    def test_rejects_bad_connectivity(self):
        with pytest.raises(SegmentationError, match="connectivity"):
            largest_component(make_mask(np.zeros((4, 4))), connectivity=6)


@pytest.fixture(scope="module")
def half_model(tmp_path_factory):
    torch = pytest.importorskip("torch")

    class Half(torch.nn.Module):
        def forward(self, x):
            return torch.full_like(x, 0.5)

    path = tmp_path_factory.mktemp("models") / "half.pt"
    torch.jit.script(Half()).save(str(path))
    return path


@pytest.fixture(scope="module")
def invert_model(tmp_path_factory):
    torch = pytest.importorskip("torch")

    class Invert(torch.nn.Module):
        def forward(self, x):
            return 1.0 - x

    path = tmp_path_factory.mktemp("models") / "invert.pt"
    torch.jit.script(Invert()).save(str(path))
    return path


class TestModelBackend:
    def test_constant_stub_model(self, half_model):
        g = uint8_grid(np.full((256, 256), 100))
        pm = run_model_backend(g, half_model)
        assert (pm.probs == 0.5).all()

    def test_two_tile_stitching(self, invert_model, rng):
        data = rng.integers(1, 255, (256, 512), dtype=np.uint8)
        g = uint8_grid(data)
        pm = run_model_backend(g, invert_model)
        expected = 1.0 - data.astype(np.float64) / 255.0
        np.testing.assert_allclose(pm.probs, expected, atol=1e-6)

    def test_invalid_pixels_zeroed(self, half_model):
        valid = np.ones((256, 256), dtype=bool)
        valid[:10] = False
        g = uint8_grid(np.full((256, 256), 100), valid=valid)
        pm = run_model_backend(g, half_model)
        assert (pm.probs[~valid] == 0.0).all()
        np.testing.assert_array_equal(pm.validity, valid)

    def test_missing_model(self, tmp_path):
        g = uint8_grid(np.full((256, 256), 100))
        with pytest.raises(BackendUnavailableError, match="backend unavailable"):
            run_model_backend(g, tmp_path / "nope.pt")

    def test_garbage_model_file(self, tmp_path):
        path = tmp_path / "bad.pt"
        path.write_bytes(b"not a model")
        g = uint8_grid(np.full((256, 256), 100))
        with pytest.raises(BackendUnavailableError, match="backend unavailable"):
            run_model_backend(g, path)

    def test_off_lattice_input_rejected(self, half_model):
        g = uint8_grid(np.full((100, 100), 100))
        with pytest.raises(SegmentationError, match="lattice"):
            run_model_backend(g, half_model)


class TestGetBackend:
    def test_otsu(self):
        b = get_backend("otsu")
        assert isinstance(b, OtsuBackend)
        assert b.identifier == "otsu"

    def test_model_needs_path(self):
        with pytest.raises(BackendUnavailableError):
            get_backend("model")

    def test_model_with_path(self, tmp_path):
        b = get_backend("model", tmp_path / "m.pt")
        assert isinstance(b, ModelBackend)

    def test_unknown(self):
        with pytest.raises(BackendUnavailableError, match="unknown backend"):
            get_backend("kmeans")
