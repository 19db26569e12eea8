import datetime
import json

import numpy as np
import pytest

from conftest import grid_from
from oracles import median_composite_oracle, median_oracle_pixel
from settlemap.composite import (
    BAND_NAMES,
    EPOCHS,
    Scene,
    load_scene_manifest,
    median_composite,
    resample_to_10m,
)
from settlemap.raster import write_raster

NODATA = -9999.0


def make_scene(date, band_arrays, mask, pixel_sizes=None):
    """band_arrays: dict band -> 2-D array (10 m unless pixel_sizes says else)."""
    pixel_sizes = pixel_sizes or {}
    bands = {
        name: grid_from(arr, pixel_size=pixel_sizes.get(name, 10.0), band_names=(name,))
        for name, arr in band_arrays.items()
    }
    return Scene(acquired=date, bands=bands, valid_mask=grid_from(mask, band_names=("valid",)))


def full_scene(date, value, shape=(3, 3), mask=None):
    arrays = {name: np.full(shape, value, dtype=np.float32) for name in BAND_NAMES}
    if mask is None:
        mask = np.ones(shape, dtype=np.float32)
    return make_scene(date, arrays, mask)


class TestResample:
    def test_identity_at_10m(self):
        band = grid_from(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert resample_to_10m(band) is band

    def test_constant_replication_from_20m(self):
        band = grid_from(np.array([[7.0]], dtype=np.float32), pixel_size=20.0)
        out = resample_to_10m(band)
        assert out.values.shape == (1, 2, 2)
        assert (out.values == 7.0).all()
        assert out.pixel_size == 10.0
        assert out.geotransform[0] == band.geotransform[0]
        assert out.geotransform[3] == band.geotransform[3]

    def test_index_mapping_from_20m(self):
        src = np.arange(4, dtype=np.float32).reshape(2, 2)
        out = resample_to_10m(grid_from(src, pixel_size=20.0))
        for i in range(4):
            for j in range(4):
                assert out.values[0, i, j] == src[i // 2, j // 2]

    def test_factor_six_from_60m(self):
        src = np.arange(4, dtype=np.float32).reshape(2, 2)
        out = resample_to_10m(grid_from(src, pixel_size=60.0))
        assert out.values.shape == (1, 12, 12)
        for i in range(12):
            for j in range(12):
                assert out.values[0, i, j] == src[i // 6, j // 6]

    def test_unsupported_resolution(self):
        with pytest.raises(ValueError):
            resample_to_10m(grid_from(np.zeros((2, 2), dtype=np.float32), pixel_size=30.0))


class TestMedianComposite:
    def test_odd_count_median(self):
        scenes = [
            full_scene(datetime.date(2015, 5, 1), 0.2),
            full_scene(datetime.date(2015, 8, 1), 0.8),
            full_scene(datetime.date(2016, 5, 1), 0.4),
        ]
        comp = median_composite(scenes, "2015-2016")
        assert (comp.bands.values == np.float32(0.4)).all()

    def test_even_count_rule_matches_sort_oracle(self):
        scenes = [
            full_scene(datetime.date(2017, 5, 1), 0.2),
            full_scene(datetime.date(2018, 5, 1), 0.4),
        ]
        comp = median_composite(scenes, "2017-2018")
        expected = median_oracle_pixel([np.float32(0.2), np.float32(0.4)], NODATA)
        assert (comp.bands.values == expected).all()
        assert expected == np.float32(0.3)

    def test_all_masked_yields_nodata(self):
        shape = (3, 3)
        scenes = [
            full_scene(datetime.date(2019, 5, 1), 0.5, shape, mask=np.zeros(shape, dtype=np.float32)),
        ]
        comp = median_composite(scenes, "2019-2020")
        assert (comp.bands.values == np.float32(NODATA)).all()

    def test_no_scene_in_epoch(self):
        scenes = [full_scene(datetime.date(2015, 5, 1), 0.5)]
        with pytest.raises(ValueError):
            median_composite(scenes, "2019-2020")

    def test_extent_mismatch(self):
        scenes = [
            full_scene(datetime.date(2015, 5, 1), 0.5, shape=(3, 3)),
            full_scene(datetime.date(2015, 6, 1), 0.5, shape=(4, 4)),
        ]
        with pytest.raises(ValueError):
            median_composite(scenes, "2015-2016")

    def test_missing_band_everywhere_is_nodata(self):
        shape = (2, 2)
        arrays = {n: np.full(shape, 0.3, dtype=np.float32) for n in BAND_NAMES if n != "b9"}
        scene = make_scene(datetime.date(2015, 5, 1), arrays, np.ones(shape, dtype=np.float32))
        comp = median_composite([scene], "2015-2016")
        assert (comp.bands.band("b9") == np.float32(NODATA)).all()
        assert (comp.bands.band("b8") == np.float32(0.3)).all()

    def test_scene_order_invariance(self):
        rng = np.random.default_rng(5)
        scenes = [
            full_scene(datetime.date(2015, 3 + i, 1), rng.random(), (4, 4),
                       mask=(rng.random((4, 4)) > 0.3).astype(np.float32))
            for i in range(5)
        ]
        a = median_composite(scenes, "2015-2016")
        b = median_composite(scenes[::-1], "2015-2016")
        assert a.bands == b.bands

    def test_monotone_in_single_value(self):
        shape = (2, 2)
        vals = [0.3, 0.6, 0.9]
        scenes = [full_scene(datetime.date(2015, 4 + i, 1), v, shape) for i, v in enumerate(vals)]
        base = median_composite(scenes, "2015-2016").bands.values.copy()
        scenes[0] = full_scene(datetime.date(2015, 4, 1), 0.7, shape)  # raise 0.3 -> 0.7
        raised = median_composite(scenes, "2015-2016").bands.values
        assert (raised >= base).all()

    def test_random_stacks_match_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            n_scenes = int(rng.integers(1, 8))
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            stack = rng.random((n_scenes, h, w)).astype(np.float32)
            masks = (rng.random((n_scenes, h, w)) > 0.35).astype(np.float32)
            scenes = []
            for s in range(n_scenes):
                arrays = {name: stack[s] for name in BAND_NAMES}
                scenes.append(make_scene(datetime.date(2015, 1 + s % 12, 1), arrays, masks[s]))
            comp = median_composite(scenes, "2015-2016")
            expected = median_composite_oracle(stack, masks, NODATA)
            for name in BAND_NAMES:
                assert np.array_equal(comp.bands.band(name), expected)


class TestManifest:
    def test_load_applies_scale_and_resolves_paths(self, tmp_path):
        band_dir = tmp_path / "scenes"
        band_dir.mkdir()
        band = grid_from(np.full((2, 2), 4000.0, dtype=np.float32), band_names=("b4",))
        mask = grid_from(np.ones((2, 2), dtype=np.float32), band_names=("valid",))
        write_raster(band, band_dir / "b4.bsqr")
        write_raster(mask, band_dir / "mask.bsqr")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps([
            {"date": "2015-06-01", "band_paths": {"b4": "scenes/b4.bsqr"},
             "mask_path": "scenes/mask.bsqr"}
        ]))
        scenes = load_scene_manifest(manifest, scale=1e-4)
        assert scenes[0].acquired == datetime.date(2015, 6, 1)
        assert np.allclose(scenes[0].bands["b4"].values, 0.4)
        assert (scenes[0].valid_mask.values == 1).all()

    def test_nodata_is_not_scaled(self, tmp_path):
        band = grid_from(np.array([[-9999.0, 2000.0]], dtype=np.float32), band_names=("b4",))
        write_raster(band, tmp_path / "b4.bsqr")
        mask = grid_from(np.ones((1, 2), dtype=np.float32), band_names=("valid",))
        write_raster(mask, tmp_path / "mask.bsqr")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps([
            {"date": "2016-01-01", "band_paths": {"b4": "b4.bsqr"}, "mask_path": "mask.bsqr"}
        ]))
        scenes = load_scene_manifest(manifest, scale=1e-4)
        vals = scenes[0].bands["b4"].values[0]
        assert vals[0, 0] == np.float32(-9999.0)
        assert vals[0, 1] == np.float32(np.float32(2000.0) * np.float32(1e-4))

    def test_epoch_labels(self):
        assert EPOCHS == ("2015-2016", "2017-2018", "2019-2020")
