import hashlib
import json
import os

import numpy as np
import pytest

from conftest import grid_from
from settlemap.raster import PolygonSet, load_polygons, rasterize_polygons
from settlemap.sampling import NegativeGridRegistry
from settlemap.synth import block_polygon, generate_fixture, municipality_names


def tree_digest(root):
    digest = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            digest.update(os.path.relpath(path, root).encode())
            digest.update(open(path, "rb").read())
    return digest.hexdigest()


class TestBlockPolygon:
    @pytest.mark.parametrize("width,count", [(1, 1), (5, 5), (5, 12), (8, 64), (10, 41), (3, 100)])
    def test_covers_exact_count(self, width, count):
        grid = grid_from(np.zeros((60, 60), dtype=np.float32))
        ring = block_polygon(4, 7, width, count)
        mask = rasterize_polygons(PolygonSet(polygons=([ring],)), grid)
        assert int(mask.sum()) == count

    def test_pixels_start_at_given_origin(self):
        grid = grid_from(np.zeros((10, 10), dtype=np.float32))
        ring = block_polygon(2, 3, 4, 6)
        mask = rasterize_polygons(PolygonSet(polygons=([ring],)), grid)
        assert mask[2, 3] == 1 and mask[2, 6] == 1 and mask[3, 3] == 1
        assert mask[2, 7] == 0 and mask[3, 5] == 0


class TestFixture:
    def test_deterministic_from_seed(self, tmp_path):
        generate_fixture(tmp_path / "a", seed=5, size=150, municipalities=1,
                         settlements=2, scenes_per_epoch=1)
        generate_fixture(tmp_path / "b", seed=5, size=150, municipalities=1,
                         settlements=2, scenes_per_epoch=1)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
        generate_fixture(tmp_path / "c", seed=6, size=150, municipalities=1,
                         settlements=2, scenes_per_epoch=1)
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")

    def test_polygons_rasterize_to_at_least_one_pixel(self, tmp_path):
        generate_fixture(tmp_path / "f", seed=1, size=150, municipalities=2, settlements=3)
        truth = json.loads((tmp_path / "f" / "truth.json").read_text())
        for muni in municipality_names(2):
            polys = load_polygons(tmp_path / "f" / "polygons" / f"{muni}.geojson")
            grid = grid_from(np.zeros((150, 150), dtype=np.float32))
            counts = {t["settlement_id"]: t["pixels"] for t in truth[muni]}
            assert len(polys) == 3
            for label, rings in zip(polys.labels, polys.polygons):
                mask = rasterize_polygons(PolygonSet(polygons=(rings,)), grid)
                assert int(mask.sum()) == counts[label] >= 1

    def test_registry_meets_plan_minimums(self, tmp_path):
        generate_fixture(tmp_path / "f", seed=2, size=300, municipalities=1, settlements=5)
        registry = NegativeGridRegistry.from_json(tmp_path / "f" / "registry.json")
        config = json.loads((tmp_path / "f" / "config.json").read_text())
        for muni in registry.municipalities():
            grids = registry.for_municipality(muni)
            formal = [g for g in grids if g.grid_class == "formal"]
            assert len(grids) >= config["sampling"]["min_grids"] >= 30
            assert len(formal) >= config["sampling"]["min_urban_grids"] >= 3

    def test_settlement_cells_not_registered(self, tmp_path):
        generate_fixture(tmp_path / "f", seed=3, size=150, municipalities=1, settlements=2)
        registry = NegativeGridRegistry.from_json(tmp_path / "f" / "registry.json")
        muni = municipality_names(1)[0]
        polys = load_polygons(tmp_path / "f" / "polygons" / f"{muni}.geojson")
        grid = grid_from(np.zeros((150, 150), dtype=np.float32))
        mask = rasterize_polygons(polys, grid).astype(bool)
        for g in registry.for_municipality(muni):
            block = mask[g.row0 : g.row0 + g.rows, g.col0 : g.col0 + g.cols]
            assert not block.any()

    def test_size_must_be_reasonable(self, tmp_path):
        with pytest.raises(ValueError):
            generate_fixture(tmp_path / "f", size=80)

    def test_municipality_names_extend_past_nine(self):
        names = municipality_names(11)
        assert names[0] == "Arauca" and names[8] == "Uribia"
        assert names[9] == "muni_09" and len(set(names)) == 11
