"""Synthetic multi-municipality fixtures for tests and demos.

Each municipality gets a vegetation background, a stable formal city core,
one water body, and three kinds of temporal change: planted informal
settlements (vegetation early, bright-SWIR/low-NIR shack spectra late),
vegetation-to-bare-land conversion patches, and formal-settlement growth.
The latter two are confounders: brightening without an informal settlement.

Everything derives from one seed and is byte-identical across runs. Scene
values are written as integer-style digital numbers (reflectance x 10000),
so pipeline configs pair them with reflectance_scale = 1e-4.
"""

import json
import os
import zlib

import numpy as np

from .composite import BAND_NAMES, EPOCHS
from .raster import PolygonSet, RasterGrid, rasterize_polygons, save_polygons, write_raster

MUNICIPALITY_NAMES = (
    "Arauca", "Arauquita", "Bogota", "Cucuta", "Maicao",
    "Riohacha", "Soacha", "Tibu", "Uribia",
)

CELL_PX = 50  # 500 m blocks at 10 m pixels

# mean reflectance per land cover class
CLASS_SPECTRA = {
    "vegetation": {
        "b1": 0.04, "b2": 0.05, "b3": 0.08, "b4": 0.06, "b5": 0.12, "b6": 0.25,
        "b7": 0.30, "b8": 0.32, "b8A": 0.34, "b9": 0.10, "b11": 0.16, "b12": 0.08,
    },
    "water": {
        "b1": 0.08, "b2": 0.06, "b3": 0.05, "b4": 0.03, "b5": 0.02, "b6": 0.02,
        "b7": 0.015, "b8": 0.01, "b8A": 0.01, "b9": 0.03, "b11": 0.01, "b12": 0.005,
    },
    "bare": {
        "b1": 0.10, "b2": 0.14, "b3": 0.18, "b4": 0.24, "b5": 0.27, "b6": 0.29,
        "b7": 0.31, "b8": 0.33, "b8A": 0.34, "b9": 0.12, "b11": 0.42, "b12": 0.35,
    },
    "formal": {
        "b1": 0.11, "b2": 0.14, "b3": 0.16, "b4": 0.18, "b5": 0.20, "b6": 0.22,
        "b7": 0.24, "b8": 0.26, "b8A": 0.27, "b9": 0.10, "b11": 0.30, "b12": 0.27,
    },
    "informal": {
        "b1": 0.10, "b2": 0.13, "b3": 0.17, "b4": 0.22, "b5": 0.24, "b6": 0.26,
        "b7": 0.27, "b8": 0.28, "b8A": 0.29, "b9": 0.11, "b11": 0.45, "b12": 0.41,
    },
}
CLASS_IDS = {name: i for i, name in enumerate(CLASS_SPECTRA)}

BAND_NATIVE_M = {
    "b2": 10, "b3": 10, "b4": 10, "b8": 10,
    "b5": 20, "b6": 20, "b7": 20, "b8A": 20, "b11": 20, "b12": 20,
    "b1": 60, "b9": 60,
}


def municipality_names(n):
    names = list(MUNICIPALITY_NAMES[:n])
    for i in range(len(names), n):
        names.append(f"muni_{i:02d}")
    return names


def block_polygon(row0, col0, width, count, pixel_size=10.0):
    """A rectilinear ring covering exactly `count` pixel centers, laid out in
    rows of `width` starting at pixel (row0, col0). Returns one closed ring
    in CRS units for a raster with origin (0, 0) and north-up geotransform."""
    if count < 1 or width < 1:
        raise ValueError("count and width must be positive")
    full_rows, rem = divmod(count, width)

    def pt(r, c):
        return (c * pixel_size, -r * pixel_size)

    if full_rows == 0:
        corners = [(row0, col0), (row0, col0 + rem), (row0 + 1, col0 + rem), (row0 + 1, col0)]
    elif rem == 0:
        corners = [
            (row0, col0),
            (row0, col0 + width),
            (row0 + full_rows, col0 + width),
            (row0 + full_rows, col0),
        ]
    else:
        corners = [
            (row0, col0),
            (row0, col0 + width),
            (row0 + full_rows, col0 + width),
            (row0 + full_rows, col0 + rem),
            (row0 + full_rows + 1, col0 + rem),
            (row0 + full_rows + 1, col0),
        ]
    ring = [pt(r, c) for r, c in corners]
    ring.append(ring[0])
    return ring


def _municipality_rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _native_resolution(band, size):
    native = BAND_NATIVE_M[band]
    if native == 60 and size % 6 != 0:
        native = 20
    if native == 20 and size % 2 != 0:
        native = 10
    return native


def _scene_band(class_map, band, muni_gain, rng, size):
    """Reflectance raster for one band at its native resolution, DN-scaled."""
    native = _native_resolution(band, size)
    factor = native // 10
    lut = np.array([CLASS_SPECTRA[name][band] for name in CLASS_SPECTRA])
    refl = lut[class_map]
    if factor > 1:
        refl = refl[::factor, ::factor]
    gain = muni_gain * rng.normal(1.0, 0.02)
    refl = refl * gain + rng.normal(0.0, 0.02, size=refl.shape)
    dn = np.clip(refl, 0.0001, 0.9999) * 10000.0
    gt = (0.0, float(native), 0.0, 0.0, 0.0, -float(native))
    return RasterGrid(values=dn.astype(np.float32)[np.newaxis], band_names=(band,),
                      geotransform=gt, crs="EPSG:32618", nodata=-9999.0)


def _cloud_mask(rng, size):
    mask = np.ones((size, size), dtype=np.float32)
    for _ in range(int(rng.integers(2, 5))):
        h = int(rng.integers(15, 40))
        w = int(rng.integers(15, 40))
        r = int(rng.integers(0, size - h))
        c = int(rng.integers(0, size - w))
        mask[r : r + h, c : c + w] = 0.0
    return RasterGrid(values=mask[np.newaxis], band_names=("valid",),
                      geotransform=(0.0, 10.0, 0.0, 0.0, 0.0, -10.0),
                      crs="EPSG:32618", nodata=-9999.0)


def _plan_municipality(rng, size, n_settlements):
    """Assign full grid cells to land uses; returns the layout dictionary.

    The formal core takes a 2x2 block of cells (1x2 on very small rasters);
    confounders and the water body fill leftover cells in a fixed priority
    order, so small fixtures shrink gracefully while big ones get everything.
    """
    n_side = size // CELL_PX
    if n_side < 2:
        raise ValueError(f"size {size} px holds no two full {CELL_PX} px cells")
    core_rows = 2 if n_side >= 4 else 1
    core_r = int(rng.integers(0, n_side - core_rows + 1))
    core_c = int(rng.integers(0, n_side - 1))
    core = {(core_r + dr, core_c + dc) for dr in range(core_rows) for dc in (0, 1)}
    free = [
        (r, c) for r in range(n_side) for c in range(n_side) if (r, c) not in core
    ]
    order = rng.permutation(len(free))
    free = [free[i] for i in order]
    if len(free) < n_settlements:
        raise ValueError(
            f"size {size} leaves {len(free)} free cells, cannot plant {n_settlements} settlements"
        )
    settlement_cells = [free.pop() for _ in range(n_settlements)]

    budget = len(free)
    n_growth = min(budget, 1) + (1 if budget >= 6 else 0)
    budget -= n_growth
    n_bare = min(budget, 2) + (1 if budget >= 5 else 0)
    budget -= n_bare
    has_water = budget >= 1
    layout = {
        "core": core,
        "growth": [(free.pop(), int(rng.integers(2, 4))) for _ in range(n_growth)],
        "bare": [(free.pop(), int(rng.integers(2, 4))) for _ in range(n_bare)],
        "water": free.pop() if has_water else None,
        "settlement_cells": settlement_cells,
        "n_side": n_side,
    }
    return layout


def _rect_in_cell(cell, rng, min_side=20, max_side=40):
    h = int(rng.integers(min_side, max_side + 1))
    w = int(rng.integers(min_side, max_side + 1))
    rr = cell[0] * CELL_PX + int(rng.integers(2, CELL_PX - h - 1))
    cc = cell[1] * CELL_PX + int(rng.integers(2, CELL_PX - w - 1))
    return rr, cc, h, w


def _build_municipality(name, seed, size, n_settlements, scenes_per_epoch, dirs):
    rng = _municipality_rng(seed, name)
    layout = _plan_municipality(rng, size, n_settlements)
    gt10 = (0.0, 10.0, 0.0, 0.0, 0.0, -10.0)
    grid10 = RasterGrid(values=np.zeros((1, size, size), dtype=np.float32),
                        band_names=("ref",), geotransform=gt10, crs="EPSG:32618")

    # epoch state 1..3: class id maps
    base = np.full((size, size), CLASS_IDS["vegetation"], dtype=np.int64)
    if layout["water"] is not None:
        wr, wc = layout["water"]
        yy, xx = np.mgrid[0:CELL_PX, 0:CELL_PX]
        circle = (yy - CELL_PX / 2) ** 2 + (xx - CELL_PX / 2) ** 2 <= 18 ** 2
        base[wr * CELL_PX : (wr + 1) * CELL_PX, wc * CELL_PX : (wc + 1) * CELL_PX][circle] = (
            CLASS_IDS["water"]
        )
    for r, c in layout["core"]:
        base[
            r * CELL_PX + 3 : (r + 1) * CELL_PX - 3, c * CELL_PX + 3 : (c + 1) * CELL_PX - 3
        ] = CLASS_IDS["formal"]

    epoch_maps = [base.copy(), base.copy(), base.copy()]
    for kind, class_id in (("growth", CLASS_IDS["formal"]), ("bare", CLASS_IDS["bare"])):
        for cell, emergence in layout[kind]:
            rr, cc, h, w = _rect_in_cell(cell, rng)
            for ei in range(emergence - 1, 3):
                epoch_maps[ei][rr : rr + h, cc : cc + w] = class_id

    # planted settlements: exact-count rectilinear polygons inside their cells
    polygons, labels, truth = [], [], []
    for si, cell in enumerate(layout["settlement_cells"]):
        count = int(rng.integers(40, 121))
        width = int(rng.integers(8, 13))
        rows_needed = -(-count // width) + 1
        r_off = int(rng.integers(2, CELL_PX - rows_needed - 2))
        c_off = int(rng.integers(2, CELL_PX - width - 2))
        row0 = cell[0] * CELL_PX + r_off
        col0 = cell[1] * CELL_PX + c_off
        emergence = int(rng.integers(2, 4))
        ring = block_polygon(row0, col0, width, count)
        polygons.append([ring])
        sid = f"{name}:s{si}"
        labels.append(sid)
        truth.append(
            {"settlement_id": sid, "emergence_epoch": EPOCHS[emergence - 1],
             "pixels": count, "cell": list(cell)}
        )
        mask = rasterize_polygons(PolygonSet(polygons=([ring],), labels=(sid,)), grid10)
        if int(mask.sum()) != count:
            raise AssertionError(f"{sid}: polygon covers {int(mask.sum())} px, wanted {count}")
        for ei in range(emergence - 1, 3):
            epoch_maps[ei][mask.astype(bool)] = CLASS_IDS["informal"]

    poly_set = PolygonSet(polygons=tuple(polygons), labels=tuple(labels))
    poly_path = os.path.join(dirs["polygons"], f"{name}.geojson")
    save_polygons(poly_set, poly_path)

    # scenes + manifests
    muni_gain = rng.normal(1.0, 0.03, size=len(BAND_NAMES))
    manifest_paths = {}
    for ei, epoch in enumerate(EPOCHS):
        start_year = int(epoch.split("-")[0])
        scene_dir = os.path.join(dirs["scenes"], name, epoch)
        os.makedirs(scene_dir, exist_ok=True)
        entries = []
        for sj in range(scenes_per_epoch):
            date = f"{start_year + (sj % 2)}-{6 + 2 * (sj // 2):02d}-15"
            band_paths = {}
            for bi, band in enumerate(BAND_NAMES):
                grid = _scene_band(epoch_maps[ei], band, muni_gain[bi], rng, size)
                rel = os.path.join("..", "scenes", name, epoch, f"s{sj}_{band}.bsqr")
                write_raster(grid, os.path.join(scene_dir, f"s{sj}_{band}.bsqr"))
                band_paths[band] = rel
            mask = _cloud_mask(rng, size)
            write_raster(mask, os.path.join(scene_dir, f"s{sj}_mask.bsqr"))
            entries.append(
                {
                    "date": date,
                    "band_paths": band_paths,
                    "mask_path": os.path.join("..", "scenes", name, epoch, f"s{sj}_mask.bsqr"),
                }
            )
        manifest = os.path.join(dirs["manifests"], f"{name}_{epoch}.json")
        with open(manifest, "w") as fh:
            json.dump(entries, fh, indent=1)
        manifest_paths[epoch] = os.path.relpath(manifest, dirs["root"])

    # negative grid registry: every full cell not hosting a settlement
    settlement_cells = set(layout["settlement_cells"])
    formal_cells = set(layout["core"]) | {cell for cell, _ in layout["growth"]}
    registry = []
    n_side = layout["n_side"]
    for r in range(n_side):
        for c in range(n_side):
            if (r, c) in settlement_cells:
                continue
            registry.append(
                {
                    "grid_id": f"{name}:g{r:02d}{c:02d}",
                    "class": "formal" if (r, c) in formal_cells else "unoccupied",
                    "row0": r * CELL_PX,
                    "col0": c * CELL_PX,
                    "rows": CELL_PX,
                    "cols": CELL_PX,
                }
            )
    return {
        "polygons": os.path.relpath(poly_path, dirs["root"]),
        "manifests": manifest_paths,
        "registry": registry,
        "truth": truth,
    }


def generate_fixture(out_dir, seed=0, size=300, municipalities=9, settlements=5,
                     scenes_per_epoch=2, negatives_per_municipality=2000,
                     rf_trees=100):
    """Write a complete runnable fixture (scenes, manifests, polygons, registry,
    truth and a pipeline config) under out_dir; returns the config path."""
    if size < 100:
        raise ValueError("size must be at least 100 pixels per side")
    if municipalities < 1 or settlements < 0:
        raise ValueError("municipality count must be >= 1, settlements >= 0")
    names = municipality_names(municipalities)
    dirs = {
        "root": os.path.abspath(out_dir),
        "scenes": os.path.join(out_dir, "scenes"),
        "manifests": os.path.join(out_dir, "manifests"),
        "polygons": os.path.join(out_dir, "polygons"),
    }
    for d in dirs.values():
        os.makedirs(d, exist_ok=True)

    registry_doc, truth_doc = {}, {}
    manifests, polygons = {}, {}
    for name in names:
        built = _build_municipality(name, seed, size, settlements, scenes_per_epoch, dirs)
        registry_doc[name] = built["registry"]
        truth_doc[name] = built["truth"]
        manifests[name] = built["manifests"]
        polygons[name] = built["polygons"]

    with open(os.path.join(out_dir, "registry.json"), "w") as fh:
        json.dump(registry_doc, fh, indent=1)
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(truth_doc, fh, indent=1)

    min_grids = min(30, min(len(v) for v in registry_doc.values()))
    min_urban = min(
        3, min(sum(1 for g in v if g["class"] == "formal") for v in registry_doc.values())
    )
    config = {
        "municipalities": names,
        "manifests": manifests,
        "polygons": polygons,
        "registry": "registry.json",
        "output_dir": "out",
        "reflectance_scale": 0.0001,
        "index_params": {"savi_l": 0.5, "baei_c": 0.3, "epsilon_policy": 0.0},
        "sampling": {
            "negatives_per_municipality": negatives_per_municipality,
            "formal_fraction": 0.4,
            "unoccupied_fraction": 0.6,
            "min_grids": min_grids,
            "min_urban_grids": min_urban,
        },
        "models": [
            {"kind": "logistic"},
            {"kind": "linear_svm"},
            {"kind": "random_forest", "n_trees": rf_trees, "max_depth": 12},
        ],
        "grid": {"cell_size": 500},
        "predict_model": "random_forest",
        "export": {"top_k": 25},
        "seed": seed,
    }
    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w") as fh:
        json.dump(config, fh, indent=1)
    return config_path
