"""Median compositing of dated scenes into biennial 12-band composites at 10 m.

Scenes arrive with per-pixel validity masks (1 = usable observation); cloud
detection itself happens upstream. Bands may come at their native 10/20/60 m
size and are nearest-neighbor upsampled before aggregation.
"""

import datetime
import json
import os
from dataclasses import dataclass

import numpy as np

from .raster import DEFAULT_NODATA, RasterGrid, read_raster

EPOCHS = ("2015-2016", "2017-2018", "2019-2020")
BAND_NAMES = ("b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b8A", "b9", "b11", "b12")
TARGET_PIXEL_SIZE = 10.0
SUPPORTED_PIXEL_SIZES = (10.0, 20.0, 60.0)


@dataclass(frozen=True)
class Scene:
    """One dated acquisition: per-band grids plus a 10 m validity mask."""

    acquired: datetime.date
    bands: dict
    valid_mask: RasterGrid

    def __post_init__(self):
        if isinstance(self.acquired, str):
            object.__setattr__(self, "acquired", datetime.date.fromisoformat(self.acquired))
        for name in self.bands:
            if name not in BAND_NAMES:
                raise ValueError(f"unknown band {name!r}")


@dataclass(frozen=True)
class EpochComposite:
    """Median-aggregated 12-band composite for one two-year window."""

    epoch: str
    bands: RasterGrid

    def __post_init__(self):
        if self.epoch not in EPOCHS:
            raise ValueError(f"epoch must be one of {EPOCHS}, got {self.epoch!r}")
        if self.bands.band_names != BAND_NAMES:
            raise ValueError(
                f"composite must carry the 12 canonical bands, got {self.bands.band_names}"
            )
        if self.bands.pixel_size != TARGET_PIXEL_SIZE:
            raise ValueError("composite must be at 10 m pixel size")


def epoch_years(epoch):
    start, end = epoch.split("-")
    return int(start), int(end)


def resample_to_10m(band):
    """Nearest-neighbor upsample a band grid to 10 m; 10 m input is returned as is."""
    px = band.pixel_size
    if px not in SUPPORTED_PIXEL_SIZES:
        raise ValueError(f"unsupported native resolution {px} m")
    if px == TARGET_PIXEL_SIZE:
        return band
    factor = int(px / TARGET_PIXEL_SIZE)
    values = np.repeat(np.repeat(band.values, factor, axis=1), factor, axis=2)
    gt = band.geotransform
    new_gt = (gt[0], TARGET_PIXEL_SIZE, gt[2], gt[3], gt[4], -TARGET_PIXEL_SIZE)
    return RasterGrid(
        values=values,
        band_names=band.band_names,
        geotransform=new_gt,
        crs=band.crs,
        nodata=band.nodata,
    )


def median_composite(scenes, epoch, nodata=None):
    """Per-pixel, per-band median of valid observations within the epoch.

    An even count of valid values yields the mean of the two middle order
    statistics; zero valid values yield the nodata sentinel. Output is
    independent of scene order and safe to compute per row block.
    """
    start, end = epoch_years(epoch)
    selected = [s for s in scenes if start <= s.acquired.year <= end]
    if not selected:
        raise ValueError(f"no scenes dated within epoch {epoch}")

    ref_mask = selected[0].valid_mask
    for scene in selected[1:]:
        if not scene.valid_mask.same_extent(ref_mask):
            raise ValueError("scene extents do not match")
    height, width = ref_mask.height, ref_mask.width
    if nodata is None:
        nodata = DEFAULT_NODATA

    out = np.full((len(BAND_NAMES), height, width), np.float32(nodata), dtype=np.float32)
    for bi, name in enumerate(BAND_NAMES):
        stack = []
        for scene in selected:
            if name not in scene.bands:
                continue
            band = resample_to_10m(scene.bands[name])
            if band.height != height or band.width != width:
                raise ValueError(f"band {name} extent does not match the mask extent")
            vals = band.values[0].astype(np.float64)
            invalid = (scene.valid_mask.values[0] == 0) | (
                band.values[0] == np.float32(band.nodata)
            )
            vals[invalid] = np.nan
            stack.append(vals)
        if not stack:
            continue
        out[bi] = _median_ignore_nan(np.stack(stack), nodata)

    gt = ref_mask.geotransform
    grid = RasterGrid(
        values=out,
        band_names=BAND_NAMES,
        geotransform=gt,
        crs=ref_mask.crs,
        nodata=nodata,
    )
    return EpochComposite(epoch=epoch, bands=grid)


def _median_ignore_nan(stack, nodata):
    """Median over axis 0 skipping NaNs: mean of the two middle values when
    the valid count is even, nodata when it is zero."""
    n_valid = np.sum(~np.isnan(stack), axis=0)
    srt = np.sort(stack, axis=0)  # NaNs sort to the end
    lo_idx = np.maximum(n_valid - 1, 0) // 2
    hi_idx = np.maximum(n_valid, 1) // 2
    lo = np.take_along_axis(srt, lo_idx[np.newaxis], axis=0)[0]
    hi = np.take_along_axis(srt, hi_idx[np.newaxis], axis=0)[0]
    med = (lo + hi) / 2
    return np.where(n_valid == 0, np.float64(nodata), med).astype(np.float32)


def load_scene_manifest(path, scale=1.0):
    """Load scenes from a manifest: a JSON list of
    {date, band_paths: {band: path}, mask_path}.

    Band values are multiplied by `scale` at ingestion (set 1/10000 to turn
    integer digital numbers into reflectances); masks are never scaled.
    Relative paths resolve against the manifest's directory.
    """
    with open(path) as fh:
        entries = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    scenes = []
    for entry in entries:
        bands = {}
        for name, band_path in entry["band_paths"].items():
            grid = read_raster(_resolve(band_path))
            if scale != 1.0:
                valid = grid.values != np.float32(grid.nodata)
                scaled = np.where(valid, grid.values * np.float32(scale), grid.values)
                grid = RasterGrid(
                    values=scaled,
                    band_names=grid.band_names,
                    geotransform=grid.geotransform,
                    crs=grid.crs,
                    nodata=grid.nodata,
                )
            bands[name] = grid
        scenes.append(
            Scene(
                acquired=entry["date"],
                bands=bands,
                valid_mask=read_raster(_resolve(entry["mask_path"])),
            )
        )
    return scenes
