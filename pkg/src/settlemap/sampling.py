"""Labeled dataset construction: positive pixels from settlement polygons,
negative pixels drawn from curator-vetted 500 m grid blocks.

Every positive pixel is kept (ground truth is sparse); negatives are sampled
per municipality with a fixed split between formal-settlement grids and
unoccupied-land grids, without replacement and reproducibly from a seed.
"""

import json
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

from .features import FeatureTable, assemble_features, concat_tables

GRID_CLASSES = ("formal", "unoccupied")


@dataclass(frozen=True)
class SamplingPlan:
    negatives_per_municipality: int = 30000
    formal_fraction: float = 0.40
    unoccupied_fraction: float = 0.60
    min_grids: int = 30
    min_urban_grids: int = 3
    seed: int = 0

    def __post_init__(self):
        if abs(self.formal_fraction + self.unoccupied_fraction - 1.0) > 1e-12:
            raise ValueError("formal_fraction + unoccupied_fraction must equal 1")
        if min(self.negatives_per_municipality, self.min_grids, self.min_urban_grids) <= 0:
            raise ValueError("counts must be positive")

    def class_counts(self):
        """(formal, unoccupied) counts; formal rounds half up, unoccupied takes the rest."""
        n = self.negatives_per_municipality
        formal = int(np.floor(self.formal_fraction * n + 0.5))
        return formal, n - formal


@dataclass(frozen=True)
class NegativeGrid:
    """One vetted grid block: a pixel rectangle tagged formal or unoccupied."""

    grid_id: str
    grid_class: str
    row0: int
    col0: int
    rows: int
    cols: int

    def __post_init__(self):
        if self.grid_class not in GRID_CLASSES:
            raise ValueError(f"grid class must be one of {GRID_CLASSES}")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("grid extent must be positive")

    def pixel_arrays(self):
        rr, cc = np.meshgrid(
            np.arange(self.row0, self.row0 + self.rows),
            np.arange(self.col0, self.col0 + self.cols),
            indexing="ij",
        )
        return rr.ravel(), cc.ravel()

    def overlaps(self, other):
        return not (
            self.row0 + self.rows <= other.row0
            or other.row0 + other.rows <= self.row0
            or self.col0 + self.cols <= other.col0
            or other.col0 + other.cols <= self.col0
        )


class NegativeGridRegistry:
    """Curator-supplied negative grids per municipality; structure is validated,
    the imagery-based vetting itself happened upstream."""

    def __init__(self, grids_by_municipality):
        self.grids = {}
        for muni, grids in grids_by_municipality.items():
            grids = list(grids)
            ids = [g.grid_id for g in grids]
            if len(set(ids)) != len(ids):
                raise ValueError(f"{muni}: duplicate grid_id")
            for i in range(len(grids)):
                for j in range(i + 1, len(grids)):
                    if grids[i].overlaps(grids[j]):
                        raise ValueError(
                            f"{muni}: grids {grids[i].grid_id} and {grids[j].grid_id} overlap"
                        )
            self.grids[muni] = grids

    def municipalities(self):
        return sorted(self.grids)

    def for_municipality(self, municipality):
        if municipality not in self.grids:
            raise KeyError(f"no grids registered for {municipality!r}")
        return self.grids[municipality]

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        grids = {
            muni: [
                NegativeGrid(
                    grid_id=e["grid_id"],
                    grid_class=e["class"],
                    row0=int(e["row0"]),
                    col0=int(e["col0"]),
                    rows=int(e["rows"]),
                    cols=int(e["cols"]),
                )
                for e in entries
            ]
            for muni, entries in doc.items()
        }
        return cls(grids)

    def to_json(self, path):
        doc = {
            muni: [
                {
                    "grid_id": g.grid_id,
                    "class": g.grid_class,
                    "row0": g.row0,
                    "col0": g.col0,
                    "rows": g.rows,
                    "cols": g.cols,
                }
                for g in grids
            ]
            for muni, grids in sorted(self.grids.items())
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


@dataclass
class PixelSample:
    """Selected pixels of one municipality, before feature attachment."""

    municipality: str
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    unit_ids: list  # settlement_id for label 1, grid_id for label 0

    def __len__(self):
        return self.rows.shape[0]


def extract_positive_pixels(masks, municipality):
    """All set pixels of the given settlement masks, labeled 1.

    `masks` is an ordered iterable of (settlement_id, 0/1 array); a pixel
    covered by several settlements is emitted once, for the first one.
    """
    rows, cols, units = [], [], []
    claimed = None
    for settlement_id, mask in masks:
        mask = np.asarray(mask).astype(bool)
        if claimed is None:
            claimed = np.zeros(mask.shape, dtype=bool)
        fresh = mask & ~claimed
        rr, cc = np.nonzero(fresh)
        rows.append(rr)
        cols.append(cc)
        units.extend([settlement_id] * rr.size)
        claimed |= mask
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.intp)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.intp)
    if rows.size == 0:
        warnings.warn(f"{municipality}: no positive pixels in any mask")
    return PixelSample(
        municipality=municipality,
        rows=rows,
        cols=cols,
        labels=np.ones(rows.size, dtype=np.int64),
        unit_ids=units,
    )


def positives_from_polygons(polys, grid, municipality):
    """Rasterize each polygon separately and extract its pixels, in input order."""
    from .raster import PolygonSet, rasterize_polygons

    masks = []
    for label, rings in zip(polys.labels, polys.polygons):
        single = PolygonSet(polygons=(rings,), labels=(label,))
        masks.append((label, rasterize_polygons(single, grid)))
    return extract_positive_pixels(masks, municipality)


def _municipality_rng(seed, municipality):
    return np.random.default_rng([seed, zlib.crc32(municipality.encode("utf-8"))])


def sample_negative_pixels(registry, plan, municipality):
    """Draw the plan's negative pixels for one municipality, labeled 0.

    Exactly negatives_per_municipality rows: the formal share from formal
    grids and the remainder from unoccupied grids, uniform within class and
    without replacement.
    """
    grids = registry.for_municipality(municipality)
    formal_grids = [g for g in grids if g.grid_class == "formal"]
    if len(grids) < plan.min_grids:
        raise ValueError(
            f"{municipality}: {len(grids)} grids registered, plan requires {plan.min_grids}"
        )
    if len(formal_grids) < plan.min_urban_grids:
        raise ValueError(
            f"{municipality}: {len(formal_grids)} formal grids, plan requires {plan.min_urban_grids}"
        )

    rng = _municipality_rng(plan.seed, municipality)
    targets = dict(zip(GRID_CLASSES, plan.class_counts()))
    rows, cols, units = [], [], []
    for grid_class in GRID_CLASSES:
        want = targets[grid_class]
        if want == 0:
            continue
        class_grids = [g for g in grids if g.grid_class == grid_class]
        if not class_grids:
            raise ValueError(f"{municipality}: no {grid_class} grids registered")
        pools = [g.pixel_arrays() for g in class_grids]
        pool_rows = np.concatenate([p[0] for p in pools])
        pool_cols = np.concatenate([p[1] for p in pools])
        pool_units = np.concatenate(
            [np.full(p[0].size, g.grid_id, dtype=object) for g, p in zip(class_grids, pools)]
        )
        if pool_rows.size < want:
            raise ValueError(
                f"{municipality}: {grid_class} grids hold {pool_rows.size} pixels, "
                f"need {want}"
            )
        pick = rng.choice(pool_rows.size, size=want, replace=False)
        rows.append(pool_rows[pick])
        cols.append(pool_cols[pick])
        units.extend(pool_units[pick].tolist())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return PixelSample(
        municipality=municipality,
        rows=rows,
        cols=cols,
        labels=np.zeros(rows.size, dtype=np.int64),
        unit_ids=units,
    )


def build_dataset(positives, negatives, composites_by_municipality, params):
    """Attach features to sampled pixels and concatenate into one FeatureTable.

    `composites_by_municipality` maps each municipality to its three epoch
    composites. Pixels with nodata in any epoch are skipped and counted in
    the returned per-municipality report.
    """
    tables = []
    report = {}
    for sample in list(positives) + list(negatives):
        muni = sample.municipality
        if muni not in composites_by_municipality:
            raise ValueError(f"no composites supplied for {muni!r}")
        feats, kept, skipped = assemble_features(
            composites_by_municipality[muni], sample.rows, sample.cols, params
        )
        r, c = sample.rows[kept], sample.cols[kept]
        labels = sample.labels[kept]
        units = [u for u, k in zip(sample.unit_ids, kept) if k]
        is_pos = labels == 1
        tables.append(
            FeatureTable(
                pixel_ids=[f"{muni}:{ri}:{ci}" for ri, ci in zip(r, c)],
                municipalities=[muni] * r.size,
                settlement_ids=[u if p else None for u, p in zip(units, is_pos)],
                grid_ids=[None if p else u for u, p in zip(units, is_pos)],
                labels=labels,
                features=feats,
            )
        )
        entry = report.setdefault(muni, {"positives": 0, "negatives": 0, "skipped": 0})
        entry["positives"] += int(is_pos.sum())
        entry["negatives"] += int((~is_pos).sum())
        entry["skipped"] += skipped
    table = concat_tables(tables)
    return table, report
