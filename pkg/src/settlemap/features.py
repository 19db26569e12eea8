"""Derived spectral indices and the 66-feature per-pixel vectors.

Per biennial composite a pixel contributes its 12 reflectance bands plus ten
derived vegetation/built-up indices; stacking the three composites gives the
canonical 66-entry feature vector. The ordering is fixed so serialized models
stay portable.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .composite import BAND_NAMES, EPOCHS
from .raster import RasterGrid

INDEX_NAMES = ("NDVI", "SAVI", "MNDWI", "NDBI", "UI", "NBI", "BRBA", "NBAI", "MBI", "BAEI")
FEATURE_NAMES = tuple(
    f"{epoch}_{name}" for epoch in EPOCHS for name in BAND_NAMES + INDEX_NAMES
)
N_FEATURES = len(FEATURE_NAMES)  # 66


@dataclass(frozen=True)
class IndexParams:
    """Knobs of the index formulas.

    savi_l is the soil adjustment factor in [0, 1] (0 = dense vegetation,
    1 = sparse); baei_c the additive red-band constant; epsilon_policy the
    value emitted whenever an index denominator is exactly zero, so models
    downstream never see non-finite features.
    """

    savi_l: float = 0.5
    baei_c: float = 0.3
    epsilon_policy: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.savi_l <= 1.0:
            raise ValueError("savi_l must lie in [0, 1]")


def _guarded(num, den, policy):
    den = np.asarray(den, dtype=np.float64)
    safe = np.where(den == 0.0, 1.0, den)
    return np.where(den == 0.0, policy, np.asarray(num, dtype=np.float64) / safe)


def _ndvi(b, p):
    return _guarded(b["b8"] - b["b4"], b["b8"] + b["b4"], p.epsilon_policy)


def _savi(b, p):
    num = (b["b8A"] - b["b4"]) * (1.0 + p.savi_l)
    return _guarded(num, b["b8A"] + b["b4"] + p.savi_l, p.epsilon_policy)


def _mndwi(b, p):
    return _guarded(b["b3"] - b["b11"], b["b3"] + b["b11"], p.epsilon_policy)


def _ndbi(b, p):
    return _guarded(b["b11"] - b["b8"], b["b11"] + b["b8"], p.epsilon_policy)


def _ui(b, p):
    return _guarded(b["b7"] - b["b5"], b["b7"] + b["b5"], p.epsilon_policy)


def _nbi(b, p):
    return _guarded(b["b4"] * b["b11"], b["b8A"], p.epsilon_policy)


def _brba(b, p):
    return _guarded(b["b4"], b["b11"], p.epsilon_policy)


def _nbai(b, p):
    # inner ratio b12/b3 is itself guarded: a zero green band yields the policy value
    b3 = np.asarray(b["b3"], dtype=np.float64)
    ratio = np.where(b3 == 0.0, 0.0, b["b12"] / np.where(b3 == 0.0, 1.0, b3))
    out = _guarded(b["b11"] - ratio, b["b11"] + ratio, p.epsilon_policy)
    return np.where(b3 == 0.0, p.epsilon_policy, out)


def _mbi(b, p):
    num = b["b12"] * b["b4"] - b["b8A"] * b["b8A"]
    return _guarded(num, b["b4"] + b["b8A"] + b["b12"], p.epsilon_policy)


def _baei(b, p):
    return _guarded(b["b4"] + p.baei_c, b["b3"] + b["b11"], p.epsilon_policy)


_FORMULAS = {
    "NDVI": _ndvi,
    "SAVI": _savi,
    "MNDWI": _mndwi,
    "NDBI": _ndbi,
    "UI": _ui,
    "NBI": _nbi,
    "BRBA": _brba,
    "NBAI": _nbai,
    "MBI": _mbi,
    "BAEI": _baei,
}


def _as_band_dict(bands):
    if isinstance(bands, dict):
        missing = [n for n in BAND_NAMES if n not in bands]
        if missing:
            raise ValueError(f"missing bands {missing}")
        return {n: np.asarray(bands[n], dtype=np.float64) for n in BAND_NAMES}
    arr = np.asarray(bands, dtype=np.float64)
    if arr.shape[0] != len(BAND_NAMES):
        raise ValueError(f"expected {len(BAND_NAMES)} band values, got {arr.shape[0]}")
    return {n: arr[i] for i, n in enumerate(BAND_NAMES)}


def compute_index(kind, bands, params=IndexParams()):
    """Evaluate one derived index for a single pixel.

    `bands` is either a mapping by band name or a sequence of the 12 values
    in canonical order.
    """
    if kind not in _FORMULAS:
        raise KeyError(f"unknown index {kind!r}")
    b = _as_band_dict(bands)
    if any(not np.all(np.isfinite(v)) for v in b.values()):
        raise ValueError("band values must be finite")
    return float(_FORMULAS[kind](b, params))


def compute_index_raster(kind, composite, params=IndexParams()):
    """Evaluate one index over a whole composite; nodata in any band propagates."""
    if kind not in _FORMULAS:
        raise KeyError(f"unknown index {kind!r}")
    grid = composite.bands
    invalid = ~grid.valid_mask()
    b = {n: grid.band(n).astype(np.float64) for n in BAND_NAMES}
    out = _FORMULAS[kind](b, params).astype(np.float32)
    out[invalid] = np.float32(grid.nodata)
    return RasterGrid(
        values=out[np.newaxis],
        band_names=(kind,),
        geotransform=grid.geotransform,
        crs=grid.crs,
        nodata=grid.nodata,
    )


def _ordered_composites(composites):
    by_epoch = {c.epoch: c for c in composites}
    missing = [e for e in EPOCHS if e not in by_epoch]
    if missing:
        raise ValueError(f"missing epoch(s) {missing}")
    ordered = [by_epoch[e] for e in EPOCHS]
    ref = ordered[0].bands
    for comp in ordered[1:]:
        if not comp.bands.same_extent(ref):
            raise ValueError("composites do not share an extent")
    return ordered


def assemble_features(composites, rows, cols, params=IndexParams()):
    """Build 66-entry feature vectors for the pixels at (rows, cols).

    Returns (features, kept, n_skipped): features is (n_kept, 66) float64 in
    canonical order, kept a boolean mask over the input pixels, and n_skipped
    the number of pixels dropped because some band was nodata in some epoch.
    """
    ordered = _ordered_composites(composites)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    kept = np.ones(rows.shape[0], dtype=bool)
    for comp in ordered:
        kept &= comp.bands.valid_mask()[rows, cols]
    r, c = rows[kept], cols[kept]

    blocks = []
    for comp in ordered:
        grid = comp.bands
        band_cols = grid.values[:, r, c].astype(np.float64)  # (12, n)
        b = {name: band_cols[i] for i, name in enumerate(BAND_NAMES)}
        idx_cols = [_FORMULAS[name](b, params) for name in INDEX_NAMES]
        blocks.append(np.concatenate([band_cols, np.stack(idx_cols)], axis=0))
    features = np.concatenate(blocks, axis=0).T  # (n, 66)
    return features, kept, int((~kept).sum())


@dataclass
class FeatureTable:
    """Labeled pixel rows: ids, municipality, unit membership and 66 features."""

    pixel_ids: list
    municipalities: list
    settlement_ids: list
    grid_ids: list
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        n = len(self.pixel_ids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        sizes = (
            len(self.municipalities),
            len(self.settlement_ids),
            len(self.grid_ids),
            self.labels.shape[0],
            self.features.shape[0],
        )
        if any(s != n for s in sizes):
            raise ValueError("column lengths differ")
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"features must be (n, {N_FEATURES})")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if len(set(self.pixel_ids)) != n:
            raise ValueError("pixel_id values must be unique")
        for i in range(n):
            if self.labels[i] == 1 and self.settlement_ids[i] is None:
                raise ValueError("label-1 rows must carry a settlement_id")
            if self.labels[i] == 0 and self.grid_ids[i] is None:
                raise ValueError("label-0 rows must carry a grid_id")

    def __len__(self):
        return len(self.pixel_ids)

    def municipality_names(self):
        return sorted(set(self.municipalities))

    def subset(self, indices):
        indices = np.asarray(indices)
        return FeatureTable(
            pixel_ids=[self.pixel_ids[i] for i in indices],
            municipalities=[self.municipalities[i] for i in indices],
            settlement_ids=[self.settlement_ids[i] for i in indices],
            grid_ids=[self.grid_ids[i] for i in indices],
            labels=self.labels[indices],
            features=self.features[indices],
        )

    def class_counts(self):
        pos = int((self.labels == 1).sum())
        return {"positives": pos, "negatives": len(self) - pos}


def concat_tables(tables):
    return FeatureTable(
        pixel_ids=[p for t in tables for p in t.pixel_ids],
        municipalities=[m for t in tables for m in t.municipalities],
        settlement_ids=[s for t in tables for s in t.settlement_ids],
        grid_ids=[g for t in tables for g in t.grid_ids],
        labels=np.concatenate([t.labels for t in tables]),
        features=np.vstack([t.features for t in tables]),
    )


def write_feature_table(table, path):
    """CSV with header pixel_id,municipality,settlement_id,grid_id,label,f00..f65;
    floats printed with 9 significant digits."""
    header = ["pixel_id", "municipality", "settlement_id", "grid_id", "label"]
    header += [f"f{i:02d}" for i in range(N_FEATURES)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(table)):
            front = [
                table.pixel_ids[i],
                table.municipalities[i],
                table.settlement_ids[i] or "",
                table.grid_ids[i] or "",
                str(int(table.labels[i])),
            ]
            feats = [f"{v:.9g}" for v in table.features[i]]
            fh.write(",".join(front + feats) + "\n")


def read_feature_table(path):
    pixel_ids, municipalities, settlement_ids, grid_ids, labels, feats = [], [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != ["pixel_id", "municipality", "settlement_id", "grid_id", "label"]:
            raise ValueError("unexpected feature table header")
        for rec in reader:
            pixel_ids.append(rec[0])
            municipalities.append(rec[1])
            settlement_ids.append(rec[2] or None)
            grid_ids.append(rec[3] or None)
            labels.append(int(rec[4]))
            feats.append([float(v) for v in rec[5:]])
    return FeatureTable(
        pixel_ids=pixel_ids,
        municipalities=municipalities,
        settlement_ids=settlement_ids,
        grid_ids=grid_ids,
        labels=np.asarray(labels),
        features=np.asarray(feats, dtype=np.float64),
    )
