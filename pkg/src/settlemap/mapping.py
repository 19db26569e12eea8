"""Full-raster inference: probability maps, 500 m cell ranking, candidate export.

The probability map is the hand-off artifact for human validation: bright
pixels mean likelier new informal settlement. Cells are ranked by the mean
of their top 10% pixel probabilities so validators can work in descending
order of evidence.
"""

import json
from dataclasses import dataclass

import numpy as np

from .features import assemble_features
from .models import predict_proba_batch
from .raster import RasterGrid, make_grid_cells

PROBABILITY_BAND = "p_informal"


def predict_raster(artifact, composites, params, chunk_pixels=262144):
    """Score every valid pixel of the shared composite extent.

    Returns a single-band RasterGrid; pixels with nodata in any epoch stay
    nodata. Prediction runs in row-major chunks with deterministic output.
    """
    ref = composites[0].bands
    out = np.full((ref.height, ref.width), np.float32(ref.nodata), dtype=np.float32)
    rows, cols = np.meshgrid(
        np.arange(ref.height, dtype=np.intp),
        np.arange(ref.width, dtype=np.intp),
        indexing="ij",
    )
    rows, cols = rows.ravel(), cols.ravel()
    for start in range(0, rows.size, chunk_pixels):
        r = rows[start : start + chunk_pixels]
        c = cols[start : start + chunk_pixels]
        feats, kept, _ = assemble_features(composites, r, c, params)
        if feats.shape[0] == 0:
            continue
        scores = predict_proba_batch(artifact, feats)
        out[r[kept], c[kept]] = scores.astype(np.float32)
    return RasterGrid(
        values=out[np.newaxis],
        band_names=(PROBABILITY_BAND,),
        geotransform=ref.geotransform,
        crs=ref.crs,
        nodata=ref.nodata,
    )


@dataclass(frozen=True)
class GridCellScore:
    cell_id: str
    grid_row: int
    grid_col: int
    row0: int
    row1: int
    col0: int
    col1: int
    score: float
    valid_pixel_count: int


def rank_grid_cells(prob_map, spec):
    """Score every cell by the mean of its top 10% valid pixels, descending.

    Cells without a single valid pixel are dropped; ties are ordered by
    (grid_row, grid_col) ascending.
    """
    values = prob_map.values[0]
    valid = values != np.float32(prob_map.nodata)
    if not valid.any():
        raise ValueError("probability map has no valid pixels")
    scored = []
    for cell in make_grid_cells(prob_map, spec):
        block = values[cell.row0 : cell.row1, cell.col0 : cell.col1]
        ok = valid[cell.row0 : cell.row1, cell.col0 : cell.col1]
        m = int(ok.sum())
        if m == 0:
            continue
        pix = np.sort(block[ok].astype(np.float64))
        k = (m + 9) // 10  # ceil(0.10 * m)
        scored.append(
            GridCellScore(
                cell_id=cell.cell_id,
                grid_row=cell.grid_row,
                grid_col=cell.grid_col,
                row0=cell.row0,
                row1=cell.row1,
                col0=cell.col0,
                col1=cell.col1,
                score=float(pix[m - k :].mean()),
                valid_pixel_count=m,
            )
        )
    scored.sort(key=lambda s: (-s.score, s.grid_row, s.grid_col))
    return scored


def export_candidates(cells, grid, path, top_k=None, min_score=None):
    """Write the selected ranked cells as a GeoJSON FeatureCollection.

    `cells` must come from rank_grid_cells; each feature carries the cell's
    global rank. Selection is by top_k, min_score, or both.
    """
    selected = [(rank + 1, cell) for rank, cell in enumerate(cells)]
    if min_score is not None:
        selected = [(r, c) for r, c in selected if c.score >= min_score]
    if top_k is not None:
        selected = selected[: max(0, int(top_k))]
    gt = grid.geotransform
    features = []
    for rank, cell in selected:
        x0 = gt[0] + cell.col0 * gt[1]
        x1 = gt[0] + cell.col1 * gt[1]
        y0 = gt[3] + cell.row0 * gt[5]
        y1 = gt[3] + cell.row1 * gt[5]
        ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
        features.append(
            {
                "type": "Feature",
                "properties": {"cell_id": cell.cell_id, "score": cell.score, "rank": rank},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return doc


def write_pgm(prob_map, path):
    """8-bit grayscale preview: probability * 255 rounded half up, nodata as 0."""
    values = prob_map.values[0]
    valid = values != np.float32(prob_map.nodata)
    scaled = np.floor(values.astype(np.float64) * 255.0 + 0.5)
    gray = np.where(valid, np.clip(scaled, 0, 255), 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{prob_map.width} {prob_map.height}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
