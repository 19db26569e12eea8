import numpy as np
import pytest

from settlemap.composite import BAND_NAMES, EPOCHS, EpochComposite
from settlemap.features import N_FEATURES, FeatureTable
from settlemap.raster import RasterGrid

GT10 = (0.0, 10.0, 0.0, 0.0, 0.0, -10.0)


def grid_from(values, pixel_size=10.0, band_names=None, nodata=-9999.0, origin=(0.0, 0.0)):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        values = values[np.newaxis]
    if band_names is None:
        band_names = tuple(f"band{i}" for i in range(values.shape[0]))
    gt = (origin[0], pixel_size, 0.0, origin[1], 0.0, -pixel_size)
    return RasterGrid(values=values, band_names=band_names, geotransform=gt, nodata=nodata)


def composite_from_bands(epoch, band_stack, nodata=-9999.0):
    """band_stack: (12, h, w) array in canonical band order."""
    grid = RasterGrid(
        values=np.asarray(band_stack, dtype=np.float32),
        band_names=BAND_NAMES,
        geotransform=GT10,
        nodata=nodata,
    )
    return EpochComposite(epoch=epoch, bands=grid)


def constant_composite(epoch, height=4, width=4, base=0.1, step=0.02, nodata=-9999.0):
    """12 constant bands: band i everywhere equal to base + i*step."""
    stack = np.empty((12, height, width), dtype=np.float32)
    for i in range(12):
        stack[i] = base + i * step
    return composite_from_bands(epoch, stack, nodata=nodata)


@pytest.fixture
def three_composites():
    return [
        constant_composite(epoch, base=0.10 + 0.05 * j) for j, epoch in enumerate(EPOCHS)
    ]


def random_table(rng, counts_by_municipality, n_positive_units=2, n_negative_units=3):
    """A valid random FeatureTable: `counts_by_municipality` maps name ->
    (n_positives, n_negatives); unit ids cycle within the municipality."""
    pixel_ids, munis, sids, gids, labels = [], [], [], [], []
    total = 0
    for muni in sorted(counts_by_municipality):
        n_pos, n_neg = counts_by_municipality[muni]
        for i in range(n_pos):
            pixel_ids.append(f"{muni}:p{i}")
            munis.append(muni)
            sids.append(f"{muni}:s{i % n_positive_units}")
            gids.append(None)
            labels.append(1)
        for i in range(n_neg):
            pixel_ids.append(f"{muni}:n{i}")
            munis.append(muni)
            sids.append(None)
            gids.append(f"{muni}:g{i % n_negative_units}")
            labels.append(0)
        total += n_pos + n_neg
    features = rng.random((total, N_FEATURES))
    labels = np.asarray(labels)
    # plant signal so classifiers have something to learn
    features[:, 0] += labels * 0.8
    return FeatureTable(
        pixel_ids=pixel_ids,
        municipalities=munis,
        settlement_ids=sids,
        grid_ids=gids,
        labels=labels,
        features=features,
    )
