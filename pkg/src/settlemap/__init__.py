"""settlemap: find newly emerged informal settlements in raster time series.

The pipeline turns stacks of dated multispectral scenes into biennial median
composites, derives per-pixel spectral features, trains pixel classifiers on
polygon-labeled data, evaluates them with leave-one-municipality-out folds,
and renders probability maps with ranked 500 m candidate cells for human
validation.

Typical flow:

    >>> from settlemap import composite, features, sampling, models, evaluation, mapping
    >>> comps = [composite.median_composite(scenes, e) for e in composite.EPOCHS]
    >>> table, report = sampling.build_dataset(pos, neg, {"Maicao": comps}, params)
    >>> artifact = models.fit(models.ModelSpec(kind="random_forest"), table)
    >>> prob_map = mapping.predict_raster(artifact, comps, params)

The `settlemap` console script wraps the same stages behind a config file;
`settlemap synth` builds a self-contained synthetic fixture to try it on.
"""

__version__ = "0.1.0"

from .composite import BAND_NAMES, EPOCHS, EpochComposite, Scene, median_composite, resample_to_10m
from .features import FEATURE_NAMES, FeatureTable, IndexParams, compute_index, compute_index_raster
from .mapping import predict_raster, rank_grid_cells, export_candidates
from .models import ModelSpec, fit, load_model, predict_proba, save_model
from .raster import GridSpec, PolygonSet, RasterGrid, make_grid_cells, rasterize_polygons, read_raster, write_raster
from .sampling import NegativeGridRegistry, SamplingPlan, build_dataset, sample_negative_pixels

__all__ = [
    "BAND_NAMES",
    "EPOCHS",
    "EpochComposite",
    "FEATURE_NAMES",
    "FeatureTable",
    "GridSpec",
    "IndexParams",
    "ModelSpec",
    "NegativeGridRegistry",
    "PolygonSet",
    "RasterGrid",
    "SamplingPlan",
    "Scene",
    "build_dataset",
    "compute_index",
    "compute_index_raster",
    "export_candidates",
    "fit",
    "load_model",
    "make_grid_cells",
    "median_composite",
    "predict_proba",
    "predict_raster",
    "rank_grid_cells",
    "rasterize_polygons",
    "read_raster",
    "resample_to_10m",
    "sample_negative_pixels",
    "save_model",
    "write_raster",
]
