"""Pipeline configuration: one JSON document drives every stage.

Scalar flags (--seed, --out) may override config fields; the global seed
fans out to stage seeds by fixed offsets so one committed file reproduces
a whole run.
"""

import json
import os
from dataclasses import dataclass

from .composite import EPOCHS
from .features import IndexParams
from .models import ModelSpec
from .raster import GridSpec
from .sampling import SamplingPlan

SAMPLING_SEED_OFFSET = 1000
MODEL_SEED_OFFSET = 2000
SYNTH_SEED_OFFSET = 3000


class ConfigError(Exception):
    """Carries every validation violation, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class PipelineConfig:
    municipalities: list
    manifests: dict  # municipality -> {epoch: absolute path}
    polygons: dict  # municipality -> absolute path
    registry_path: str
    output_dir: str
    reflectance_scale: float
    index_params: IndexParams
    sampling: SamplingPlan
    model_specs: list
    grid_spec: GridSpec
    predict_model: str
    export: dict
    seed: int


def load_config(path, seed_override=None, out_override=None):
    """Parse and validate; raises ConfigError listing all violations."""
    errors = []
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    seed = int(doc.get("seed", 0)) if seed_override is None else int(seed_override)

    municipalities = doc.get("municipalities") or []
    if not municipalities:
        errors.append("municipalities must be a nonempty list")

    manifests = {}
    raw_manifests = doc.get("manifests", {})
    for muni in municipalities:
        entry = raw_manifests.get(muni)
        if entry is None:
            errors.append(f"manifests: no entry for municipality {muni!r}")
            continue
        manifests[muni] = {}
        for epoch in EPOCHS:
            if epoch not in entry:
                errors.append(f"manifests[{muni}]: missing epoch {epoch}")
                continue
            p = resolve(entry[epoch])
            if not os.path.exists(p):
                errors.append(f"manifests[{muni}][{epoch}]: no such file {p}")
            manifests[muni][epoch] = p
        extra = sorted(set(entry) - set(EPOCHS))
        if extra:
            errors.append(f"manifests[{muni}]: unknown epoch(s) {extra}")

    polygons = {}
    raw_polygons = doc.get("polygons", {})
    for muni in municipalities:
        p = raw_polygons.get(muni)
        if p is None:
            errors.append(f"polygons: no entry for municipality {muni!r}")
            continue
        p = resolve(p)
        if not os.path.exists(p):
            errors.append(f"polygons[{muni}]: no such file {p}")
        polygons[muni] = p

    registry_path = resolve(doc.get("registry", "registry.json"))
    if not os.path.exists(registry_path):
        errors.append(f"registry: no such file {registry_path}")

    if out_override is not None:
        output_dir = os.path.abspath(out_override)
    else:
        output_dir = resolve(doc.get("output_dir", "out"))

    reflectance_scale = float(doc.get("reflectance_scale", 1e-4))
    if reflectance_scale <= 0:
        errors.append("reflectance_scale must be positive")

    try:
        index_params = IndexParams(**doc.get("index_params", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"index_params: {exc}")
        index_params = IndexParams()

    sampling_doc = dict(doc.get("sampling", {}))
    sampling_doc.setdefault("seed", seed + SAMPLING_SEED_OFFSET)
    try:
        sampling = SamplingPlan(**sampling_doc)
    except (TypeError, ValueError) as exc:
        errors.append(f"sampling: {exc}")
        sampling = SamplingPlan(seed=seed + SAMPLING_SEED_OFFSET)

    model_specs = []
    models_doc = doc.get("models") or []
    if not models_doc:
        errors.append("models must be a nonempty list")
    for i, mdoc in enumerate(models_doc):
        mdoc = dict(mdoc)
        mdoc.setdefault("seed", seed + MODEL_SEED_OFFSET + i)
        try:
            model_specs.append(ModelSpec(**mdoc))
        except (TypeError, ValueError) as exc:
            errors.append(f"models[{i}]: {exc}")

    grid_doc = doc.get("grid", {})
    grid_spec = GridSpec(cell_size=float(grid_doc.get("cell_size", 500.0)))
    if grid_spec.cell_size <= 0:
        errors.append("grid.cell_size must be positive")

    predict_model = doc.get("predict_model", "random_forest")
    if model_specs and predict_model not in {m.kind for m in model_specs}:
        errors.append(f"predict_model {predict_model!r} is not among the configured models")

    export = dict(doc.get("export", {"top_k": 25}))
    unknown = sorted(set(export) - {"top_k", "min_score"})
    if unknown:
        errors.append(f"export: unknown key(s) {unknown}")

    if errors:
        raise ConfigError(errors)
    return PipelineConfig(
        municipalities=list(municipalities),
        manifests=manifests,
        polygons=polygons,
        registry_path=registry_path,
        output_dir=output_dir,
        reflectance_scale=reflectance_scale,
        index_params=index_params,
        sampling=sampling,
        model_specs=model_specs,
        grid_spec=grid_spec,
        predict_model=predict_model,
        export=export,
        seed=seed,
    )
