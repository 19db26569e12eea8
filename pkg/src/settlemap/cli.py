"""Command line entry point: run pipeline stages from one config file.

Stages (in `all` order): composite, features, sample, train, evaluate,
predict, rank, export. Each stage is idempotent and is skipped when its
outputs are newer than its inputs, unless --force is given. Exit codes:
0 success, 1 config validation failure, 2 runtime error.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import evaluation, mapping, models, sampling
from .composite import EPOCHS, EpochComposite, load_scene_manifest, median_composite
from .config import ConfigError, load_config
from .features import (
    INDEX_NAMES,
    compute_index_raster,
    concat_tables,
    read_feature_table,
    write_feature_table,
)
from .raster import RasterGrid, load_polygons, read_raster, write_raster
from .sampling import NegativeGridRegistry
from .synth import generate_fixture

log = logging.getLogger("settlemap")

STAGES = ("composite", "features", "sample", "train", "evaluate", "predict", "rank", "export")


def _worker_count():
    n = os.cpu_count() or 1
    cap = os.environ.get("TOOL_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _fresh(outputs, inputs):
    """True when every output exists and none is older than any input."""
    if not outputs or not all(os.path.exists(p) for p in outputs):
        return False
    newest_in = max(os.path.getmtime(p) for p in inputs)
    oldest_out = min(os.path.getmtime(p) for p in outputs)
    return oldest_out >= newest_in


def _scene_files(manifest_path):
    base = os.path.dirname(os.path.abspath(manifest_path))
    files = [manifest_path]
    with open(manifest_path) as fh:
        for entry in json.load(fh):
            for p in list(entry["band_paths"].values()) + [entry["mask_path"]]:
                files.append(p if os.path.isabs(p) else os.path.join(base, p))
    return files


def _composite_paths(cfg, muni):
    return {e: os.path.join(cfg.output_dir, "composites", muni, f"{e}.bsqr") for e in EPOCHS}


def _read_composites(cfg, muni):
    return [EpochComposite(epoch=e, bands=read_raster(p))
            for e, p in _composite_paths(cfg, muni).items()]


def stage_composite(cfg, force, config_path, n_jobs):
    written, skipped = [], 0
    for muni in cfg.municipalities:
        outputs = list(_composite_paths(cfg, muni).values())
        inputs = [config_path]
        for epoch in EPOCHS:
            inputs.extend(_scene_files(cfg.manifests[muni][epoch]))
        if not force and _fresh(outputs, inputs):
            skipped += 1
            continue
        os.makedirs(os.path.join(cfg.output_dir, "composites", muni), exist_ok=True)
        for epoch in EPOCHS:
            scenes = load_scene_manifest(cfg.manifests[muni][epoch], scale=cfg.reflectance_scale)
            comp = median_composite(scenes, epoch)
            path = _composite_paths(cfg, muni)[epoch]
            write_raster(comp.bands, path)
            written.append(path)
    return {"written": written, "skipped_municipalities": skipped}


def stage_features(cfg, force, config_path, n_jobs):
    written, skipped = [], 0
    for muni in cfg.municipalities:
        inputs = [config_path] + list(_composite_paths(cfg, muni).values())
        outputs = [
            os.path.join(cfg.output_dir, "features", muni, f"indices_{e}.bsqr") for e in EPOCHS
        ]
        if not force and _fresh(outputs, inputs):
            skipped += 1
            continue
        os.makedirs(os.path.join(cfg.output_dir, "features", muni), exist_ok=True)
        for comp, out_path in zip(_read_composites(cfg, muni), outputs):
            layers = [
                compute_index_raster(kind, comp, cfg.index_params) for kind in INDEX_NAMES
            ]
            stacked = RasterGrid(
                values=np.concatenate([l.values for l in layers], axis=0),
                band_names=INDEX_NAMES,
                geotransform=comp.bands.geotransform,
                crs=comp.bands.crs,
                nodata=comp.bands.nodata,
            )
            write_raster(stacked, out_path)
            written.append(out_path)
    return {"written": written, "skipped_municipalities": skipped}


def stage_sample(cfg, force, config_path, n_jobs):
    dataset_path = os.path.join(cfg.output_dir, "dataset.csv")
    inputs = [config_path, cfg.registry_path]
    for muni in cfg.municipalities:
        inputs.append(cfg.polygons[muni])
        inputs.extend(_composite_paths(cfg, muni).values())
    if not force and _fresh([dataset_path], inputs):
        return {"written": [], "skipped": True}
    registry = NegativeGridRegistry.from_json(cfg.registry_path)
    tables, report = [], {}
    for muni in cfg.municipalities:
        composites = _read_composites(cfg, muni)
        ref = composites[0].bands
        polys = load_polygons(cfg.polygons[muni])
        positives = sampling.positives_from_polygons(polys, ref, muni)
        negatives = sampling.sample_negative_pixels(registry, cfg.sampling, muni)
        table, muni_report = sampling.build_dataset(
            [positives], [negatives], {muni: composites}, cfg.index_params
        )
        tables.append(table)
        report.update(muni_report)
    table = concat_tables(tables)
    write_feature_table(table, dataset_path)
    log.info("sample: %d rows (%s)", len(table), table.class_counts())
    return {"written": [dataset_path], "counts": report}


def stage_train(cfg, force, config_path, n_jobs):
    dataset_path = os.path.join(cfg.output_dir, "dataset.csv")
    outputs = [
        os.path.join(cfg.output_dir, "models", f"model_{spec.kind}.json")
        for spec in cfg.model_specs
    ]
    if not force and _fresh(outputs, [config_path, dataset_path]):
        return {"written": [], "skipped": True}
    os.makedirs(os.path.join(cfg.output_dir, "models"), exist_ok=True)
    table = read_feature_table(dataset_path)
    written = []
    for spec, path in zip(cfg.model_specs, outputs):
        artifact = models.fit(spec, table, n_jobs=n_jobs)
        models.save_model(artifact, path)
        written.append(path)
        log.info("train: %s -> %s", spec.kind, path)
    return {"written": written}


def stage_evaluate(cfg, force, config_path, n_jobs):
    dataset_path = os.path.join(cfg.output_dir, "dataset.csv")
    out_dir = os.path.join(cfg.output_dir, "evaluation")
    outputs = [os.path.join(out_dir, "report.json"), os.path.join(out_dir, "report.csv")]
    if not force and _fresh(outputs, [config_path, dataset_path]):
        return {"written": [], "skipped": True}
    os.makedirs(out_dir, exist_ok=True)
    table = read_feature_table(dataset_path)
    report = evaluation.evaluate(cfg.model_specs, table, n_jobs=n_jobs)
    report.write_json(outputs[0])
    report.write_csv(outputs[1])
    return {"written": outputs}


def stage_predict(cfg, force, config_path, n_jobs):
    model_path = os.path.join(cfg.output_dir, "models", f"model_{cfg.predict_model}.json")
    written, skipped = [], 0
    for muni in cfg.municipalities:
        inputs = [config_path, model_path] + list(_composite_paths(cfg, muni).values())
        out_dir = os.path.join(cfg.output_dir, "maps", muni)
        outputs = [os.path.join(out_dir, "probmap.bsqr"), os.path.join(out_dir, "probmap.pgm")]
        if not force and _fresh(outputs, inputs):
            skipped += 1
            continue
        os.makedirs(out_dir, exist_ok=True)
        artifact = models.load_model(model_path)
        prob_map = mapping.predict_raster(artifact, _read_composites(cfg, muni), cfg.index_params)
        write_raster(prob_map, outputs[0])
        mapping.write_pgm(prob_map, outputs[1])
        written.extend(outputs)
    return {"written": written, "skipped_municipalities": skipped}


def stage_rank(cfg, force, config_path, n_jobs):
    written, skipped = [], 0
    for muni in cfg.municipalities:
        out_dir = os.path.join(cfg.output_dir, "maps", muni)
        prob_path = os.path.join(out_dir, "probmap.bsqr")
        cells_path = os.path.join(out_dir, "cells.json")
        if not force and _fresh([cells_path], [config_path, prob_path]):
            skipped += 1
            continue
        prob_map = read_raster(prob_path)
        cells = mapping.rank_grid_cells(prob_map, cfg.grid_spec)
        with open(cells_path, "w") as fh:
            json.dump([vars(c) for c in cells], fh, indent=1)
            fh.write("\n")
        written.append(cells_path)
    return {"written": written, "skipped_municipalities": skipped}


def stage_export(cfg, force, config_path, n_jobs):
    written, skipped = [], 0
    for muni in cfg.municipalities:
        out_dir = os.path.join(cfg.output_dir, "maps", muni)
        cells_path = os.path.join(out_dir, "cells.json")
        prob_path = os.path.join(out_dir, "probmap.bsqr")
        geojson_path = os.path.join(out_dir, "candidates.geojson")
        if not force and _fresh([geojson_path], [config_path, cells_path, prob_path]):
            skipped += 1
            continue
        with open(cells_path) as fh:
            cells = [mapping.GridCellScore(**c) for c in json.load(fh)]
        grid = read_raster(prob_path)
        mapping.export_candidates(
            cells,
            grid,
            geojson_path,
            top_k=cfg.export.get("top_k"),
            min_score=cfg.export.get("min_score"),
        )
        written.append(geojson_path)
    return {"written": written, "skipped_municipalities": skipped}


STAGE_FUNCS = {
    "composite": stage_composite,
    "features": stage_features,
    "sample": stage_sample,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "predict": stage_predict,
    "rank": stage_rank,
    "export": stage_export,
}


def _write_summary(cfg, entries):
    path = os.path.join(cfg.output_dir, "stage_summary.json")
    summary = {}
    if os.path.exists(path):
        with open(path) as fh:
            summary = json.load(fh)
    summary.update(entries)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_stages(stage_names, cfg, force, config_path, n_jobs):
    os.makedirs(cfg.output_dir, exist_ok=True)
    entries = {}
    for name in stage_names:
        t0 = time.monotonic()
        result = STAGE_FUNCS[name](cfg, force, config_path, n_jobs)
        seconds = time.monotonic() - t0
        log.info("stage %s done in %.2fs", name, seconds)
        result["seconds"] = round(seconds, 3)
        entries[name] = result
    _write_summary(cfg, entries)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="settlemap",
        description="Detect newly emerged informal settlements from raster time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage in order")
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--force", action="store_true", help="rerun even if outputs are fresh")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
    synth = sub.add_parser("synth", help="generate a synthetic fixture")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--size", type=int, default=300, help="pixels per municipality side")
    synth.add_argument("--municipalities", type=int, default=9)
    synth.add_argument("--settlements", type=int, default=5, help="planted settlements per municipality")
    synth.add_argument("--negatives", type=int, default=2000, help="negative pixels per municipality")
    synth.add_argument("--scenes", type=int, default=2, help="scenes per epoch")
    synth.add_argument("--rf-trees", type=int, default=100)
    return parser


def run(argv=None):
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(asctime)s %(name)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        try:
            config_path = generate_fixture(
                args.out,
                seed=args.seed,
                size=args.size,
                municipalities=args.municipalities,
                settlements=args.settlements,
                scenes_per_epoch=args.scenes,
                negatives_per_municipality=args.negatives,
                rf_trees=args.rf_trees,
            )
        except (ValueError, OSError) as exc:
            log.error("synth failed: %s", exc)
            return 2
        print(config_path)
        return 0

    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    stage_names = STAGES if args.command == "all" else (args.command,)
    try:
        run_stages(stage_names, cfg, args.force, os.path.abspath(args.config), _worker_count())
    except Exception as exc:  # runtime failure -> exit 2 with a clear message
        log.error("%s failed: %s", args.command, exc)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
