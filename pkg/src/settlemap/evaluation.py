"""Leave-one-municipality-out evaluation with precision/recall at the top x%.

Folding by municipality keeps spatially autocorrelated pixels from leaking
between train and test. Curves are ranking-based: for each x in 1..100 the
top ceil(x*n/100) units by score count as predicted positive. Settlement-level
units aggregate pixel scores as the mean of each group's top 10% pixels.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .models import fit, predict_proba_batch


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def population(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class CurvePoint:
    x: int
    precision: float | None
    recall: float | None
    selected: int | None


def precision_recall(counts):
    """(precision, recall); a zero denominator yields None, never a silent 0."""
    denom_p = counts.tp + counts.fp
    denom_r = counts.tp + counts.fn
    precision = counts.tp / denom_p if denom_p > 0 else None
    recall = counts.tp / denom_r if denom_r > 0 else None
    return precision, recall


def spatial_folds(table):
    """One (municipality, train_indices, test_indices) triple per municipality."""
    munis = table.municipality_names()
    if len(munis) < 2:
        raise ValueError("spatial folds need at least 2 municipalities")
    tags = np.asarray(table.municipalities, dtype=object)
    folds = []
    for muni in munis:
        test = np.nonzero(tags == muni)[0]
        train = np.nonzero(tags != muni)[0]
        folds.append((muni, train, test))
    return folds


def curve_at_top_x(scored_units):
    """Precision-recall at the top x percent for every integer x in 1..100.

    `scored_units` is a nonempty list of (unit_id, score, label); ranking ties
    are broken by unit id ascending so the curve is implementation-independent.
    """
    units = list(scored_units)
    n = len(units)
    if n == 0:
        raise ValueError("no units to rank")
    labels = np.asarray([u[2] for u in units])
    total_pos = int((labels == 1).sum())
    if total_pos == 0:
        raise ValueError("cannot rank without any positive unit")
    order = sorted(range(n), key=lambda i: (-units[i][1], units[i][0]))
    sorted_labels = labels[order]
    prefix_pos = np.cumsum(sorted_labels == 1)
    points = []
    for x in range(1, 101):
        k = (x * n + 99) // 100  # ceil(x*n/100)
        tp = int(prefix_pos[k - 1])
        counts = ConfusionCounts(tp=tp, fp=k - tp, fn=total_pos - tp,
                                 tn=n - k - (total_pos - tp))
        precision, recall = precision_recall(counts)
        points.append(CurvePoint(x=x, precision=precision, recall=recall, selected=k))
    return points


def settlement_scores(groups):
    """Aggregate pixel scores per settlement/grid unit.

    `groups` maps unit id -> (pixel scores, label); each unit's score is the
    mean of its top ceil(10% of m) pixel scores. Returns (unit_id, score,
    label) triples sorted by unit id.
    """
    out = []
    for unit_id in sorted(groups):
        scores, label = groups[unit_id]
        scores = np.asarray(scores, dtype=np.float64)
        m = scores.size
        if m == 0:
            raise ValueError(f"unit {unit_id!r} has no pixels")
        k = (m + 9) // 10  # ceil(0.10 * m)
        top = np.sort(scores)[m - k:]
        out.append((unit_id, float(top.mean()), int(label)))
    return out


def group_by_unit(pixel_units):
    """Group (pixel) scores by their settlement/grid unit id."""
    groups = {}
    for unit_id, score, label in pixel_units:
        entry = groups.setdefault(unit_id, ([], label))
        if entry[1] != label:
            raise ValueError(f"unit {unit_id!r} mixes labels")
        entry[0].append(score)
    return groups


@dataclass
class FoldResult:
    model_kind: str
    municipality: str
    pixel_curve: list
    settlement_curve: list
    pixel_counts: dict
    settlement_counts: dict


@dataclass
class EvaluationReport:
    model_kinds: list
    municipalities: list
    folds: list
    macro: dict  # (model_kind, level) -> curve

    def fold(self, model_kind, municipality):
        for f in self.folds:
            if f.model_kind == model_kind and f.municipality == municipality:
                return f
        raise KeyError((model_kind, municipality))

    def macro_curve(self, model_kind, level):
        return self.macro[(model_kind, level)]

    def to_jsonable(self):
        entries = []
        for f in self.folds:
            for level, curve in (("pixel", f.pixel_curve), ("settlement", f.settlement_curve)):
                entries.append(
                    {
                        "model": f.model_kind,
                        "fold": f.municipality,
                        "level": level,
                        "curve": [_point_jsonable(p) for p in curve],
                    }
                )
        for (kind, level), curve in sorted(self.macro.items()):
            entries.append(
                {
                    "model": kind,
                    "fold": "macro",
                    "level": level,
                    "curve": [_point_jsonable(p) for p in curve],
                }
            )
        return entries

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_jsonable(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "fold", "level", "x", "precision", "recall", "selected"])
            for entry in self.to_jsonable():
                for p in entry["curve"]:
                    writer.writerow(
                        [
                            entry["model"],
                            entry["fold"],
                            entry["level"],
                            p["x"],
                            "" if p["precision"] is None else f"{p['precision']:.9g}",
                            "" if p["recall"] is None else f"{p['recall']:.9g}",
                            "" if p["selected"] is None else p["selected"],
                        ]
                    )


def _point_jsonable(p):
    return {"x": p.x, "precision": p.precision, "recall": p.recall, "selected": p.selected}


def _macro_average(curves):
    """Unweighted mean of precision/recall across folds at each x."""
    points = []
    for i in range(100):
        xs = [c[i] for c in curves]
        precisions = [p.precision for p in xs if p.precision is not None]
        recalls = [p.recall for p in xs if p.recall is not None]
        points.append(
            CurvePoint(
                x=i + 1,
                precision=sum(precisions) / len(precisions) if precisions else None,
                recall=sum(recalls) / len(recalls) if recalls else None,
                selected=None,
            )
        )
    return points


def evaluate(model_specs, table, n_jobs=1):
    """Fit each model on every leave-one-municipality-out fold and score the
    held-out pixels and settlements."""
    folds = spatial_folds(table)
    results = []
    for spec in model_specs:
        for muni, train_idx, test_idx in folds:
            artifact = fit(spec, table.subset(train_idx), n_jobs=n_jobs)
            scores = predict_proba_batch(artifact, table.features[test_idx])
            pixel_units = []
            for pos, i in enumerate(test_idx):
                label = int(table.labels[i])
                pixel_units.append((table.pixel_ids[i], float(scores[pos]), label))
            unit_tags = [
                (table.settlement_ids[i] if table.labels[i] == 1 else table.grid_ids[i], s, l)
                for (_, s, l), i in zip(pixel_units, test_idx)
            ]
            pixel_curve = curve_at_top_x(pixel_units)
            settlement_units = settlement_scores(group_by_unit(unit_tags))
            settlement_curve = curve_at_top_x(settlement_units)
            results.append(
                FoldResult(
                    model_kind=spec.kind,
                    municipality=muni,
                    pixel_curve=pixel_curve,
                    settlement_curve=settlement_curve,
                    pixel_counts={
                        "units": len(pixel_units),
                        "positives": sum(1 for u in pixel_units if u[2] == 1),
                    },
                    settlement_counts={
                        "units": len(settlement_units),
                        "positives": sum(1 for u in settlement_units if u[2] == 1),
                    },
                )
            )

    macro = {}
    kinds = [s.kind for s in model_specs]
    munis = [f[0] for f in folds]
    for kind in kinds:
        for level in ("pixel", "settlement"):
            curves = [
                getattr(f, f"{level}_curve")
                for f in results
                if f.model_kind == kind
            ]
            macro[(kind, level)] = _macro_average(curves)
    return EvaluationReport(
        model_kinds=kinds, municipalities=munis, folds=results, macro=macro
    )
