"""Independent brute-force reference implementations used by the tests.

Each oracle deliberately takes a different route than the library code:
per-pixel Python loops instead of vectorized numpy, exhaustive enumeration
instead of incremental scans, and algebraically rearranged index formulas.
"""

import math
from fractions import Fraction

import numpy as np


# --- median compositing ---------------------------------------------------

def median_oracle_pixel(values, nodata):
    """Sort-and-select median of a list of float32 observations."""
    vals = sorted(float(v) for v in values)
    n = len(vals)
    if n == 0:
        return np.float32(nodata)
    if n % 2 == 1:
        return np.float32(vals[n // 2])
    return np.float32((vals[n // 2 - 1] + vals[n // 2]) / 2)


def median_composite_oracle(stacks, masks, nodata):
    """Per-pixel loop over a (scenes, h, w) stack with 0/1 masks."""
    _, h, w = stacks.shape
    out = np.empty((h, w), dtype=np.float32)
    for r in range(h):
        for c in range(w):
            vals = [stacks[s, r, c] for s in range(stacks.shape[0]) if masks[s, r, c] == 1]
            out[r, c] = median_oracle_pixel(vals, nodata)
    return out


# --- spectral indices: algebraically rearranged second implementations ----

def index_oracles(b, savi_l=0.5, baei_c=0.3):
    """All ten indices from 12 band columns, each via a different arithmetic
    ordering than the library. Assumes nonzero denominators."""
    b1, b2, b3, b4, b5, b6, b7, b8, b8A, b9, b11, b12 = (np.asarray(x, dtype=np.float64) for x in b)
    ndvi = b8 / (b8 + b4) - b4 / (b8 + b4)
    savi = ((b8A - b4) + (b8A - b4) * savi_l) / ((b8A + b4) + savi_l)
    mndwi = b3 / (b3 + b11) - b11 / (b3 + b11)
    ndbi = (b11 - b8) * (1.0 / (b11 + b8))
    ui = b7 / (b7 + b5) - b5 / (b7 + b5)
    nbi = b4 * (b11 / b8A)
    brba = b4 * (1.0 / b11)
    nbai = (b11 * b3 - b12) / (b11 * b3 + b12)
    mbi = (b12 * b4) / (b4 + b8A + b12) - (b8A * b8A) / (b4 + b8A + b12)
    baei = (b4 + baei_c) * (1.0 / (b3 + b11))
    return {
        "NDVI": ndvi, "SAVI": savi, "MNDWI": mndwi, "NDBI": ndbi, "UI": ui,
        "NBI": nbi, "BRBA": brba, "NBAI": nbai, "MBI": mbi, "BAEI": baei,
    }


# --- point in polygon (convex case) ----------------------------------------

def convex_contains(vertices, x, y):
    """Strict containment in a convex CCW polygon via edge cross products."""
    pts = list(vertices)
    if pts[0] == pts[-1]:
        pts = pts[:-1]
    for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
        if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) <= 0:
            return False
    return True


# --- gini / best split ------------------------------------------------------

def gini_oracle(labels):
    labels = list(labels)
    n = len(labels)
    c1 = sum(1 for v in labels if v == 1)
    c0 = n - c1
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - p0 * p0 - p1 * p1


def best_split_oracle(X, y, min_leaf=1):
    """Exhaustive search over every (feature, midpoint) pair."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = y.size
    parent = gini_oracle(y)
    best = None
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f].tolist()))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2.0
            left = y[X[:, f] <= thr]
            right = y[X[:, f] > thr]
            if left.size < min_leaf or right.size < min_leaf:
                continue
            dec = parent - (left.size / n) * gini_oracle(left) - (right.size / n) * gini_oracle(right)
            if dec > 0.0 and (best is None or dec > best[2]):
                best = (f, thr, dec)
    return best


# --- ranking curves ----------------------------------------------------------

def curve_oracle(units):
    """Recount tp/fp/fn at each x over an explicitly materialized ranking."""
    ranked = sorted(units, key=lambda u: (-u[1], u[0]))
    n = len(ranked)
    total_pos = sum(1 for u in ranked if u[2] == 1)
    points = []
    for x in range(1, 101):
        k = math.ceil(Fraction(x * n, 100))
        chosen = ranked[:k]
        tp = sum(1 for u in chosen if u[2] == 1)
        fp = k - tp
        fn = total_pos - tp
        precision = tp / (tp + fp) if tp + fp > 0 else None
        recall = tp / (tp + fn) if tp + fn > 0 else None
        points.append((x, precision, recall, k))
    return points


def top_fraction_mean_oracle(scores, fraction=Fraction(1, 10)):
    """Mean of the top ceil(fraction * m) values, by explicit sort."""
    ordered = sorted((float(s) for s in scores), reverse=True)
    k = math.ceil(fraction * len(ordered))
    return sum(ordered[:k]) / k
