"""The three pixel classifiers: logistic regression, linear SVM, random forest.

All three share one output contract: predict_proba yields a score in [0, 1].
For the linear models that is a sigmoid of the (standardized-space) margin;
for the forest it is the mean of per-tree leaf positive fractions. Training
is deterministic given the spec seed; forest trees may be trained in parallel
because tree i always uses seed + i.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

MODEL_KINDS = ("logistic", "linear_svm", "random_forest")
FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Model file has a wrong version or a corrupt payload."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    # random forest
    n_trees: int = 800
    max_depth: int = 12
    min_samples_leaf: int = 2
    min_samples_split: int = 15
    criterion: str = "gini"
    features_per_split: int | None = None  # None -> round(sqrt(n_features))
    bootstrap: bool = True
    # linear models
    l2_lambda: float = 1e-4
    learning_rate: float = 0.1
    epochs: int = 100
    svm_c: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}")
        if self.criterion != "gini":
            raise ValueError("only the gini criterion is supported")
        if min(self.n_trees, self.min_samples_leaf, self.min_samples_split, self.epochs) <= 0:
            raise ValueError("counts must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass
class ModelArtifact:
    spec: ModelSpec
    feature_names: tuple
    standardization: dict | None
    parameters: dict
    training_digest: dict

    @property
    def n_features(self):
        return len(self.feature_names)


def gini_impurity(labels):
    """1 - p0^2 - p1^2 for a multiset of binary labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise ValueError("gini impurity of an empty label set is undefined")
    c1 = int(labels.sum())
    return _gini_counts(n - c1, c1, n)


def _gini_counts(c0, c1, n):
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - p0 * p0 - p1 * p1


def find_best_split(X, y, features=None, min_leaf=1):
    """Best (feature, threshold, impurity_decrease) over the candidate features.

    Thresholds are midpoints between consecutive distinct sorted values; the
    winner maximizes the weighted gini decrease, ties broken by lowest
    feature index then lowest threshold. Returns None when no split gives a
    strictly positive decrease (or none leaves min_leaf rows on both sides).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    return _best_split_on(X, y, np.arange(y.size), features, min_leaf)


def _best_split_on(X, y, idx, features, min_leaf):
    n = idx.size
    y_node = y[idx]
    pos_total = int(y_node.sum())
    parent = _gini_counts(n - pos_total, pos_total, n)
    if features is None:
        features = range(X.shape[1])
    best = None
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs)
        xv = xs[order]
        cum_pos = np.cumsum(y_node[order])
        cut = np.nonzero(xv[1:] != xv[:-1])[0]  # split after sorted position cut
        if min_leaf > 1:
            nl_ok = cut + 1 >= min_leaf
            nr_ok = n - cut - 1 >= min_leaf
            cut = cut[nl_ok & nr_ok]
        if cut.size == 0:
            continue
        nl = (cut + 1).astype(np.float64)
        nr = n - nl
        c1l = cum_pos[cut].astype(np.float64)
        c0l = nl - c1l
        c1r = pos_total - c1l
        c0r = nr - c1r
        gl = _gini_counts(c0l, c1l, nl)
        gr = _gini_counts(c0r, c1r, nr)
        dec = parent - (nl / n) * gl - (nr / n) * gr
        k = int(np.argmax(dec))
        if dec[k] > 0.0 and (best is None or dec[k] > best[2]):
            thr = (xv[cut[k]] + xv[cut[k] + 1]) / 2.0
            best = (int(f), float(thr), float(dec[k]))
    return best


def _grow_tree(X, y, rng, mtry, max_depth, min_split, min_leaf):
    """CART tree as flat arrays; mtry=None searches all features (no rng use)."""
    feature, threshold, left, right, value = [], [], [], [], []

    def rec(idx, depth):
        nid = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        n = idx.size
        pos = int(y[idx].sum())
        value.append(pos / n)
        if depth >= max_depth or n < min_split or pos == 0 or pos == n:
            return nid
        if mtry is None:
            feats = None
        else:
            feats = np.sort(rng.choice(X.shape[1], size=mtry, replace=False))
        best = _best_split_on(X, y, idx, feats, min_leaf)
        if best is None:
            return nid
        f, thr, _ = best
        go_left = X[idx, f] <= thr
        feature[nid] = f
        threshold[nid] = thr
        left[nid] = rec(idx[go_left], depth + 1)
        right[nid] = rec(idx[~go_left], depth + 1)
        return nid

    rec(np.arange(y.size, dtype=np.intp), 0)
    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=np.float64),
    }


def fit_tree(X, y, max_depth=12, min_samples_split=15, min_samples_leaf=2):
    """A single deterministic CART tree over all features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    return _grow_tree(X, y, rng=None, mtry=None, max_depth=max_depth,
                      min_split=min_samples_split, min_leaf=min_samples_leaf)


def tree_leaf_values(tree, X):
    """Route rows of X to leaves; returns each row's leaf positive fraction."""
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    feature = tree["feature"]
    threshold = tree["threshold"]
    left = tree["left"]
    right = tree["right"]
    active = np.nonzero(feature[node] >= 0)[0]
    while active.size:
        cur = node[active]
        go_left = X[active, feature[cur]] <= threshold[cur]
        node[active] = np.where(go_left, left[cur], right[cur])
        active = active[feature[node[active]] >= 0]
    return tree["value"][node]


# worker-process state for parallel forest training
_WORKER = {}


def _init_worker(X, y, grow_kwargs, seed, bootstrap):
    _WORKER.update(X=X, y=y, kw=grow_kwargs, seed=seed, bootstrap=bootstrap)


def _train_one_tree(i, X, y, grow_kwargs, seed, bootstrap):
    rng = np.random.default_rng(seed + i)
    if bootstrap:
        idx = rng.integers(0, y.size, y.size)
        return _grow_tree(X[idx], y[idx], rng=rng, **grow_kwargs)
    return _grow_tree(X, y, rng=rng, **grow_kwargs)


def _worker_train(i):
    w = _WORKER
    return _train_one_tree(i, w["X"], w["y"], w["kw"], w["seed"], w["bootstrap"])


def _fit_forest(spec, X, y, n_jobs):
    d = X.shape[1]
    mtry = spec.features_per_split
    if mtry is None:
        mtry = int(round(np.sqrt(d)))
    mtry = max(1, min(mtry, d))
    grow_kwargs = {
        "mtry": mtry,
        "max_depth": spec.max_depth,
        "min_split": spec.min_samples_split,
        "min_leaf": spec.min_samples_leaf,
    }
    if n_jobs > 1 and spec.n_trees > 1:
        with ProcessPoolExecutor(
            max_workers=n_jobs,
            initializer=_init_worker,
            initargs=(X, y, grow_kwargs, spec.seed, spec.bootstrap),
        ) as pool:
            trees = list(pool.map(_worker_train, range(spec.n_trees), chunksize=4))
    else:
        trees = [
            _train_one_tree(i, X, y, grow_kwargs, spec.seed, spec.bootstrap)
            for i in range(spec.n_trees)
        ]
    return {"trees": trees}


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_and_grad(w, b, X, y, l2_lambda):
    """Mean cross-entropy plus 0.5*l2*||w||^2, with its analytic gradient."""
    z = X @ w + b
    p = _sigmoid(z)
    n = y.size
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2_lambda * np.dot(w, w))
    resid = p - y
    grad_w = X.T @ resid / n + l2_lambda * w
    grad_b = float(np.mean(resid))
    return loss, grad_w, grad_b


def _standardize_fit(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


def _fit_logistic(spec, X, y):
    mean, std = _standardize_fit(X)
    Xs = (X - mean) / std
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(spec.epochs):
        _, gw, gb = logistic_loss_and_grad(w, b, Xs, y, spec.l2_lambda)
        w = w - spec.learning_rate * gw
        b = b - spec.learning_rate * gb
    return mean, std, {"weights": w.tolist(), "bias": float(b)}


def _fit_linear_svm(spec, X, y):
    """Subgradient descent on 0.5*||w||^2 + C * mean(hinge)."""
    mean, std = _standardize_fit(X)
    Xs = (X - mean) / std
    ysig = 2.0 * y - 1.0
    n = y.size
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(spec.epochs):
        margin = ysig * (Xs @ w + b)
        viol = margin < 1.0
        gw = w - spec.svm_c * (Xs[viol].T @ ysig[viol]) / n
        gb = -spec.svm_c * float(ysig[viol].sum()) / n
        w = w - spec.learning_rate * gw
        b = b - spec.learning_rate * gb
    return mean, std, {"weights": w.tolist(), "bias": float(b)}


def fit(spec, table, n_jobs=1):
    """Train the spec's model on a FeatureTable; deterministic given spec.seed."""
    X = np.ascontiguousarray(table.features, dtype=np.float64)
    y = np.asarray(table.labels, dtype=np.int64)
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    pos = int(y.sum())
    if pos == 0 or pos == y.size:
        raise ValueError("training data must contain both classes")

    standardization = None
    if spec.kind == "random_forest":
        parameters = _fit_forest(spec, X, y, n_jobs)
    elif spec.kind == "logistic":
        mean, std, parameters = _fit_logistic(spec, X, y)
        standardization = {"mean": mean.tolist(), "std": std.tolist()}
    else:
        mean, std, parameters = _fit_linear_svm(spec, X, y)
        standardization = {"mean": mean.tolist(), "std": std.tolist()}

    return ModelArtifact(
        spec=spec,
        feature_names=_default_names(X.shape[1]),
        standardization=standardization,
        parameters=parameters,
        training_digest={"rows": int(y.size), "positives": pos, "negatives": int(y.size - pos)},
    )


def _default_names(d):
    from .features import FEATURE_NAMES

    if d == len(FEATURE_NAMES):
        return FEATURE_NAMES
    return tuple(f"f{i:02d}" for i in range(d))


def predict_proba_batch(artifact, X):
    """Scores in [0, 1] for an (n, n_features) matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != artifact.n_features:
        raise ValueError(f"expected (n, {artifact.n_features}) features, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    if artifact.spec.kind == "random_forest":
        trees = artifact.parameters["trees"]
        acc = np.zeros(X.shape[0], dtype=np.float64)
        for tree in trees:
            acc += tree_leaf_values(tree, X)
        return acc / len(trees)
    std = artifact.standardization
    Xs = (X - np.asarray(std["mean"])) / np.asarray(std["std"])
    w = np.asarray(artifact.parameters["weights"], dtype=np.float64)
    b = float(artifact.parameters["bias"])
    return _sigmoid(Xs @ w + b)


def predict_proba(artifact, features):
    """Score one feature vector."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != artifact.n_features:
        raise ValueError(f"expected {artifact.n_features} feature values")
    return float(predict_proba_batch(artifact, arr[np.newaxis])[0])


def _trees_to_jsonable(trees):
    return [
        {
            "feature": t["feature"].tolist(),
            "threshold": t["threshold"].tolist(),
            "left": t["left"].tolist(),
            "right": t["right"].tolist(),
            "value": t["value"].tolist(),
        }
        for t in trees
    ]


def _trees_from_jsonable(trees):
    return [
        {
            "feature": np.asarray(t["feature"], dtype=np.int64),
            "threshold": np.asarray(t["threshold"], dtype=np.float64),
            "left": np.asarray(t["left"], dtype=np.int64),
            "right": np.asarray(t["right"], dtype=np.int64),
            "value": np.asarray(t["value"], dtype=np.float64),
        }
        for t in trees
    ]


def save_model(artifact, path):
    """Serialize to JSON with full float precision; stable byte output."""
    parameters = dict(artifact.parameters)
    if "trees" in parameters:
        parameters["trees"] = _trees_to_jsonable(parameters["trees"])
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": asdict(artifact.spec),
        "feature_names": list(artifact.feature_names),
        "standardization": artifact.standardization,
        "parameters": parameters,
        "training_digest": artifact.training_digest,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    try:
        spec = ModelSpec(**doc["spec"])
        parameters = dict(doc["parameters"])
        if "trees" in parameters:
            parameters["trees"] = _trees_from_jsonable(parameters["trees"])
        return ModelArtifact(
            spec=spec,
            feature_names=tuple(doc["feature_names"]),
            standardization=doc["standardization"],
            parameters=parameters,
            training_digest=doc["training_digest"],
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc
