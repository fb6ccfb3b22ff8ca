"""Regularized gradient-boosted decision trees with a multiclass softmax objective.

Trees are grown by exact greedy split enumeration: every boundary between
distinct sorted feature values is scored with the second-order gain

    gain = 1/2 * [ T(GL)^2/(HL+lambda) + T(GR)^2/(HR+lambda)
                   - T(GL+GR)^2/(HL+HR+lambda) ] - gamma

where T is the L1 soft-threshold applied when alpha > 0. Leaf values are
-T(G)/(H+lambda) scaled by the learning rate. Training is fully
deterministic for fixed inputs.
"""

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .ingest import FlowTable

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Rejected model document: bad version, malformed nodes, or NaN values."""


@dataclass(frozen=True)
class Hyperparams:
    n_estimators: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    objective: str = "multiclass_softmax"
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be nonnegative")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if min(self.min_child_weight, self.gamma, self.reg_lambda, self.reg_alpha) < 0:
            raise ValueError("regularization terms must be nonnegative")
        if self.objective != "multiclass_softmax":
            raise ValueError(f"unsupported objective {self.objective!r}")


@dataclass
class Tree:
    """One regression tree as parallel node arrays; -1 children mark leaves.

    Routing sends a sample left iff feature value < threshold. ``cover`` is
    the hessian-weighted sample mass that reached each node during training.
    """

    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, 0.0 at leaves
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float64, leaf value at leaves, 0.0 elsewhere
    cover: np.ndarray      # float64

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_internal(self) -> int:
        return int((self.feature >= 0).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Leaf values reached by routing each row of X."""
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int32)
        rows = np.arange(n)
        while True:
            feat = self.feature[node]
            live = np.nonzero(feat >= 0)[0]
            if live.size == 0:
                break
            at = node[live]
            goleft = X[rows[live], feat[live]] < self.threshold[at]
            node[live] = np.where(goleft, self.left[at], self.right[at])
        return self.value[node]


@dataclass
class TreeEnsemble:
    """Boosted trees ordered round-major, class-minor (round r, class k -> r*K + k)."""

    trees: list[Tree]
    n_classes: int
    base_score: float
    feature_names: list[str]
    class_names: list[str]
    hyperparams: Hyperparams

    def class_trees(self, k: int) -> list[Tree]:
        return self.trees[k :: self.n_classes]


def _softmax_rows(margins: np.ndarray) -> np.ndarray:
    z = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _grad_hess_matrix(margins, labels, weights):
    p = _softmax_rows(margins)
    g = weights[:, None] * p
    g[np.arange(labels.shape[0]), labels] -= weights
    h = weights[:, None] * p * (1.0 - p)
    return g, h


def softmax_grad_hess(margins, true_class: int, weight: float):
    """Gradient and hessian of weighted softmax cross-entropy at one sample."""
    m = np.asarray(margins, dtype=np.float64)
    if m.ndim != 1 or m.shape[0] < 2:
        raise ValueError("margins must be a vector over at least 2 classes")
    if not 0 <= true_class < m.shape[0]:
        raise ValueError("true_class out of range")
    if weight <= 0:
        raise ValueError("weight must be positive")
    g, h = _grad_hess_matrix(
        m[None, :], np.array([true_class]), np.array([float(weight)])
    )
    return g[0], h[0]


def _soft_threshold(g, alpha: float):
    if alpha <= 0:
        return g
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


def _gain_terms(G, H, hp: Hyperparams):
    Gt = _soft_threshold(np.asarray(G, dtype=np.float64), hp.reg_alpha)
    denom = np.asarray(H, dtype=np.float64) + hp.reg_lambda
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, Gt * Gt / np.where(denom > 0, denom, 1.0), 0.0)
    return out


def split_gain(GL: float, HL: float, GR: float, HR: float, hp: Hyperparams) -> float:
    """Gain of a candidate split from aggregated child gradients/hessians."""
    return float(
        0.5
        * (
            _gain_terms(GL, HL, hp)
            + _gain_terms(GR, HR, hp)
            - _gain_terms(GL + GR, HL + HR, hp)
        )
        - hp.gamma
    )


def _best_split(X, rows, g, h, hp: Hyperparams):
    """Exact greedy search over all features and distinct-value boundaries.

    Returns (feature_index, threshold, gain) or None. Ties go to the lower
    feature index, then the lower threshold.
    """
    gr = g[rows]
    hr = h[rows]
    G = float(gr.sum())
    H = float(hr.sum())
    parent = _gain_terms(G, H, hp)
    best = None
    for f in range(X.shape[1]):
        v = X[rows, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        if sv[0] == sv[-1]:
            continue
        GL = np.cumsum(gr[order])
        HL = np.cumsum(hr[order])
        cuts = np.nonzero(sv[:-1] < sv[1:])[0]
        GLc, HLc = GL[cuts], HL[cuts]
        GRc, HRc = G - GLc, H - HLc
        gains = (
            0.5 * (_gain_terms(GLc, HLc, hp) + _gain_terms(GRc, HRc, hp) - parent)
            - hp.gamma
        )
        ok = (HLc >= hp.min_child_weight) & (HRc >= hp.min_child_weight)
        gains = np.where(ok, gains, -np.inf)
        i = int(np.argmax(gains))  # first maximum = lowest threshold
        gain = float(gains[i])
        if gain <= 0.0:
            continue
        if best is None or gain > best[2]:
            lo, hi = sv[cuts[i]], sv[cuts[i] + 1]
            thr = (lo + hi) / 2.0
            if thr <= lo:  # adjacent floats can collapse the midpoint
                thr = hi
            best = (f, float(thr), gain)
    return best


def find_best_split(node_rows, g, h, table: FlowTable, hp: Hyperparams):
    """Best qualifying split for the given rows, or None to make a leaf."""
    rows = np.asarray(node_rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("node_rows must be nonempty")
    return _best_split(table.features, rows, np.asarray(g), np.asarray(h), hp)


def _leaf_value(G: float, H: float, hp: Hyperparams) -> float:
    Gt = float(_soft_threshold(np.float64(G), hp.reg_alpha))
    denom = H + hp.reg_lambda
    if denom <= 0:
        return 0.0
    return -Gt / denom * hp.learning_rate


def _grow_tree(X, g, h, hp: Hyperparams) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    cover: list[float] = []

    def grow(rows, depth) -> int:
        idx = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(float(h[rows].sum()))
        split = _best_split(X, rows, g, h, hp) if depth < hp.max_depth else None
        if split is None:
            value[idx] = _leaf_value(float(g[rows].sum()), float(h[rows].sum()), hp)
        else:
            f, thr, _ = split
            feature[idx] = f
            threshold[idx] = thr
            mask = X[rows, f] < thr
            left[idx] = grow(rows[mask], depth + 1)
            right[idx] = grow(rows[~mask], depth + 1)
        return idx

    grow(np.arange(X.shape[0], dtype=np.int64), 0)
    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        cover=np.array(cover, dtype=np.float64),
    )


def train(train_table: FlowTable, hp: Hyperparams) -> TreeEnsemble:
    """Boost one tree per class per round against the softmax objective.

    Gradients are refreshed once per round from the current margins; one
    (round, class) pair that admits no qualifying split still stores its
    single-leaf tree so the round-major/class-minor indexing stays dense.
    """
    X = train_table.features
    y = train_table.labels
    w = train_table.sample_weights
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty table")
    if np.unique(y).size < 2:
        raise ValueError("training requires at least 2 classes present")
    K = len(train_table.class_names)
    margins = np.full((n, K), hp.base_score, dtype=np.float64)
    trees: list[Tree] = []
    for _ in range(hp.n_estimators):
        g, h = _grad_hess_matrix(margins, y, w)
        for k in range(K):
            tree = _grow_tree(X, g[:, k], h[:, k], hp)
            trees.append(tree)
            margins[:, k] += tree.predict(X)
    return TreeEnsemble(
        trees=trees,
        n_classes=K,
        base_score=hp.base_score,
        feature_names=list(train_table.feature_names),
        class_names=list(train_table.class_names),
        hyperparams=hp,
    )


def predict_margins(ens: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    """Per-class additive scores for every row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(ens.feature_names):
        raise ValueError(
            f"expected {len(ens.feature_names)} features, got {X.shape[1] if X.ndim == 2 else 'a non-matrix'}"
        )
    out = np.full((X.shape[0], ens.n_classes), ens.base_score, dtype=np.float64)
    for i, tree in enumerate(ens.trees):
        out[:, i % ens.n_classes] += tree.predict(X)
    return out


def predict_margin(ens: TreeEnsemble, x) -> np.ndarray:
    """Per-class score for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(ens.feature_names),):
        raise ValueError(f"expected {len(ens.feature_names)} features, got {x.shape}")
    return predict_margins(ens, x[None, :])[0]


def predict_classes(ens: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    return np.argmax(predict_margins(ens, X), axis=1)


def predict_class(ens: TreeEnsemble, x) -> int:
    """argmax over margins; ties resolve to the lowest class index."""
    return int(np.argmax(predict_margin(ens, x)))


def _hyperparams_to_json(hp: Hyperparams) -> dict:
    return {
        "n_estimators": hp.n_estimators,
        "learning_rate": hp.learning_rate,
        "max_depth": hp.max_depth,
        "min_child_weight": hp.min_child_weight,
        "gamma": hp.gamma,
        "lambda": hp.reg_lambda,
        "alpha": hp.reg_alpha,
        "objective": hp.objective,
        "base_score": hp.base_score,
        "seed": hp.seed,
    }


def _hyperparams_from_json(doc: dict) -> Hyperparams:
    try:
        return Hyperparams(
            n_estimators=int(doc["n_estimators"]),
            learning_rate=float(doc["learning_rate"]),
            max_depth=int(doc["max_depth"]),
            min_child_weight=float(doc["min_child_weight"]),
            gamma=float(doc["gamma"]),
            reg_lambda=float(doc["lambda"]),
            reg_alpha=float(doc["alpha"]),
            objective=str(doc["objective"]),
            base_score=float(doc["base_score"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad hyperparams block: {exc}") from exc


def _tree_to_nodes(tree: Tree) -> list[dict]:
    nodes = []
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0:
            nodes.append(
                {
                    "kind": "split",
                    "feature": int(tree.feature[i]),
                    "threshold": float(tree.threshold[i]),
                    "left": int(tree.left[i]),
                    "right": int(tree.right[i]),
                    "value": None,
                    "cover": float(tree.cover[i]),
                }
            )
        else:
            nodes.append(
                {
                    "kind": "leaf",
                    "feature": None,
                    "threshold": None,
                    "left": None,
                    "right": None,
                    "value": float(tree.value[i]),
                    "cover": float(tree.cover[i]),
                }
            )
    return nodes


def _tree_from_nodes(nodes: list, n_features: int) -> Tree:
    count = len(nodes)
    if count == 0:
        raise ModelFormatError("tree has no nodes")
    feature = np.full(count, -1, dtype=np.int32)
    threshold = np.zeros(count, dtype=np.float64)
    left = np.full(count, -1, dtype=np.int32)
    right = np.full(count, -1, dtype=np.int32)
    value = np.zeros(count, dtype=np.float64)
    cover = np.zeros(count, dtype=np.float64)
    for i, node in enumerate(nodes):
        if not isinstance(node, dict) or "kind" not in node:
            raise ModelFormatError(f"node {i} is not a tagged object")
        kind = node["kind"]
        try:
            cover[i] = float(node.get("cover", 0.0))
            if kind == "split":
                f = node["feature"]
                if not isinstance(f, int) or not 0 <= f < n_features:
                    raise ModelFormatError(f"node {i}: feature index {f!r} out of range")
                thr = float(node["threshold"])
                if math.isnan(thr):
                    raise ModelFormatError(f"node {i}: NaN threshold")
                l, r = node["left"], node["right"]
                if not all(isinstance(c, int) and 0 <= c < count for c in (l, r)):
                    raise ModelFormatError(f"node {i}: child index out of range")
                feature[i] = f
                threshold[i] = thr
                left[i] = l
                right[i] = r
            elif kind == "leaf":
                value[i] = float(node["value"])
            else:
                raise ModelFormatError(f"node {i}: unknown kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"node {i}: missing or malformed field: {exc}") from exc
    return Tree(feature, threshold, left, right, value, cover)


def serialize(ens: TreeEnsemble) -> bytes:
    """Versioned UTF-8 JSON document with exact float round-trip."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "hyperparams": _hyperparams_to_json(ens.hyperparams),
        "classes": list(ens.class_names),
        "features": list(ens.feature_names),
        "base_score": ens.base_score,
        "trees": [{"nodes": _tree_to_nodes(t)} for t in ens.trees],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _reject_constant(token: str):
    raise ModelFormatError(f"non-finite literal {token!r} in model document")


def deserialize(data: bytes) -> TreeEnsemble:
    try:
        doc = json.loads(
            data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data,
            parse_constant=_reject_constant,
        )
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be an object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format_version {version!r}; this build reads version {MODEL_FORMAT_VERSION}"
        )
    try:
        classes = [str(c) for c in doc["classes"]]
        features = [str(f) for f in doc["features"]]
        base_score = float(doc["base_score"])
        tree_docs = doc["trees"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"missing or malformed field: {exc}") from exc
    hp = _hyperparams_from_json(doc.get("hyperparams", {}))
    trees = []
    for t in tree_docs:
        if not isinstance(t, dict) or "nodes" not in t:
            raise ModelFormatError("each tree must be an object with a nodes array")
        trees.append(_tree_from_nodes(t["nodes"], len(features)))
    return TreeEnsemble(
        trees=trees,
        n_classes=len(classes),
        base_score=base_score,
        feature_names=features,
        class_names=classes,
        hyperparams=hp,
    )


def save_model(ens: TreeEnsemble, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(ens))


def load_model(path) -> TreeEnsemble:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def timed_train(train_table: FlowTable, hp: Hyperparams):
    """Train and return (ensemble, wall-clock seconds)."""
    t0 = time.perf_counter()
    ens = train(train_table, hp)
    return ens, time.perf_counter() - t0
