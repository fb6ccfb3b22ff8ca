"""Exact Shapley attributions of per-class ensemble margins.

Two independent routes compute the same quantity. ``tree_shap`` runs the
polynomial-time path recursion that tracks, for each unique feature on the
path to a leaf, the proportion of feature subsets flowing down ("one
fraction" when the feature is conditioned and matches the sample, "zero
fraction" via cover-weighted averaging when it is not). ``brute_force_shapley``
enumerates all feature subsets of the classic attribution formula; it exists
purely as an oracle for the fast path and refuses more than 20 features.

Both routes share the same value function: a feature subset S evaluates a
tree by following the sample's branch for conditioned features and averaging
children by cover for everything else.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .gbt import Tree, TreeEnsemble
from .ingest import FlowTable


@dataclass
class ShapMatrix:
    """Attributions per (sample, class, feature) plus per-class base values.

    For every sample and class, base + sum of attributions reproduces the
    ensemble margin.
    """

    values: np.ndarray       # (n_samples, n_classes, n_features)
    base_values: np.ndarray  # (n_classes,)
    feature_names: list[str]


@dataclass
class ImportanceRanking:
    """Features ordered by non-increasing score; ties break lexicographically."""

    entries: list[tuple[str, float]]
    scope: str  # "global" or "class:<name>"


def _cond_exp(tree: Tree, x: np.ndarray, in_subset, node: int) -> float:
    if tree.feature[node] < 0:
        return float(tree.value[node])
    f = int(tree.feature[node])
    l, r = int(tree.left[node]), int(tree.right[node])
    if in_subset(f):
        child = l if x[f] < tree.threshold[node] else r
        return _cond_exp(tree, x, in_subset, child)
    total = float(tree.cover[node])
    if total == 0.0:
        raise ValueError("zero cover at an averaged node")
    return (
        tree.cover[l] * _cond_exp(tree, x, in_subset, l)
        + tree.cover[r] * _cond_exp(tree, x, in_subset, r)
    ) / total


def conditional_expectation(tree: Tree, x, feature_subset) -> float:
    """Tree output with features in the subset fixed to x, others cover-averaged."""
    x = np.asarray(x, dtype=np.float64)
    subset = frozenset(int(i) for i in feature_subset)
    return _cond_exp(tree, x, subset.__contains__, 0)


def _cond_exp_mask(tree: Tree, x: np.ndarray, mask: int) -> float:
    return _cond_exp(tree, x, lambda f: (mask >> f) & 1, 0)


def _tree_feature_mask(tree: Tree) -> int:
    mask = 0
    for f in tree.feature:
        if f >= 0:
            mask |= 1 << int(f)
    return mask


def brute_force_shapley(ens: TreeEnsemble, x, class_k: int):
    """Exhaustive-subset Shapley values for one sample and class.

    Returns (phi, phi0) where phi has one entry per feature. Cost grows as
    2^n_features; callable only for 20 features or fewer.
    """
    M = len(ens.feature_names)
    if M > 20:
        raise ValueError(f"brute force refuses {M} features (limit 20)")
    if not 0 <= class_k < ens.n_classes:
        raise ValueError("class index out of range")
    x = np.asarray(x, dtype=np.float64)
    n_sub = 1 << M
    masks = np.arange(n_sub, dtype=np.int64)

    # v[S] = summed conditional expectation of the class trees under subset S.
    # Each tree depends only on S intersected with its own feature set, so we
    # evaluate 2^|D| subsets per tree and gather.
    v = np.zeros(n_sub, dtype=np.float64)
    for tree in ens.class_trees(class_k):
        dmask = _tree_feature_mask(tree)
        if dmask == 0:
            v += _cond_exp_mask(tree, x, 0)
            continue
        ce = np.zeros(n_sub, dtype=np.float64)
        sub = dmask
        while True:
            ce[sub] = _cond_exp_mask(tree, x, sub)
            if sub == 0:
                break
            sub = (sub - 1) & dmask
        v += ce[masks & dmask]

    # phi_i = sum over subsets S without i of
    #         |S|! (M-|S|-1)! / M! * (v[S+i] - v[S])
    weights = np.array(
        [
            math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M)
            for s in range(M)
        ]
    )
    sizes = np.bitwise_count(masks)
    phi = np.empty(M, dtype=np.float64)
    for i in range(M):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = float(np.sum(weights[sizes[without]] * (v[without | bit] - v[without])))
    phi0 = float(v[0]) + ens.base_score
    return phi, phi0


def _extend(feats, zeros, ones, pweights, pz, po, pi):
    depth = len(feats)
    feats.append(pi)
    zeros.append(pz)
    ones.append(po)
    pweights.append(1.0 if depth == 0 else 0.0)
    for i in range(depth - 1, -1, -1):
        pweights[i + 1] += po * pweights[i] * (i + 1) / (depth + 1)
        pweights[i] = pz * pweights[i] * (depth - i) / (depth + 1)


def _unwind(feats, zeros, ones, pweights, path_index):
    depth = len(feats) - 1
    one = ones[path_index]
    zero = zeros[path_index]
    carry = pweights[depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pweights[i]
            pweights[i] = carry * (depth + 1) / ((i + 1) * one)
            carry = tmp - pweights[i] * zero * (depth - i) / (depth + 1)
        else:
            pweights[i] = pweights[i] * (depth + 1) / (zero * (depth - i))
    for i in range(path_index, depth):
        feats[i] = feats[i + 1]
        zeros[i] = zeros[i + 1]
        ones[i] = ones[i + 1]
    feats.pop()
    zeros.pop()
    ones.pop()
    pweights.pop()


def _unwound_sum(feats, zeros, ones, pweights, path_index):
    depth = len(feats) - 1
    one = ones[path_index]
    zero = zeros[path_index]
    carry = pweights[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = carry * (depth + 1) / ((i + 1) * one)
            total += tmp
            carry = pweights[i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += pweights[i] / zero * (depth + 1) / (depth - i)
    return total


def _shap_recurse(tree, x, phi, node, feats, zeros, ones, pweights, pz, po, pi):
    feats = feats.copy()
    zeros = zeros.copy()
    ones = ones.copy()
    pweights = pweights.copy()
    _extend(feats, zeros, ones, pweights, pz, po, pi)

    if tree.feature[node] < 0:
        leaf = float(tree.value[node])
        for i in range(1, len(feats)):
            w = _unwound_sum(feats, zeros, ones, pweights, i)
            phi[feats[i]] += w * (ones[i] - zeros[i]) * leaf
        return

    f = int(tree.feature[node])
    l, r = int(tree.left[node]), int(tree.right[node])
    hot, cold = (l, r) if x[f] < tree.threshold[node] else (r, l)
    total = float(tree.cover[node])
    if total == 0.0:
        raise ValueError("zero cover at an averaged node")
    hot_zero = float(tree.cover[hot]) / total
    cold_zero = float(tree.cover[cold]) / total

    # A feature already on the path is unwound and re-extended so its one and
    # zero fractions multiply instead of double-counting.
    incoming_zero = 1.0
    incoming_one = 1.0
    for k in range(1, len(feats)):
        if feats[k] == f:
            incoming_zero = zeros[k]
            incoming_one = ones[k]
            _unwind(feats, zeros, ones, pweights, k)
            break

    _shap_recurse(tree, x, phi, hot, feats, zeros, ones, pweights,
                  hot_zero * incoming_zero, incoming_one, f)
    _shap_recurse(tree, x, phi, cold, feats, zeros, ones, pweights,
                  cold_zero * incoming_zero, 0.0, f)


def _tree_shap_single(tree: Tree, x: np.ndarray, phi: np.ndarray) -> None:
    _shap_recurse(tree, x, phi, 0, [], [], [], [], 1.0, 1.0, -1)


def _root_expectation(tree: Tree) -> float:
    """Cover-weighted mean of all leaves (the unconditioned tree output)."""
    return _cond_exp_mask(tree, np.zeros(0), 0)


def tree_shap(ens: TreeEnsemble, table: FlowTable) -> ShapMatrix:
    """Exact attributions of every per-class margin over all table rows."""
    if list(table.feature_names) != list(ens.feature_names):
        raise ValueError("table features do not match the model")
    n = table.n_rows
    K = ens.n_classes
    M = len(ens.feature_names)
    values = np.zeros((n, K, M), dtype=np.float64)
    base = np.full(K, ens.base_score, dtype=np.float64)
    for t_idx, tree in enumerate(ens.trees):
        base[t_idx % K] += _root_expectation(tree)
    X = table.features
    for s in range(n):
        x = X[s]
        for t_idx, tree in enumerate(ens.trees):
            _tree_shap_single(tree, x, values[s, t_idx % K])
    return ShapMatrix(values=values, base_values=base, feature_names=list(ens.feature_names))


def _ranked(names, scores, scope) -> ImportanceRanking:
    order = sorted(zip(names, scores), key=lambda kv: (-kv[1], kv[0]))
    return ImportanceRanking(entries=[(n, float(s)) for n, s in order], scope=scope)


def global_importance(shap: ShapMatrix) -> ImportanceRanking:
    """Mean absolute attribution per class, summed across classes."""
    if shap.values.shape[0] == 0:
        raise ValueError("empty attribution matrix")
    scores = np.abs(shap.values).mean(axis=0).sum(axis=0)
    return _ranked(shap.feature_names, scores, "global")


def per_class_importance(shap: ShapMatrix, class_k: int) -> ImportanceRanking:
    """Mean absolute attribution for one class."""
    if not 0 <= class_k < shap.values.shape[1]:
        raise ValueError("class index out of range")
    if shap.values.shape[0] == 0:
        raise ValueError("empty attribution matrix")
    scores = np.abs(shap.values[:, class_k, :]).mean(axis=0)
    return _ranked(shap.feature_names, scores, f"class:{class_k}")


def write_shap_csv(shap: ShapMatrix, class_names, path) -> None:
    """Long-form export: one row per (sample_index, class, feature)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "class", "feature", "phi"])
        n, K, M = shap.values.shape
        for s in range(n):
            for k in range(K):
                for i in range(M):
                    writer.writerow(
                        [s, class_names[k], shap.feature_names[i], repr(float(shap.values[s, k, i]))]
                    )


def write_base_values_json(shap: ShapMatrix, class_names, path) -> None:
    doc = {"base_values": {class_names[k]: float(shap.base_values[k]) for k in range(len(class_names))}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_ranking_csv(ranking: ImportanceRanking, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "feature", "score"])
        for rank, (name, score) in enumerate(ranking.entries, start=1):
            writer.writerow([rank, name, repr(score)])
