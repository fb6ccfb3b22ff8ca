"""Shared fixtures and independent oracle helpers."""

import csv

import numpy as np
import pytest

import flowshap as fs

# Published per-class train/test sample counts of the SCVIC-APT-2021 benchmark.
SCVIC_TRAIN_COUNTS = {
    "Normal Traffic": 246253,
    "Reconnaissance": 867,
    "Initial Compromise": 120,
    "Lateral Movement": 695,
    "Pivoting": 1986,
    "Data Exfiltration": 481,
}
SCVIC_TEST_COUNTS = {
    "Normal Traffic": 61564,
    "Reconnaissance": 217,
    "Initial Compromise": 30,
    "Lateral Movement": 174,
    "Pivoting": 496,
    "Data Exfiltration": 120,
}
SCVIC_TOTAL_COUNTS = {k: SCVIC_TRAIN_COUNTS[k] + SCVIC_TEST_COUNTS[k] for k in SCVIC_TRAIN_COUNTS}


def make_table(X, y, n_classes=None, weights=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    K = n_classes if n_classes is not None else int(y.max()) + 1
    return fs.FlowTable(
        feature_names=[f"f{i}" for i in range(X.shape[1])],
        features=X,
        labels=y,
        class_names=[f"c{k}" for k in range(K)],
        sample_weights=np.ones(len(y)) if weights is None else np.asarray(weights, float),
    )


def separable_table(n=100, seed=3):
    """Two clearly separated Gaussian blobs over two features."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X0 = rng.normal(loc=(-2.0, 0.0), scale=0.5, size=(half, 2))
    X1 = rng.normal(loc=(2.0, 0.0), scale=0.5, size=(n - half, 2))
    X = np.vstack([X0, X1])
    y = np.array([0] * half + [1] * (n - half))
    perm = rng.permutation(n)
    return make_table(X[perm], y[perm])


def random_multiclass_table(n=90, m=5, K=3, seed=11):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    centers = rng.normal(scale=2.0, size=(K, m))
    y = rng.integers(0, K, size=n)
    X += centers[y] * 0.8
    return make_table(X, y, n_classes=K)


@pytest.fixture
def small_ensemble():
    table = random_multiclass_table()
    hp = fs.Hyperparams(n_estimators=4, max_depth=3)
    return fs.train(table, hp), table


def naive_report(y_true, y_pred, K):
    """Per-sample counting loop, written independently of the metrics module."""
    per_class = []
    n = len(y_true)
    for k in range(K):
        tp = fp = fn = 0
        for t, p in zip(y_true, y_pred):
            if p == k and t == k:
                tp += 1
            elif p == k and t != k:
                fp += 1
            elif p != k and t == k:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class.append((prec, rec, f1, tp + fn))
    correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    accuracy = correct / n
    macro = tuple(sum(pc[i] for pc in per_class) / K for i in range(3))
    weighted = tuple(sum(pc[i] * pc[3] for pc in per_class) / n for i in range(3))
    return accuracy, per_class, macro, weighted


def replay_forward_trace(trace):
    """Minimal independent interpreter of the strict-improvement loop."""
    best = 0.0
    chosen = []
    for entry in trace:
        if entry.f1 > best:
            best = entry.f1
            chosen = chosen + [entry.feature]
    return chosen, best


FLOW_FEATURE_COUNT = 77


def write_flow_csv(path, class_rows, seed=0, dirty_rows=0):
    """SCVIC-shaped CSV: 6 identifier columns + 77 features + a Stage label.

    ``class_rows`` maps label text to row count. Three features carry the
    class signal; the rest are noise. ``dirty_rows`` appends rows holding
    non-finite cells that preprocessing must drop.
    """
    rng = np.random.default_rng(seed)
    feature_names = [f"Flow Metric {i:02d}" for i in range(FLOW_FEATURE_COUNT)]
    header = list(fs.ingest.DEFAULT_DROP_COLUMNS) + feature_names + ["Stage"]
    labels = sorted(class_rows)
    rows = []
    for k, label in enumerate(labels):
        for _ in range(class_rows[label]):
            feats = rng.normal(size=FLOW_FEATURE_COUNT)
            feats[0] += 4.0 * k
            feats[1] -= 3.0 * k
            feats[2] += 2.0 * (k % 2)
            ident = [
                f"flow-{rng.integers(1e6)}",
                f"10.0.0.{rng.integers(256)}",
                str(rng.integers(1024, 65535)),
                f"192.168.1.{rng.integers(256)}",
                str(rng.integers(1024, 65535)),
                f"2021-12-0{1 + rng.integers(9)} 10:00:00",
            ]
            rows.append(ident + [repr(float(v)) for v in feats] + [label])
    for d in range(dirty_rows):
        feats = [repr(float(v)) for v in rng.normal(size=FLOW_FEATURE_COUNT)]
        feats[d % FLOW_FEATURE_COUNT] = ["Infinity", "NaN", "", "-Infinity"][d % 4]
        ident = ["flow-x", "10.0.0.1", "1234", "192.168.1.1", "80", "2021-12-01 10:00:00"]
        rows.append(ident + feats + [labels[0]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return header, rows
