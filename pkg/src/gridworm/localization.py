"""Attack localization: CART trees per node, a majority baseline and metrics.

The learner grows each tree breadth first. Every feature keeps an index
array sorted by value and grouped by tree node, so one level of the tree is
a fixed number of vectorised passes over the samples that are still being
split. Splits maximise the Gini decrease over midpoints between
consecutive distinct values; equally good splits go to the lowest feature
index and then the lowest threshold. Trees are unpruned and leaves may hold
a single sample.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Relative tolerance used to call two split scores equal.
TIE_TOL = 1e-12

METRIC_FIELDS = ("node", "TP", "TN", "FP", "FN", "acc", "acc_B", "normacc", "tpr", "tnr")


def gini(counts) -> float:
    """Gini impurity ``1 - sum p_c^2`` of a class-count vector."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total < 1:
        raise ValueError("gini needs at least one sample")
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass
class DecisionTree:
    """Binary tree in flat arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # predicted class per node
    n_neg: np.ndarray
    n_pos: np.ndarray
    n_features: int
    meta: dict = field(default_factory=lambda: {
        "criterion": "gini", "splitter": "best", "max_depth": None})

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        d = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while rows.size:
            f = self.feature[node[rows]]
            inner = f >= 0
            rows, f = rows[inner], f[inner]
            if not rows.size:
                break
            nd = node[rows]
            go_left = X[rows, f] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
        out = self.value[node].astype(np.int8)
        return out[0] if single else out

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                nodes.append({"feature": int(self.feature[i]),
                              "threshold": float(self.threshold[i]),
                              "left": int(self.left[i]), "right": int(self.right[i])})
            else:
                nodes.append({"class": int(self.value[i]),
                              "counts": [int(self.n_neg[i]), int(self.n_pos[i])]})
        return {"n_features": self.n_features, "meta": self.meta, "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> DecisionTree:
        nodes = doc["nodes"]
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n, dtype=np.int8)
        n_neg = np.zeros(n, dtype=np.int64)
        n_pos = np.zeros(n, dtype=np.int64)
        for i, nd in enumerate(nodes):
            if "feature" in nd:
                feature[i], threshold[i] = nd["feature"], nd["threshold"]
                left[i], right[i] = nd["left"], nd["right"]
            else:
                value[i] = nd["class"]
                n_neg[i], n_pos[i] = nd["counts"]
        return cls(feature, threshold, left, right, value, n_neg, n_pos,
                   int(doc["n_features"]), dict(doc.get("meta", {})))


class Presorted:
    """Column-major copy of ``X`` and each column's stable sort order.

    Sorting is the expensive part of tree growth and does not depend on
    the labels, so several trees on the same samples share one instance.
    """

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a non-empty 2-D array")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        self.n, self.d = X.shape
        self.columns = np.ascontiguousarray(X.T)
        index_dtype = np.int32 if self.n < 2**31 else np.int64
        self.order = np.empty((self.d, self.n), dtype=index_dtype)
        for f in range(self.d):
            self.order[f] = np.argsort(self.columns[f], kind="stable")
        self.values = np.take_along_axis(self.columns, self.order, axis=1)


def _leaf_class(neg, pos):
    return (pos > neg).astype(np.int8)  # ties go to class 0


class _Nodes:
    """Growable flat node arrays."""

    def __init__(self, cap: int = 1024):
        self.size = 0
        self.feature = np.full(cap, -1, dtype=np.int64)
        self.threshold = np.zeros(cap)
        self.left = np.full(cap, -1, dtype=np.int64)
        self.right = np.full(cap, -1, dtype=np.int64)
        self.n_neg = np.zeros(cap, dtype=np.int64)
        self.n_pos = np.zeros(cap, dtype=np.int64)

    def add(self, neg, pos) -> np.ndarray:
        neg, pos = np.atleast_1d(neg), np.atleast_1d(pos)
        k = len(neg)
        while self.size + k > len(self.feature):
            for name in ("feature", "threshold", "left", "right", "n_neg", "n_pos"):
                a = getattr(self, name)
                fill = -1 if name in ("feature", "left", "right") else 0
                setattr(self, name, np.concatenate([a, np.full_like(a, fill)]))
        ids = np.arange(self.size, self.size + k)
        self.n_neg[ids], self.n_pos[ids] = neg, pos
        self.size += k
        return ids

    def tree(self, d: int) -> DecisionTree:
        n = self.size
        return DecisionTree(
            feature=self.feature[:n].copy(), threshold=self.threshold[:n].copy(),
            left=self.left[:n].copy(), right=self.right[:n].copy(),
            value=_leaf_class(self.n_neg[:n], self.n_pos[:n]),
            n_neg=self.n_neg[:n].copy(), n_pos=self.n_pos[:n].copy(), n_features=d,
        )


def _grow(ps: Presorted, y: np.ndarray) -> DecisionTree:
    """Breadth-first growth; see the module docstring for the split rule.

    A split at position ``i`` of a node's sorted segment puts the first
    ``i + 1`` samples left. With ``p``/``q`` positives/negatives on a side of
    size ``n``, the weighted child impurity is proportional to
    ``G = p_l q_l / n_l + p_r q_r / n_r``, so the best split minimises ``G``.
    """
    n, d = ps.n, ps.d
    nodes = _Nodes()
    total_pos = int(y.sum())
    nodes.add(n - total_pos, total_pos)
    if not (n >= 2 and 0 < total_pos < n):
        return nodes.tree(d)

    act_id = np.array([0])
    act_n = np.array([n], dtype=np.int64)
    act_pos = np.array([total_pos], dtype=np.int64)
    # per feature: sample ids, their values and labels, grouped by node and
    # sorted by value inside each node
    S = ps.order.copy()
    V = ps.values.copy()
    Yv = y.astype(np.int8)[S]
    key = np.empty(n, dtype=np.int64)

    while True:
        A = act_id.size
        m = int(act_n.sum())
        start = np.concatenate(([0], np.cumsum(act_n)[:-1]))
        seg = np.repeat(np.arange(A), act_n)
        nl = (np.arange(1, m + 1) - start[seg]).astype(float)
        nr = act_n[seg] - nl
        ptot = act_pos[seg].astype(float)
        before = (np.cumsum(act_pos) - act_pos).astype(float)[seg]
        inv_nl = 1.0 / nl
        edge = nr == 0  # last position of each segment
        inv_nr = np.where(edge, 0.0, 1.0 / np.where(edge, 1.0, nr))
        tol = TIE_TOL * act_n.astype(float)
        positions = np.arange(m, dtype=float)

        w = np.empty(m)
        pl = np.empty(m)
        g = np.empty(m)
        t = np.empty(m)
        bad = np.empty(m, dtype=bool)
        best = np.empty((d, A))
        best_at = np.empty((d, A), dtype=np.int64)
        best_pl = np.empty((d, A))
        for f in range(d):
            xs = V[f, :m]
            np.greater_equal(xs[:-1], xs[1:], out=bad[:-1])  # no threshold between equal values
            bad[-1] = True
            bad |= edge
            np.cumsum(Yv[f, :m], dtype=float, out=pl)
            pl -= before
            np.subtract(nl, pl, out=g)
            g *= pl
            g *= inv_nl
            np.subtract(ptot, pl, out=t)  # positives on the right
            np.subtract(nr, t, out=w)
            w *= t
            w *= inv_nr
            g += w
            np.copyto(g, np.inf, where=bad)
            top = np.minimum.reduceat(g, start)
            hit = g <= (top + tol)[seg]
            first = np.minimum.reduceat(np.where(hit, positions, m), start).astype(np.int64)
            best[f], best_at[f], best_pl[f] = top, first, pl[np.minimum(first, m - 1)]

        gmin = best.min(axis=0)
        parent = act_pos * (act_n - act_pos) / act_n
        split = np.isfinite(gmin) & (gmin <= parent + tol)
        if not split.any():
            break
        chosen = np.argmax(best <= (gmin + tol)[None, :], axis=0)

        sp = np.flatnonzero(split)
        f_sp = chosen[sp]
        at = best_at[f_sp, sp]
        lo_x = V[f_sp, at]
        hi_x = V[f_sp, at + 1]
        thr = (lo_x + hi_x) / 2.0
        thr = np.where(thr >= hi_x, lo_x, thr)  # adjacent floats: midpoint rounds up
        n_left = at - start[sp] + 1
        pos_left = np.rint(best_pl[f_sp, sp]).astype(np.int64)
        n_right = act_n[sp] - n_left
        pos_right = act_pos[sp] - pos_left

        kids = nodes.add(np.stack([n_left - pos_left, n_right - pos_right], 1).ravel(),
                         np.stack([pos_left, pos_right], 1).ravel()).reshape(-1, 2)
        parents = act_id[sp]
        nodes.feature[parents] = f_sp
        nodes.threshold[parents] = thr
        nodes.left[parents] = kids[:, 0]
        nodes.right[parents] = kids[:, 1]

        kid_n = np.stack([n_left, n_right], 1)
        kid_pos = np.stack([pos_left, pos_right], 1)
        grow = (kid_n >= 2) & (kid_pos > 0) & (kid_pos < kid_n)
        if not grow.any():
            break
        g_idx = np.flatnonzero(grow.ravel())
        slot = np.full((A, 2), -1, dtype=np.int64)
        slot[np.repeat(sp, 2)[g_idx], np.tile([0, 1], sp.size)[g_idx]] = np.arange(g_idx.size)

        # route each active sample (S[0] is in segment order) to its child's slot
        members = S[0, :m]
        thr_full = np.zeros(A)
        thr_full[sp] = thr
        right = ps.columns[chosen[seg], members] > thr_full[seg]
        key[members] = np.where(split[seg], slot[seg, right.astype(np.int64)], -1)

        act_id = kids[grow]
        act_n = kid_n[grow]
        act_pos = kid_pos[grow]
        n_slots = act_id.size
        sort_dtype = np.uint16 if n_slots < 65535 else np.int64
        m_new = int(act_n.sum())
        for f in range(d):
            idx = S[f, :m]
            k = (key[idx] + 1).astype(sort_dtype)
            order = np.argsort(k, kind="stable")
            order = order[m - m_new:]
            S[f, :m_new] = idx[order]
            V[f, :m_new] = V[f, :m][order]
            Yv[f, :m_new] = Yv[f, :m][order]

    return nodes.tree(d)


def _check_labels(y, n):
    y = np.asarray(y)
    if y.shape[0] != n:
        raise ValueError("labels and samples differ in length")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y.astype(np.int8)


def fit(X, y) -> DecisionTree:
    """Grow one unpruned CART tree on binary labels ``y``."""
    ps = X if isinstance(X, Presorted) else Presorted(X)
    return _grow(ps, _check_labels(y, ps.n))


def fit_many(X, Y) -> list[DecisionTree]:
    """One independent tree per column of ``Y``, sharing the presort."""
    ps = X if isinstance(X, Presorted) else Presorted(X)
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise ValueError("Y must be 2-D (samples x targets)")
    return [_grow(ps, _check_labels(Y[:, k], ps.n)) for k in range(Y.shape[1])]


def predict(tree: DecisionTree, x):
    return tree.predict(x)


def predict_multi(trees: list[DecisionTree], X) -> np.ndarray:
    """Stack per-node predictions; a single sample gives a length-K vector."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return np.array([t.predict(X) for t in trees], dtype=np.int8)
    return np.stack([t.predict(X) for t in trees], axis=1).astype(np.int8)


def save_trees(trees: list[DecisionTree], path: str | Path, names=None) -> None:
    doc = {"trees": [t.to_dict() for t in trees]}
    if names is not None:
        doc["nodes"] = list(names)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_trees(path: str | Path) -> list[DecisionTree]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [DecisionTree.from_dict(t) for t in doc["trees"]]


# -- baseline ------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantClassifier:
    """Predicts the majority training class of each target (ties to 0)."""

    classes: tuple[int, ...]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X)
        n = 1 if X.ndim == 1 else X.shape[0]
        out = np.tile(np.array(self.classes, dtype=np.int8), (n, 1))
        return out[0] if X.ndim == 1 else out


def baseline_most_frequent(train_labels) -> ConstantClassifier:
    Y = np.asarray(train_labels)
    if Y.size == 0:
        raise ValueError("baseline needs at least one training label")
    if Y.ndim == 1:
        Y = Y[:, None]
    pos = Y.sum(axis=0)
    neg = Y.shape[0] - pos
    return ConstantClassifier(tuple(int(c) for c in _leaf_class(neg, pos)))


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class NodeMetrics:
    node: str
    TP: int
    TN: int
    FP: int
    FN: int

    @property
    def n_pos(self) -> int:
        return self.TP + self.FN

    @property
    def n_neg(self) -> int:
        return self.TN + self.FP

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN

    @property
    def acc(self) -> float:
        return (self.TP + self.TN) / self.total

    @property
    def acc_B(self) -> float:
        return max(self.n_pos, self.n_neg) / self.total

    @property
    def normacc(self) -> float:
        """``(acc - acc_B) / (1 - acc_B)``; NaN when the test set has one class."""
        b = self.acc_B
        return math.nan if b == 1 else (self.acc - b) / (1 - b)

    @property
    def tpr(self) -> float:
        return self.TP / self.n_pos if self.n_pos else math.nan

    @property
    def tnr(self) -> float:
        return self.TN / self.n_neg if self.n_neg else math.nan

    def row(self) -> dict:
        return {"node": self.node, "TP": self.TP, "TN": self.TN, "FP": self.FP,
                "FN": self.FN, "acc": self.acc, "acc_B": self.acc_B,
                "normacc": self.normacc, "tpr": self.tpr, "tnr": self.tnr}


@dataclass(frozen=True)
class MetricReport:
    nodes: tuple[NodeMetrics, ...]

    @property
    def names(self) -> list[str]:
        return [m.node for m in self.nodes]

    def metric(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.nodes], dtype=float)

    def mispredictions(self) -> int:
        """Wrong bits summed over nodes and test samples."""
        return sum(m.FP + m.FN for m in self.nodes)


def confusion(y_true, y_pred, names=None) -> MetricReport:
    y_true = np.asarray(y_true, dtype=np.int8)
    y_pred = np.asarray(y_pred, dtype=np.int8)
    if y_true.ndim == 1:
        y_true, y_pred = y_true[:, None], y_pred[:, None]
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction and label shapes differ")
    if y_true.shape[0] == 0:
        raise ValueError("empty test set")
    k = y_true.shape[1]
    names = [str(i) for i in range(k)] if names is None else [str(n) for n in names]
    t, p = y_true.astype(bool), y_pred.astype(bool)
    tp = np.sum(t & p, axis=0)
    tn = np.sum(~t & ~p, axis=0)
    fp = np.sum(~t & p, axis=0)
    fn = np.sum(t & ~p, axis=0)
    return MetricReport(tuple(
        NodeMetrics(names[j], int(tp[j]), int(tn[j]), int(fp[j]), int(fn[j])) for j in range(k)
    ))


def evaluate(model, X_test, Y_test, names=None) -> MetricReport:
    """Metrics of ``model`` (tree list or constant classifier) on a test set."""
    X_test = np.asarray(X_test, dtype=float)
    if X_test.shape[0] == 0:
        raise ValueError("empty test set")
    pred = model.predict(X_test) if hasattr(model, "predict") else predict_multi(model, X_test)
    return confusion(Y_test, pred, names)


def mean_rows(reports: list[MetricReport]) -> list[dict]:
    """Per-node mean of the ratio metrics over folds; counts are summed."""
    rows = []
    for j, name in enumerate(reports[0].names):
        ms = [r.nodes[j] for r in reports]
        row = {"node": name}
        for c in ("TP", "TN", "FP", "FN"):
            row[c] = sum(getattr(m, c) for m in ms)
        for c in ("acc", "acc_B", "normacc", "tpr", "tnr"):
            row[c] = float(np.mean([getattr(m, c) for m in ms]))
        rows.append(row)
    return rows


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(METRIC_FIELDS) + [
            k for k in rows[0] if k not in METRIC_FIELDS])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
