"""Second-order gradient-boosted trees with a softmax multiclass objective.

Split finding is exact greedy over presorted columns. Missing values (NaN)
are routed by a per-node default direction chosen to maximize gain.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

HESS_FLOOR = 1e-16
SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class BoostParams:
    rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    n_classes: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be non-negative")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_hess(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-class gradient ``p - onehot`` and diagonal hessian ``p(1-p)``.

    Works on one row (1-D logits, scalar label) or a batch.
    """
    logits = np.asarray(logits, dtype=float)
    p = softmax(logits)
    onehot = np.zeros_like(p)
    if p.ndim == 1:
        onehot[int(labels)] = 1.0
    else:
        onehot[np.arange(len(p)), np.asarray(labels, dtype=int)] = 1.0
    return p - onehot, np.maximum(p * (1.0 - p), HESS_FLOOR)


def split_gain(gl: float, hl: float, gr: float, hr: float, reg_lambda: float, gamma: float) -> float:
    """Loss reduction of splitting a node into (gl, hl) and (gr, hr)."""
    return 0.5 * (
        gl * gl / (hl + reg_lambda)
        + gr * gr / (hr + reg_lambda)
        - (gl + gr) ** 2 / (hl + hr + reg_lambda)
    ) - gamma


def leaf_weight(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    return -g_sum / (h_sum + reg_lambda)


# gains this close count as ties, so summation-order noise cannot override
# the (lower feature, lower threshold) preference
TIE_SLACK = 1.0 + 1e-12


@numba.njit(cache=True)
def _scan_splits(XT, node_order, g, h, reg_lambda, gamma, min_child_weight):
    # XT: (features, rows); node_order: (features, m) row ids of the node, each
    # row of it sorted by that feature with NaN last
    n_features, m = node_order.shape
    g_tot = 0.0
    h_tot = 0.0
    for pos in range(m):
        r = node_order[0, pos]
        g_tot += g[r]
        h_tot += h[r]
    parent = g_tot * g_tot / (h_tot + reg_lambda)

    best_gain = 0.0
    best_feature = -1
    best_threshold = 0.0
    best_default_left = False
    for f in range(n_features):
        col = XT[f]
        rows = node_order[f]
        n_ok = m
        g_miss = 0.0
        h_miss = 0.0
        for pos in range(m - 1, -1, -1):
            r = rows[pos]
            if not np.isnan(col[r]):
                break
            g_miss += g[r]
            h_miss += h[r]
            n_ok = pos
        gl = 0.0
        hl = 0.0
        for pos in range(n_ok):
            r = rows[pos]
            gl += g[r]
            hl += h[r]
            if pos + 1 >= n_ok:
                break
            v = col[r]
            nxt = col[rows[pos + 1]]
            if not nxt > v:
                continue
            thr = v + (nxt - v) / 2.0
            if thr <= v:
                thr = nxt
            # missing values to the right
            gr = g_tot - gl
            hr = h_tot - hl
            if hl >= min_child_weight and hr >= min_child_weight:
                gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent) - gamma
                if gain > best_gain * TIE_SLACK:
                    best_gain = gain
                    best_feature = f
                    best_threshold = thr
                    best_default_left = False
            if h_miss > 0.0:
                gl2 = gl + g_miss
                hl2 = hl + h_miss
                gr2 = g_tot - gl2
                hr2 = h_tot - hl2
                if hl2 >= min_child_weight and hr2 >= min_child_weight:
                    gain = 0.5 * (gl2 * gl2 / (hl2 + reg_lambda) + gr2 * gr2 / (hr2 + reg_lambda) - parent) - gamma
                    if gain > best_gain * TIE_SLACK:
                        best_gain = gain
                        best_feature = f
                        best_threshold = thr
                        best_default_left = True
    return best_feature, best_threshold, best_gain, best_default_left


@numba.njit(cache=True)
def _partition(node_order, goes_left, n_left):
    # stable split of every feature's sorted row list
    n_features, m = node_order.shape
    left = np.empty((n_features, n_left), dtype=node_order.dtype)
    right = np.empty((n_features, m - n_left), dtype=node_order.dtype)
    for f in range(n_features):
        a = 0
        b = 0
        for pos in range(m):
            r = node_order[f, pos]
            if goes_left[r]:
                left[f, a] = r
                a += 1
            else:
                right[f, b] = r
                b += 1
    return left, right


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float
    default_left: bool


def presort(X: np.ndarray, rows=None) -> np.ndarray:
    """Per-feature row ids sorted by value (NaN last), shape (features, rows).

    With a boolean ``rows`` mask only those rows are kept.
    """
    X = np.asarray(X, dtype=float)
    order = np.argsort(X, axis=0, kind="stable").T
    if rows is not None:
        keep = np.asarray(rows, dtype=bool)
        order = order[:, keep[order[0]]] if keep.all() else np.vstack([o[keep[o]] for o in order])
    return np.ascontiguousarray(order)


def best_split(X, g, h, params: BoostParams, rows=None, order=None) -> Split | None:
    """Best exact split of the node holding ``rows`` (default: all rows), or None.

    Candidate thresholds are midpoints between consecutive distinct values;
    ties (gains within a relative 1e-12) go to the lower feature index, then
    the lower threshold. A gain must
    be strictly positive after the ``gamma`` penalty and both children must
    carry at least ``min_child_weight`` hessian.
    """
    X = np.asarray(X, dtype=float)
    if order is None:
        order = presort(X, rows)
    if order.shape[1] < 2:
        return None
    f, thr, gain, dleft = _scan_splits(
        np.ascontiguousarray(X.T),
        order,
        np.ascontiguousarray(g, dtype=float),
        np.ascontiguousarray(h, dtype=float),
        float(params.reg_lambda),
        float(params.gamma),
        float(params.min_child_weight),
    )
    if f < 0:
        return None
    return Split(int(f), float(thr), float(gain), bool(dleft))


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree. Leaves have ``feature == -1``.

    ``cover`` holds the number of training rows that reached each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __len__(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def depth(self) -> int:
        def walk(node: int) -> int:
            if self.is_leaf(node):
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def go_left(self, node: int, x: np.ndarray) -> np.ndarray:
        v = x[..., self.feature[node]]
        return np.where(np.isnan(v), self.default_left[node], v < self.threshold[node])

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.intp)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            vals = X[idx, self.feature[nd]]
            left = np.where(np.isnan(vals), self.default_left[nd], vals < self.threshold[nd])
            node[idx] = np.where(left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [repr(float(t)) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "default_left": self.default_left.tolist(),
            "value": [repr(float(v)) for v in self.value],
            "cover": [repr(float(c)) for c in self.cover],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(
            np.array(obj["feature"], dtype=np.intp),
            np.array([float(t) for t in obj["threshold"]]),
            np.array(obj["left"], dtype=np.intp),
            np.array(obj["right"], dtype=np.intp),
            np.array(obj["default_left"], dtype=bool),
            np.array([float(v) for v in obj["value"]]),
            np.array([float(c) for c in obj["cover"]]),
        )

    @classmethod
    def from_nodes(cls, nodes: list[dict]) -> "Tree":
        """Build from dicts with keys feature/threshold/left/right/default_left/value/cover."""
        get = lambda k, d: [nd.get(k, d) for nd in nodes]  # noqa: E731
        return cls(
            np.array(get("feature", -1), dtype=np.intp),
            np.array(get("threshold", 0.0), dtype=float),
            np.array(get("left", -1), dtype=np.intp),
            np.array(get("right", -1), dtype=np.intp),
            np.array(get("default_left", False), dtype=bool),
            np.array(get("value", 0.0), dtype=float),
            np.array(get("cover", 1.0), dtype=float),
        )


def build_tree(X, g, h, params: BoostParams, rows=None, order=None) -> Tree:
    """Grow one regression tree on gradients ``g`` and hessians ``h``.

    Leaves carry the raw Newton weight ``-G / (H + lambda)``; the learning rate
    is applied by the ensemble. ``order`` may pass a precomputed
    :func:`presort` of the node rows.
    """
    X = np.asarray(X, dtype=float)
    XT = np.ascontiguousarray(X.T)
    g = np.ascontiguousarray(g, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    if order is None:
        order = presort(X, rows)
    if order.shape[1] == 0:
        raise ValueError("build_tree needs at least one row")
    lam = float(params.reg_lambda)
    gamma = float(params.gamma)
    mcw = float(params.min_child_weight)

    nodes: list[dict] = []

    def grow(node_order: np.ndarray, depth: int) -> int:
        me = len(nodes)
        nodes.append({})
        members = node_order[0]
        count = len(members)
        f = -1
        if depth < params.max_depth and count >= 2:
            f, thr, _, dleft = _scan_splits(XT, node_order, g, h, lam, gamma, mcw)
        if f < 0:
            nodes[me] = {
                "value": leaf_weight(float(g[members].sum()), float(h[members].sum()), lam),
                "cover": float(count),
            }
            return me
        col = XT[f]
        goes_left = np.where(np.isnan(col), dleft, col < thr)
        n_left = int(goes_left[members].sum())
        lo, hi = _partition(node_order, goes_left, n_left)
        left = grow(lo, depth + 1)
        right = grow(hi, depth + 1)
        nodes[me] = {
            "feature": int(f),
            "threshold": float(thr),
            "left": left,
            "right": right,
            "default_left": bool(dleft),
            "cover": float(count),
        }
        return me

    grow(order, 0)
    return Tree.from_nodes(nodes)


@dataclass(frozen=True, eq=False)
class Ensemble:
    params: BoostParams
    base_score: np.ndarray
    n_features: int
    trees: tuple[tuple[Tree, ...], ...]  # [round][class]
    train_loss: tuple[float, ...] = field(default=())

    @property
    def n_classes(self) -> int:
        return len(self.base_score)

    @property
    def n_trees(self) -> int:
        return sum(len(r) for r in self.trees)

    def class_trees(self, c: int) -> list[Tree]:
        return [r[c] for r in self.trees]

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X2.shape[1]}")
        return X2

    def margin(self, X) -> np.ndarray:
        X2 = self._check(X)
        out = np.tile(self.base_score, (len(X2), 1))
        eta = self.params.learning_rate
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                out[:, c] += eta * tree.predict(X2)
        return out[0] if np.ndim(X) == 1 else out

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": asdict(self.params),
            "base_score": [repr(float(b)) for b in self.base_score],
            "n_features": self.n_features,
            "trees": [[t.to_json() for t in r] for r in self.trees],
            "train_loss": [repr(x) for x in self.train_loss],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "Ensemble":
        major = str(obj.get("schema_version", "")).split(".")[0]
        if major != SCHEMA_VERSION.split(".")[0]:
            raise ValueError(f"unsupported ensemble schema {obj.get('schema_version')!r}")
        return cls(
            BoostParams(**obj["params"]),
            np.array([float(b) for b in obj["base_score"]]),
            int(obj["n_features"]),
            tuple(tuple(Tree.from_json(t) for t in r) for r in obj["trees"]),
            tuple(float(x) for x in obj.get("train_loss", [])),
        )

    @classmethod
    def loads(cls, text: str) -> "Ensemble":
        return cls.from_json(json.loads(text))


def log_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def train(X, labels, params: BoostParams = BoostParams()) -> Ensemble:
    """Fit ``params.rounds`` rounds of one tree per class.

    The per-round training log-loss is kept on the result as ``train_loss``
    (entry 0 is the loss of the base score).
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(labels, dtype=int)
    K = params.n_classes
    if len(X) != len(y):
        raise ValueError("features and labels differ in length")
    if y.min() < 0 or y.max() >= K:
        raise ValueError(f"labels must lie in 0..{K - 1}")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")
    order = presort(X)
    base = np.zeros(K)
    logits = np.tile(base, (len(X), 1))
    losses = [log_loss(logits, y)]
    rounds = []
    for _ in range(params.rounds):
        g, h = softmax_grad_hess(logits, y)
        trees = []
        for c in range(K):
            tree = build_tree(X, g[:, c], h[:, c], params, order=order)
            trees.append(tree)
        for c, tree in enumerate(trees):
            logits[:, c] += params.learning_rate * tree.predict(X)
        rounds.append(tuple(trees))
        losses.append(log_loss(logits, y))
    return Ensemble(params, base, X.shape[1], tuple(rounds), tuple(losses))


def predict_proba(ensemble: Ensemble, X) -> np.ndarray:
    return softmax(ensemble.margin(X))


def predict(ensemble: Ensemble, X) -> np.ndarray:
    return np.argmax(predict_proba(ensemble, X), axis=-1)
