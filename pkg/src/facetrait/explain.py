"""Path-dependent TreeSHAP attributions for boosted ensembles.

Each leaf contributes a small cooperative game over the distinct features on
its root path: a feature in the coalition follows the input (weight 1 or 0),
a feature outside it takes the training-cover fraction of the branch. The
EXTEND/UNWIND recurrences below solve that game in O(depth^2) per leaf and
are vectorized across input rows.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .gbt import Ensemble, Tree
from .taxonomy import FEATURE_NAMES

MAX_BRUTE_FORCE_FEATURES = 15


@dataclass(frozen=True)
class _LeafPath:
    value: float
    features: tuple[int, ...]
    zero_fraction: tuple[float, ...]
    # per distinct feature: the (node, goes_left) conditions along the path
    conditions: tuple[tuple[tuple[int, bool], ...], ...]


def _leaf_paths(tree: Tree) -> list[_LeafPath]:
    paths: list[_LeafPath] = []

    def walk(node: int, steps: list[tuple[int, int, bool, float]]):
        if tree.is_leaf(node):
            feats: dict[int, list] = {}
            for feat, nd, left, z in steps:
                feats.setdefault(feat, []).append((nd, left, z))
            order = list(feats)
            paths.append(
                _LeafPath(
                    float(tree.value[node]),
                    tuple(order),
                    tuple(math.prod(z for _, _, z in feats[f]) for f in order),
                    tuple(tuple((nd, left) for nd, left, _ in feats[f]) for f in order),
                )
            )
            return
        f = int(tree.feature[node])
        for child, left in ((tree.left[node], True), (tree.right[node], False)):
            z = tree.cover[child] / tree.cover[node]
            walk(int(child), steps + [(f, node, left, z)])

    walk(0, [])
    return paths


def _extend(weights: list[np.ndarray], zero: float, one: np.ndarray) -> None:
    depth = len(weights)
    weights.append(np.ones_like(one) if depth == 0 else np.zeros_like(one))
    for i in range(depth - 1, -1, -1):
        weights[i + 1] = weights[i + 1] + one * weights[i] * (i + 1) / (depth + 1)
        weights[i] = zero * weights[i] * (depth - i) / (depth + 1)


def _unwound_sum(weights: list[np.ndarray], zero: float, one: np.ndarray) -> np.ndarray:
    depth = len(weights) - 1
    hot = one != 0
    safe_one = np.where(hot, one, 1.0)
    total_hot = np.zeros_like(one)
    total_cold = np.zeros_like(one)
    nxt = weights[depth]
    for j in range(depth - 1, -1, -1):
        tmp = nxt * (depth + 1) / ((j + 1) * safe_one)
        total_hot = total_hot + tmp
        nxt = weights[j] - tmp * zero * (depth - j) / (depth + 1)
        total_cold = total_cold + weights[j] * (depth + 1) / (zero * (depth - j))
    return np.where(hot, total_hot, total_cold)


def tree_expected_value(tree: Tree) -> float:
    leaves = tree.feature < 0
    return float((tree.value[leaves] * tree.cover[leaves]).sum() / tree.cover[0])


def tree_shap_tree(tree: Tree, X, n_features: int | None = None) -> tuple[np.ndarray, float]:
    """SHAP values of one tree for each row of ``X``.

    Returns ``(phi, base)`` with ``phi`` of shape (rows, features) and
    ``base + phi.sum(axis=1)`` equal to the tree output.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = len(X)
    n_features = X.shape[1] if n_features is None else n_features
    phi = np.zeros((m, n_features))
    go_left = {}
    for node in np.flatnonzero(tree.feature >= 0):
        go_left[int(node)] = tree.go_left(int(node), X)
    for path in _leaf_paths(tree):
        if path.value == 0.0 or not path.features:
            continue
        ones = []
        for conds in path.conditions:
            o = np.ones(m)
            for nd, left in conds:
                o = o * (go_left[nd] == left)
            ones.append(o)
        weights: list[np.ndarray] = []
        _extend(weights, 1.0, np.ones(m))
        for z, o in zip(path.zero_fraction, ones):
            _extend(weights, z, o)
        for f, z, o in zip(path.features, path.zero_fraction, ones):
            w = _unwound_sum(weights, z, o)
            phi[:, f] += w * (o - z) * path.value
    return phi, tree_expected_value(tree)


@dataclass(frozen=True)
class Attribution:
    """Per-class SHAP values; ``values`` is (classes, features) or (rows, classes, features)."""

    values: np.ndarray
    base: np.ndarray

    def total(self) -> np.ndarray:
        return self.base + self.values.sum(axis=-1)


def tree_shap(ensemble: Ensemble, X) -> Attribution:
    """Exact path-dependent SHAP values of every class logit.

    ``X`` may be one row or a batch. ``base + values.sum(-1)`` reproduces
    :meth:`Ensemble.margin` (local accuracy).
    """
    X_arr = np.asarray(X, dtype=float)
    single = X_arr.ndim == 1
    X2 = np.atleast_2d(X_arr)
    if X2.shape[1] != ensemble.n_features:
        raise ValueError(f"expected {ensemble.n_features} features, got {X2.shape[1]}")
    K = ensemble.n_classes
    eta = ensemble.params.learning_rate
    values = np.zeros((len(X2), K, ensemble.n_features))
    base = ensemble.base_score.astype(float).copy()
    for round_trees in ensemble.trees:
        for c, tree in enumerate(round_trees):
            phi, b = tree_shap_tree(tree, X2, ensemble.n_features)
            values[:, c, :] += eta * phi
            base[c] += eta * b
    return Attribution(values[0] if single else values, base)


def _expected(tree: Tree, x: np.ndarray, coalition: frozenset[int], node: int = 0) -> float:
    if tree.is_leaf(node):
        return float(tree.value[node])
    f = int(tree.feature[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    if f in coalition:
        return _expected(tree, x, coalition, left if tree.go_left(node, x) else right)
    cover = tree.cover
    return (
        cover[left] * _expected(tree, x, coalition, left)
        + cover[right] * _expected(tree, x, coalition, right)
    ) / cover[node]


def brute_force_shap(tree: Tree, x, n_features: int | None = None) -> tuple[np.ndarray, float]:
    """Shapley values of one tree by enumerating every feature coalition.

    Uses the same cover-weighted value function as :func:`tree_shap_tree`.
    Refuses trees that split on more than 15 distinct features.
    """
    x = np.asarray(x, dtype=float)
    n_features = len(x) if n_features is None else n_features
    used = sorted(tree.used_features())
    M = len(used)
    if M > MAX_BRUTE_FORCE_FEATURES:
        raise ValueError(f"tree uses {M} features; brute force is limited to {MAX_BRUTE_FORCE_FEATURES}")
    phi = np.zeros(n_features)
    cache: dict[frozenset[int], float] = {}

    def v(s: frozenset[int]) -> float:
        if s not in cache:
            cache[s] = _expected(tree, x, s)
        return cache[s]

    for i in used:
        others = [f for f in used if f != i]
        total = 0.0
        for size in range(M):
            weight = math.factorial(size) * math.factorial(M - size - 1) / math.factorial(M)
            for subset in itertools.combinations(others, size):
                s = frozenset(subset)
                total += weight * (v(s | {i}) - v(s))
        phi[i] = total
    return phi, v(frozenset())


@dataclass(frozen=True)
class ImportanceEntry:
    feature: str
    mean_abs: float
    direction: str


def _canonical_mean(a: np.ndarray) -> np.ndarray:
    # sum in sorted order so the result does not depend on row order
    return np.sort(a, axis=0).sum(axis=0) / len(a)


def rank_importance(
    ensemble: Ensemble,
    X,
    names: Sequence[str] = FEATURE_NAMES,
    attribution: Attribution | None = None,
) -> list[ImportanceEntry]:
    """Features ordered by mean |SHAP| (summed over classes) across the rows of ``X``.

    ``direction`` is the sign of the association between a feature's value
    and its attribution toward the highest class relative to the lowest.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise ValueError("rank_importance needs at least one row")
    att = attribution if attribution is not None else tree_shap(ensemble, X)
    vals = att.values if att.values.ndim == 3 else att.values[None]
    mean_abs = _canonical_mean(np.abs(vals).sum(axis=1))
    top = vals[:, -1, :] - vals[:, 0, :]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        centred = np.nan_to_num(X - np.nanmean(X, axis=0))
    assoc = _canonical_mean(centred * top)
    order = np.lexsort((np.arange(len(mean_abs)), -mean_abs))
    out = []
    for j in order:
        d = "+" if assoc[j] > 0 else "-" if assoc[j] < 0 else "0"
        out.append(ImportanceEntry(names[j], float(mean_abs[j]), d))
    return out


def write_attributions(att: Attribution, fh: IO[str], names: Sequence[str] = FEATURE_NAMES,
                       row_ids: Sequence[str] | None = None, skip_zero: bool = True) -> None:
    """CSV with one (row, feature, class, value) line per attribution."""
    vals = att.values if att.values.ndim == 3 else att.values[None]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("row", "feature", "class", "value"))
    for r in range(vals.shape[0]):
        rid = row_ids[r] if row_ids is not None else str(r)
        for c in range(vals.shape[1]):
            for j in np.flatnonzero(vals[r, c]) if skip_zero else range(vals.shape[2]):
                writer.writerow((rid, names[j], c, repr(float(vals[r, c, j]))))


def bar_data(ranking: list[ImportanceEntry], top_k: int = 20, title: str = "") -> dict:
    return {
        "schema_version": "1.0",
        "title": title,
        "bars": [
            {"feature": e.feature, "mean_abs_shap": e.mean_abs, "direction": e.direction}
            for e in ranking[:top_k]
        ],
    }


def dumps_bar_data(ranking: list[ImportanceEntry], top_k: int = 20, title: str = "") -> str:
    return json.dumps(bar_data(ranking, top_k, title), indent=1)
