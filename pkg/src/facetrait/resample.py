"""SMOTE and ADASYN minority oversampling."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

STRATEGIES = ("none", "smote", "adasyn", "auto")


@dataclass(frozen=True)
class ResamplePlan:
    strategy: str = "smote"
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown resample strategy {self.strategy!r}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")


def _nan_safe(points: np.ndarray) -> np.ndarray:
    # absent cells are compared as 0 for neighbour search only
    return np.where(np.isnan(points), 0.0, points)


def knn(points, query: int, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest neighbours of ``points[query]`` (Euclidean).

    The query row itself is excluded; equal distances go to the lower index.
    """
    pts = _nan_safe(np.asarray(points, dtype=float))
    n = len(pts)
    if n < k + 1:
        raise ValueError(f"knn needs at least k+1={k + 1} points, got {n}")
    d = np.sqrt(((pts - pts[query]) ** 2).sum(axis=1))
    idx = np.arange(n)
    order = np.lexsort((idx, d))
    order = order[order != query]
    return order[:k]


def _knn_table(pts: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbours for every row at once; same ordering rule as :func:`knn`."""
    n = len(pts)
    if n < k + 1:
        raise ValueError(f"knn needs at least k+1={k + 1} points, got {n}")
    out = np.empty((n, k), dtype=np.intp)
    idx = np.arange(n)
    for i in range(n):
        d = np.sqrt(((pts - pts[i]) ** 2).sum(axis=1))
        order = np.lexsort((idx, d))
        out[i] = order[order != i][:k]
    return out


def _interpolate(
    minority: np.ndarray, base: np.ndarray, neighbours: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    delta = rng.random(len(base))
    a = minority[base]
    b = minority[neighbours]
    # absent cells stay absent unless the neighbour has a value, then copy it
    diff = np.where(np.isnan(b), 0.0, b - np.where(np.isnan(a), b, a))
    synth = np.where(np.isnan(a), b, a + delta[:, None] * diff)
    return synth, delta


def smote(
    minority,
    n_synthetic: int,
    k: int,
    rng: np.random.Generator,
    return_parents: bool = False,
):
    """Generate ``n_synthetic`` points on segments between minority neighbours.

    Each point is ``x_i + delta * (x_nn - x_i)`` with ``x_i`` drawn uniformly,
    ``x_nn`` uniformly among its ``k`` nearest minority neighbours and
    ``delta ~ U(0, 1)``. With ``return_parents`` the base index, neighbour
    index and ``delta`` of every point are also returned.
    """
    minority = np.asarray(minority, dtype=float)
    m = len(minority)
    if m < 2:
        raise ValueError("smote needs at least 2 minority points")
    if not 1 <= k < m:
        raise ValueError(f"k={k} must satisfy 1 <= k < {m}")
    table = _knn_table(_nan_safe(minority), k)
    base = rng.integers(0, m, size=n_synthetic)
    nbr = table[base, rng.integers(0, k, size=n_synthetic)]
    synth, delta = _interpolate(minority, base, nbr, rng)
    if return_parents:
        return synth, base, nbr, delta
    return synth


def adasyn_weights(X, labels, minority_class, k: int) -> np.ndarray:
    """Normalized ADASYN difficulty ratios r_i / sum(r) for the minority rows.

    Returns a zero vector when no minority point has a non-minority neighbour.
    """
    X = _nan_safe(np.asarray(X, dtype=float))
    labels = np.asarray(labels)
    table = _knn_table(X, k)
    is_min = labels == minority_class
    r = (~is_min[table[is_min]]).sum(axis=1) / k
    total = r.sum()
    return r / total if total > 0 else np.zeros_like(r)


def adasyn(
    X,
    labels,
    minority_class,
    k: int,
    rng: np.random.Generator,
    n_synthetic: int | None = None,
    return_parents: bool = False,
):
    """ADASYN: SMOTE interpolation with per-point counts tilted toward hard points.

    ``n_synthetic`` defaults to the gap between the largest class and the
    minority class. Per-point counts are ``round(r_hat_i * G)``; the total is
    then topped up or trimmed (synthetics only) to exactly ``G``. If no minority
    point has a foreign neighbour the allocation is uniform, as in SMOTE.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    is_min = labels == minority_class
    minority = X[is_min]
    m = len(minority)
    if m < 2:
        raise ValueError("adasyn needs at least 2 minority points")
    if not 1 <= k < m:
        raise ValueError(f"k={k} must satisfy 1 <= k < {m}")
    if n_synthetic is None:
        _, counts = np.unique(labels, return_counts=True)
        n_synthetic = int(counts.max() - m)
    weights = adasyn_weights(X, labels, minority_class, k)
    if weights.sum() == 0:
        # no hard points: uniform base draws, exactly as in SMOTE
        base = rng.integers(0, m, size=n_synthetic)
    else:
        alloc = np.rint(weights * n_synthetic).astype(int)
        base = np.repeat(np.arange(m), alloc)
        deficit = n_synthetic - len(base)
        if deficit > 0:
            base = np.concatenate([base, rng.choice(m, size=deficit, p=weights)])
        elif deficit < 0:
            base = base[np.sort(rng.choice(len(base), size=n_synthetic, replace=False))]
    table = _knn_table(_nan_safe(minority), k)
    nbr = table[base, rng.integers(0, k, size=len(base))]
    synth, delta = _interpolate(minority, base, nbr, rng)
    if return_parents:
        return synth, base, nbr, delta
    return synth


@dataclass(frozen=True)
class Balanced:
    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray  # bool flag per row; originals come first

    def __iter__(self):
        return iter((self.features, self.labels))


def balance(features, labels, plan: ResamplePlan, rng: np.random.Generator | None = None) -> Balanced:
    """Oversample every class up to the majority count.

    Original rows come first and are untouched; synthetic rows follow and are
    flagged. ``auto`` is resolved by the evaluation harness, so it is treated
    as ``smote`` here.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("balance needs at least two classes")
    if rng is None:
        rng = np.random.default_rng(plan.seed)
    strategy = "smote" if plan.strategy == "auto" else plan.strategy
    target = counts.max()
    new_x, new_y = [X], [y]
    if strategy != "none":
        for cls, count in zip(classes, counts):
            gap = int(target - count)
            if gap == 0:
                continue
            k = plan.k_neighbors
            if k >= count:
                k = int(count) - 1
                if k < 1:
                    raise ValueError(f"class {cls!r} has a single row; cannot oversample")
                warnings.warn(
                    f"class {cls!r} has {count} rows; k_neighbors reduced to {k}", stacklevel=2
                )
            if strategy == "smote":
                synth = smote(X[y == cls], gap, k, rng)
            else:
                synth = adasyn(X, y, cls, k, rng, n_synthetic=gap)
            new_x.append(synth)
            new_y.append(np.full(gap, cls, dtype=y.dtype))
    out_x = np.vstack(new_x)
    out_y = np.concatenate(new_y)
    flag = np.zeros(len(out_y), dtype=bool)
    flag[len(y):] = True
    return Balanced(out_x, out_y, flag)
