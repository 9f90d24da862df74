"""Tercile binning, stratified splits, Cohen's kappa and the per-trait experiment."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import IO, Iterable, Sequence

import numpy as np

from . import gbt
from .cohort import Cohort, TraitTable
from .features import FeatureMatrix, build_feature_matrix
from .gbt import BoostParams
from .resample import ResamplePlan, balance
from .taxonomy import TRAIT_INFO, TRAIT_NAMES, family_of

log = logging.getLogger(__name__)

CLASS_NAMES = ("low", "medium", "high")
MODES = ("leak_free", "paper_replication")
BINNINGS = ("tercile", "equal_width")
ACCURACY_HEADER = ("Variable", "Average Accuracy", "Cohen's Kappa")


@dataclass(frozen=True)
class BinEdges:
    low: float
    high: float
    fallback: bool = False

    def apply(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=float)
        return np.where(s <= self.low, 0, np.where(s <= self.high, 1, 2))


def bin_terciles(scores, mode: str = "tercile") -> tuple[np.ndarray, BinEdges]:
    """Label scores low/medium/high (0/1/2).

    Edges sit at the 1/3 and 2/3 linear-interpolation quantiles, with ties on
    an edge going to the lower class. If that leaves a class empty the edges
    fall back to equal thirds of [min, max] and ``fallback`` is set; should
    that also leave a class empty, the edges move onto observed values.
    ``mode="equal_width"`` uses the equal thirds directly.
    """
    s = np.asarray(scores, dtype=float)
    s = s[~np.isnan(s)]
    distinct = np.unique(s)
    if len(distinct) < 2:
        raise ValueError("binning needs at least 2 distinct values")
    lo, hi = float(distinct[0]), float(distinct[-1])
    width = BinEdges(lo + (hi - lo) / 3.0, lo + 2.0 * (hi - lo) / 3.0, fallback=mode == "tercile")
    if mode == "equal_width":
        edges = replace(width, fallback=False)
    elif mode == "tercile":
        q1, q2 = np.quantile(s, [1.0 / 3.0, 2.0 / 3.0])
        edges = BinEdges(float(q1), float(q2))
        if len(np.unique(edges.apply(s))) < 3:
            edges = width
        if len(np.unique(edges.apply(s))) < 3 and len(distinct) >= 3:
            # equal thirds can still miss a class on lumpy data; snap the
            # edges onto observed values so every class keeps a member
            a = int(np.clip(np.searchsorted(distinct, q1, "right") - 1, 0, len(distinct) - 3))
            b = int(np.clip(np.searchsorted(distinct, q2, "right") - 1, a + 1, len(distinct) - 2))
            edges = BinEdges(float(distinct[a]), float(distinct[b]), fallback=True)
    else:
        raise ValueError(f"unknown binning mode {mode!r}")
    return edges.apply(scores), edges


def confusion_matrix(actual, predicted, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(actual, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return cm


def kappa_details(cm) -> tuple[float, bool]:
    """Cohen's kappa and a flag set when chance agreement is 1 (kappa reported as 0)."""
    cm = np.asarray(cm, dtype=float)
    total = cm.sum()
    if cm.size == 0 or total <= 0:
        raise ValueError("confusion matrix is empty")
    p_o = np.trace(cm) / total
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum() / total**2)
    if p_e >= 1.0:
        return 0.0, True
    return float((p_o - p_e) / (1.0 - p_e)), False


def cohen_kappa(cm) -> float:
    return kappa_details(cm)[0]


def stratified_kfold(labels, k: int, seed=0) -> list[np.ndarray]:
    """Split row indices into ``k`` folds with near-equal class counts.

    Each class is shuffled and dealt round-robin; the deal continues where
    the previous class stopped so fold sizes also stay within one row. ``k``
    is reduced to the smallest class count (with a warning) when needed.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if counts.min() < k:
        new_k = int(counts.min())
        if new_k < 2:
            raise ValueError(f"class {classes[counts.argmin()]!r} has fewer than 2 rows")
        warnings.warn(f"smallest class has {new_k} rows; using {new_k} folds instead of {k}", stacklevel=2)
        k = new_k
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    start = 0
    for cls in classes:
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for j, row in enumerate(idx):
            folds[(start + j) % k].append(int(row))
        start = (start + len(idx)) % k
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def holdout_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stratified holdout with at least one row of every class held out."""
    y = np.asarray(labels)
    test = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        take = max(1, int(round(fraction * len(idx))))
        if take >= len(idx):
            raise ValueError(f"class {CLASS_NAMES[int(cls)]!r} too small for a holdout split")
        test.extend(idx[:take].tolist())
    test_idx = np.array(sorted(test), dtype=np.intp)
    train_idx = np.setdiff1d(np.arange(len(y)), test_idx)
    return train_idx, test_idx


def param_grid(base: BoostParams = BoostParams(), learning_rates=(0.05, 0.1, 0.3), depths=(2, 3, 4)):
    return tuple(replace(base, learning_rate=lr, max_depth=d) for lr in learning_rates for d in depths)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    mode: str = "leak_free"
    binning: str = "tercile"
    holdout_fraction: float = 0.1
    n_folds: int = 10
    resample: ResamplePlan = ResamplePlan()
    boost: BoostParams = BoostParams()
    boost_grid: tuple[BoostParams, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown evaluation mode {self.mode!r}")
        if self.binning not in BINNINGS:
            raise ValueError(f"unknown binning mode {self.binning!r}")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")


@dataclass
class FoldResult:
    accuracy: float
    kappa: float
    n_val: int
    n_train: int
    n_synthetic_train: int
    n_synthetic_val: int
    baseline_accuracy: float


@dataclass
class EvalReport:
    trait: str
    mode: str
    n_rows: int
    holdout_size: int
    cv_accuracy: float
    cv_kappa: float
    holdout_accuracy: float
    holdout_kappa: float
    baseline_cv_accuracy: float
    baseline_holdout_accuracy: float
    strategy: str
    params: BoostParams
    edges: BinEdges
    cv_confusion: np.ndarray
    holdout_confusion: np.ndarray
    folds: list[FoldResult] = field(default_factory=list)
    strategy_scores: dict[str, float] = field(default_factory=dict)
    n_synthetic_eval: int = 0
    holdout_ids: tuple[str, ...] = ()

    @property
    def average_accuracy(self) -> float:
        return self.cv_accuracy

    def to_json(self) -> dict:
        return {
            "trait": self.trait,
            "mode": self.mode,
            "n_rows": self.n_rows,
            "holdout_size": self.holdout_size,
            "cv_accuracy": self.cv_accuracy,
            "cv_kappa": self.cv_kappa,
            "holdout_accuracy": self.holdout_accuracy,
            "holdout_kappa": self.holdout_kappa,
            "baseline_cv_accuracy": self.baseline_cv_accuracy,
            "baseline_holdout_accuracy": self.baseline_holdout_accuracy,
            "strategy": self.strategy,
            "strategy_scores": self.strategy_scores,
            "params": asdict(self.params),
            "edges": asdict(self.edges),
            "cv_confusion": self.cv_confusion.tolist(),
            "holdout_confusion": self.holdout_confusion.tolist(),
            "folds": [asdict(f) for f in self.folds],
            "n_synthetic_eval": self.n_synthetic_eval,
            "holdout_ids": list(self.holdout_ids),
        }


def _rng(config: ExperimentConfig, trait: str, *stream: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, TRAIT_NAMES.index(trait), *stream])


def _fit_predict(X_tr, y_tr, X_ev, plan: ResamplePlan, params: BoostParams, rng) -> tuple[np.ndarray, int]:
    if plan.strategy == "none":
        Xb, yb, n_syn = X_tr, y_tr, 0
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            bal = balance(X_tr, y_tr, plan, rng)
        Xb, yb, n_syn = bal.features, bal.labels, int(bal.synthetic.sum())
    model = gbt.train(Xb, yb, params)
    return gbt.predict(model, X_ev), n_syn


def _cross_validate(X, scores, labels, folds, plan, params, binning, rebin, rng_for):
    preds = np.empty(len(labels), dtype=int)
    actual = np.empty(len(labels), dtype=int)
    results = []
    for i, val in enumerate(folds):
        tr = np.setdiff1d(np.arange(len(labels)), val)
        if rebin:
            y_tr, edges = bin_terciles(scores[tr], binning)
            y_val = edges.apply(scores[val])
        else:
            y_tr, y_val = labels[tr], labels[val]
        missing = set(range(3)) - set(np.unique(y_tr).tolist())
        if missing:
            raise ValueError(
                f"class {CLASS_NAMES[min(missing)]!r} absent from the training split of fold {i}"
            )
        p, n_syn = _fit_predict(X[tr], y_tr, X[val], plan, params, rng_for(i))
        preds[val] = p
        actual[val] = y_val
        majority = np.bincount(y_tr, minlength=3).argmax()
        cm = confusion_matrix(y_val, p)
        results.append(
            FoldResult(
                accuracy=float((p == y_val).mean()),
                kappa=cohen_kappa(cm),
                n_val=len(val),
                n_train=len(tr),
                n_synthetic_train=n_syn,
                n_synthetic_val=0,
                baseline_accuracy=float((y_val == majority).mean()),
            )
        )
    cm = confusion_matrix(actual, preds)
    return results, cm


def _select_rows(features: FeatureMatrix, traits: TraitTable, trait: str):
    fam_ok = traits.family_present(family_of(trait))
    pos = {p: i for i, p in enumerate(features.participants)}
    ids = [p for p, ok in zip(traits.participants, fam_ok) if ok and p in pos]
    X = features.rows(ids)
    # rows need at least one observed stream
    keep = ~np.all(np.isnan(X), axis=1)
    ids = [p for p, k in zip(ids, keep) if k]
    tpos = {p: i for i, p in enumerate(traits.participants)}
    scores = traits.column(trait)[[tpos[p] for p in ids]]
    return ids, X[keep], scores


def run_experiment(
    cohort: Cohort | None,
    trait: str,
    config: ExperimentConfig = ExperimentConfig(),
    features: FeatureMatrix | None = None,
    traits: TraitTable | None = None,
) -> EvalReport:
    """Bin one trait into terciles and evaluate boosted trees on it.

    A stratified holdout is set aside first; the rest goes through stratified
    k-fold cross-validation. In ``leak_free`` mode bin edges and resampling
    are fitted on each training partition only. In ``paper_replication``
    mode the whole table is binned and resampled before any split, so
    synthetic rows can land in validation folds and the holdout.
    """
    if trait not in TRAIT_INFO:
        raise KeyError(f"unknown trait {trait!r}")
    if features is None:
        features = build_feature_matrix(cohort)
    if traits is None:
        traits = cohort.traits
    ids, X, scores = _select_rows(features, traits, trait)
    if len(ids) < 2 * config.n_folds:
        raise ValueError(f"{trait}: only {len(ids)} usable rows")

    if config.mode == "paper_replication":
        return _run_replication(ids, X, scores, trait, config)

    provisional, _ = bin_terciles(scores, config.binning)
    train_idx, test_idx = holdout_split(provisional, config.holdout_fraction, _rng(config, trait, 0))
    y_train, edges = bin_terciles(scores[train_idx], config.binning)
    y_test = edges.apply(scores[test_idx])
    missing = set(range(3)) - set(np.unique(y_train).tolist())
    if missing:
        raise ValueError(f"{trait}: class {CLASS_NAMES[min(missing)]!r} absent from the training split")
    X_train, s_train = X[train_idx], scores[train_idx]
    folds = stratified_kfold(y_train, config.n_folds, _rng(config, trait, 1))

    strategies = ("smote", "adasyn") if config.resample.strategy == "auto" else (config.resample.strategy,)
    grid = config.boost_grid or (config.boost,)
    best = None
    strategy_scores: dict[str, float] = {}
    for si, strat in enumerate(strategies):
        plan = replace(config.resample, strategy=strat)
        for gi, params in enumerate(grid):
            fold_results, cm = _cross_validate(
                X_train, s_train, y_train, folds, plan, params, config.binning, True,
                lambda i, si=si, gi=gi: _rng(config, trait, 2, si, gi, i),
            )
            kappa = cohen_kappa(cm)
            strategy_scores[strat if len(grid) == 1 else f"{strat}/{gi}"] = kappa
            # ties keep the earlier candidate: smote before adasyn, grid order
            if best is None or kappa > best[0]:
                best = (kappa, strat, params, fold_results, cm, si)
    cv_kappa, strat, params, fold_results, cv_cm, si = best

    plan = replace(config.resample, strategy=strat)
    pred, _ = _fit_predict(X_train, y_train, X[test_idx], plan, params, _rng(config, trait, 3, si))
    ho_cm = confusion_matrix(y_test, pred)
    majority = np.bincount(y_train, minlength=3).argmax()
    return EvalReport(
        trait=trait,
        mode=config.mode,
        n_rows=len(ids),
        holdout_size=len(test_idx),
        cv_accuracy=float(np.mean([f.accuracy for f in fold_results])),
        cv_kappa=cv_kappa,
        holdout_accuracy=float((pred == y_test).mean()),
        holdout_kappa=cohen_kappa(ho_cm),
        baseline_cv_accuracy=float(np.mean([f.baseline_accuracy for f in fold_results])),
        baseline_holdout_accuracy=float((y_test == majority).mean()),
        strategy=strat,
        params=params,
        edges=edges,
        cv_confusion=cv_cm,
        holdout_confusion=ho_cm,
        folds=fold_results,
        strategy_scores=strategy_scores,
        n_synthetic_eval=0,
        holdout_ids=tuple(ids[i] for i in test_idx),
    )


def _run_replication(ids, X, scores, trait, config: ExperimentConfig) -> EvalReport:
    labels, edges = bin_terciles(scores, config.binning)
    strat = "smote" if config.resample.strategy == "auto" else config.resample.strategy
    plan = replace(config.resample, strategy=strat)
    if strat == "none":
        Xb, yb, syn = X, labels, np.zeros(len(labels), dtype=bool)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            bal = balance(X, labels, plan, _rng(config, trait, 4))
        Xb, yb, syn = bal.features, bal.labels, bal.synthetic
    train_idx, test_idx = holdout_split(yb, config.holdout_fraction, _rng(config, trait, 0))
    X_tr, y_tr, syn_tr = Xb[train_idx], yb[train_idx], syn[train_idx]
    folds = stratified_kfold(y_tr, config.n_folds, _rng(config, trait, 1))
    none = replace(plan, strategy="none")
    fold_results, cv_cm = _cross_validate(
        X_tr, None, y_tr, folds, none, config.boost, config.binning, False, lambda i: None
    )
    for f, val in zip(fold_results, folds):
        f.n_synthetic_val = int(syn_tr[val].sum())
    pred, _ = _fit_predict(X_tr, y_tr, Xb[test_idx], none, config.boost, None)
    y_test = yb[test_idx]
    ho_cm = confusion_matrix(y_test, pred)
    majority = np.bincount(y_tr, minlength=3).argmax()
    return EvalReport(
        trait=trait,
        mode=config.mode,
        n_rows=len(ids),
        holdout_size=len(test_idx),
        cv_accuracy=float(np.mean([f.accuracy for f in fold_results])),
        cv_kappa=cohen_kappa(cv_cm),
        holdout_accuracy=float((pred == y_test).mean()),
        holdout_kappa=cohen_kappa(ho_cm),
        baseline_cv_accuracy=float(np.mean([f.baseline_accuracy for f in fold_results])),
        baseline_holdout_accuracy=float((y_test == majority).mean()),
        strategy=strat,
        params=config.boost,
        edges=edges,
        cv_confusion=cv_cm,
        holdout_confusion=ho_cm,
        folds=fold_results,
        n_synthetic_eval=int(syn[test_idx].sum()) + sum(f.n_synthetic_val for f in fold_results),
        holdout_ids=tuple(ids[i] if i < len(ids) else f"synthetic-{i - len(ids)}" for i in test_idx),
    )


def run_all(
    features: FeatureMatrix,
    traits: TraitTable,
    config: ExperimentConfig,
    trait_names: Sequence[str] = TRAIT_NAMES,
    workers: int = 1,
) -> list[EvalReport]:
    """Run every trait; output order follows ``trait_names`` whatever ``workers`` is."""
    def one(t: str) -> EvalReport:
        return run_experiment(None, t, config, features=features, traits=traits)

    if workers <= 1:
        return [one(t) for t in trait_names]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, trait_names))


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def write_accuracy_table(reports: Iterable[EvalReport], fh: IO[str], which: str = "holdout") -> None:
    """Accuracy summary with columns Variable, Average Accuracy, Cohen's Kappa.

    ``which`` picks holdout metrics or cross-validation metrics.
    """
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(ACCURACY_HEADER)
    for r in reports:
        acc, kap = (r.holdout_accuracy, r.holdout_kappa) if which == "holdout" else (r.cv_accuracy, r.cv_kappa)
        writer.writerow((TRAIT_INFO[r.trait].long_label, _pct(acc), f"{kap:.2f}"))


def dumps_reports(reports: Iterable[EvalReport]) -> str:
    return json.dumps(
        {"schema_version": "1.0", "reports": [r.to_json() for r in reports]}, indent=1, sort_keys=True
    )
