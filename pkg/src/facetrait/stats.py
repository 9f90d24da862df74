"""Correlations, OLS with adjusted R^2, VIF screening and forward selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import FeatureMatrix
from .taxonomy import FEATURE_NAMES, TRAIT_NAMES

# ---------------------------------------------------------------------------
# Student t tail via the regularized incomplete beta function


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    """Continued fraction for I_x(a, b), modified Lentz."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``df`` dof."""
    if not df >= 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 == 0.0:
        return 1.0
    # P(|T| >= t) = I_{df/(df+t^2)}(df/2, 1/2); use the complementary form when
    # df/(df+t^2) is close to 1 to avoid cancellation
    x = df / (df + t2)
    if x > 0.5:
        return 1.0 - betainc(0.5, df / 2.0, t2 / (df + t2))
    return betainc(df / 2.0, 0.5, x)


# ---------------------------------------------------------------------------
# significance markers

def correlation_stars(p: float) -> str:
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def regression_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# ---------------------------------------------------------------------------
# Pearson correlation


class UndefinedCorrelation(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationCell:
    r: float
    p: float
    n: int

    @property
    def stars(self) -> str:
        return correlation_stars(self.p)

    def __str__(self) -> str:
        return f"{self.r:.3f}{self.stars}"


def pearson(x, y) -> CorrelationCell:
    """Pearson r on pairwise-complete observations with a two-sided t-test p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    n = len(x)
    if n < 3:
        raise UndefinedCorrelation(f"need at least 3 complete pairs, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("correlation undefined for a constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return CorrelationCell(r, 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return CorrelationCell(r, student_t_sf(t, n - 2), n)


@dataclass(frozen=True)
class CorrelationTable:
    """105 x 22 grid of correlation cells; ``None`` where undefined."""

    participants: tuple[str, ...]
    cells: tuple[tuple[CorrelationCell | None, ...], ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.cells), len(self.cells[0]) if self.cells else 0

    def cell(self, feature: str, trait: str) -> CorrelationCell | None:
        return self.cells[FEATURE_NAMES.index(feature)][TRAIT_NAMES.index(trait)]

    def r_matrix(self) -> np.ndarray:
        return np.array([[np.nan if c is None else c.r for c in row] for row in self.cells])

    def to_rows(self) -> list[list[str]]:
        rows = [["Emotion"] + list(TRAIT_NAMES)]
        for name, row in zip(FEATURE_NAMES, self.cells):
            rows.append([name] + ["" if c is None else str(c) for c in row])
        return rows

    def to_json(self) -> dict:
        return {
            "schema_version": "1.0",
            "features": list(FEATURE_NAMES),
            "traits": list(TRAIT_NAMES),
            "n_participants": len(self.participants),
            "cells": [
                [None if c is None else {"r": c.r, "p": c.p, "n": c.n, "stars": c.stars} for c in row]
                for row in self.cells
            ],
        }


def correlation_table(features: FeatureMatrix, traits) -> CorrelationTable:
    """Pearson correlations of every feature with every trait (pairwise deletion).

    ``traits`` is a :class:`~facetrait.cohort.TraitTable` covering the same
    participants as ``features``.
    """
    pos = {p: i for i, p in enumerate(traits.participants)}
    scores = traits.scores[[pos[p] for p in features.participants]]
    grid = []
    for j in range(features.values.shape[1]):
        row = []
        for k in range(scores.shape[1]):
            try:
                row.append(pearson(features.values[:, j], scores[:, k]))
            except UndefinedCorrelation:
                row.append(None)
        grid.append(tuple(row))
    return CorrelationTable(features.participants, tuple(grid))


# ---------------------------------------------------------------------------
# OLS


class SingularDesign(np.linalg.LinAlgError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"design matrix is rank deficient: column {column!r} is linearly dependent")


@dataclass(frozen=True)
class Term:
    name: str
    coef: float
    se: float
    t: float
    p: float

    @property
    def stars(self) -> str:
        return regression_stars(self.p)

    def __str__(self) -> str:
        return f"{self.coef:.3f} {self.stars}".rstrip()


@dataclass(frozen=True)
class RegressionModel:
    dependent: str
    intercept: Term
    terms: tuple[Term, ...]
    r2: float
    adj_r2: float
    n: int
    vifs: dict[str, float] = field(default_factory=dict)
    residuals: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.intercept.coef] + [t.coef for t in self.terms])

    @property
    def term_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def to_json(self) -> dict:
        def term(t: Term) -> dict:
            return {"name": t.name, "coef": t.coef, "se": t.se, "t": t.t, "p": t.p, "stars": t.stars}

        return {
            "dependent": self.dependent,
            "intercept": term(self.intercept),
            "terms": [term(t) for t in self.terms],
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "n": self.n,
            "vifs": self.vifs,
        }


def _rank_check(X: np.ndarray, names: Sequence[str], tol: float = 1e-10) -> None:
    # on unit-norm columns |R_jj| is the share of column j orthogonal to its predecessors
    norms = np.linalg.norm(X, axis=0)
    for j in np.flatnonzero(norms == 0):
        raise SingularDesign(names[j])
    _, r = np.linalg.qr(X / norms)
    for j, d in enumerate(np.abs(np.diag(r))):
        if d < tol:
            raise SingularDesign(names[j])


def ols_fit(
    X,
    y,
    names: Sequence[str] | None = None,
    dependent: str = "y",
    intercept: bool = True,
) -> RegressionModel:
    """Least-squares fit of ``y`` on the columns of ``X`` plus an intercept.

    Standard errors come from s^2 (X'X)^-1; p-values from the t distribution
    with n - p - 1 degrees of freedom.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    if intercept:
        design = np.column_stack([np.ones(n), X])
        all_names = ["Constant"] + names
    else:
        design = X
        all_names = names
    k = design.shape[1]
    if n <= k:
        raise ValueError(f"need more observations ({n}) than parameters ({k})")
    _rank_check(design, all_names)

    q, r = np.linalg.qr(design)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - design @ beta
    sse = float(resid @ resid)
    dof = n - k
    s2 = sse / dof
    r_inv = np.linalg.inv(r)
    cov = s2 * (r_inv @ r_inv.T)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))

    if intercept:
        centered = y - y.mean()
        sst = float(centered @ centered)
    else:
        sst = float(y @ y)
    r2 = 1.0 - sse / sst if sst > 0 else (1.0 if sse == 0 else 0.0)
    n_pred = k - 1 if intercept else k
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - n_pred - 1) if n - n_pred - 1 > 0 else math.nan

    terms = []
    for j in range(k):
        if se[j] > 0:
            t = float(beta[j] / se[j])
            pv = student_t_sf(t, dof)
        else:
            t = math.copysign(math.inf, beta[j]) if beta[j] != 0 else 0.0
            pv = 0.0 if beta[j] != 0 else 1.0
        terms.append(Term(all_names[j], float(beta[j]), float(se[j]), t, pv))
    if intercept:
        icpt, rest = terms[0], tuple(terms[1:])
    else:
        icpt, rest = Term("Constant", 0.0, 0.0, 0.0, 1.0), tuple(terms)
    return RegressionModel(dependent, icpt, rest, r2, adj, n, residuals=resid)


# ---------------------------------------------------------------------------
# VIF


def vif(X, names: Sequence[str] | None = None) -> dict[str, float]:
    """Variance inflation factor of each column against the others plus an intercept.

    A column that is an exact linear combination of the others gets ``inf``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    if n <= p:
        raise ValueError(f"vif needs more rows ({n}) than columns ({p})")
    out: dict[str, float] = {}
    for j in range(p):
        if p == 1:
            out[names[j]] = 1.0
            continue
        target = X[:, j]
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(others, target, rcond=None)
        resid = target - others @ coef
        dev = target - target.mean()
        sst = float(dev @ dev)
        sse = float(resid @ resid)
        if sst == 0.0 or sse <= sst * 1e-12:
            out[names[j]] = math.inf
        else:
            out[names[j]] = sst / sse
    return out


# ---------------------------------------------------------------------------
# forward selection


@dataclass(frozen=True)
class SelectionConfig:
    vif_max: float = 5.0
    epsilon: float = 0.005
    max_terms: int | None = None


def forward_select(
    features: FeatureMatrix | np.ndarray,
    y,
    config: SelectionConfig = SelectionConfig(),
    names: Sequence[str] | None = None,
    dependent: str = "y",
) -> RegressionModel:
    """Greedy forward selection on adjusted R^2 with a VIF screen.

    Rows where ``y`` is missing are dropped; only columns complete on the
    remaining rows are candidates. Each step adds the admissible candidate
    with the highest adjusted R^2; a candidate is inadmissible if the model it
    would form has any VIF above ``config.vif_max``. Selection stops once the
    best gain falls below ``config.epsilon``.
    """
    if isinstance(features, FeatureMatrix):
        X = features.values
        names = FEATURE_NAMES
    else:
        X = np.asarray(features, dtype=float)
        names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    y = np.asarray(y, dtype=float)
    rows = ~np.isnan(y)
    X, y = X[rows], y[rows]
    n = len(y)
    candidates = [j for j in range(X.shape[1]) if not np.isnan(X[:, j]).any() and np.ptp(X[:, j]) > 0]

    chosen: list[int] = []
    current_adj = 0.0
    limit = config.max_terms if config.max_terms is not None else n - 3
    while candidates and len(chosen) < limit:
        best = None
        for j in candidates:
            cols = chosen + [j]
            if n - len(cols) - 1 < 1:
                continue
            try:
                model = ols_fit(X[:, cols], y, [names[c] for c in cols], dependent)
            except SingularDesign:
                continue
            if best is not None and not model.adj_r2 > best[1]:
                continue
            if len(cols) > 1:
                vifs = vif(X[:, cols])
                if max(vifs.values()) > config.vif_max:
                    continue
            best = (j, model.adj_r2)
        if best is None or best[1] - current_adj < config.epsilon:
            break
        chosen.append(best[0])
        candidates.remove(best[0])
        current_adj = best[1]

    if not chosen:
        centered = y - y.mean()
        se = float(np.std(y, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        t = float(y.mean() / se) if se > 0 else math.inf
        p = student_t_sf(t, n - 1) if n > 1 and se > 0 else 0.0
        return RegressionModel(
            dependent, Term("Constant", float(y.mean()), se, t, p), (), 0.0, 0.0, n,
            residuals=centered,
        )
    model = ols_fit(X[:, chosen], y, [names[c] for c in chosen], dependent)
    vifs = vif(X[:, chosen], [names[c] for c in chosen]) if len(chosen) > 1 else {names[chosen[0]]: 1.0}
    return RegressionModel(
        model.dependent, model.intercept, model.terms, model.r2, model.adj_r2, model.n, vifs,
        residuals=model.residuals,
    )
