"""Independent reference computations used by the tests."""

import math
import warnings
from itertools import combinations

import numpy as np
from scipy import integrate, special


def pearson_r(x, y) -> float:
    """Textbook correlation with compensated sums, in plain Python."""
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def t_two_sided(t: float, df: float) -> float:
    return float(2 * special.stdtr(df, -abs(t)))


def t_two_sided_quad(t: float, df: float) -> float:
    """Two-sided tail by integrating the Student-t density."""
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    dens = lambda u: c * (1 + u * u / df) ** (-(df + 1) / 2)  # noqa: E731
    # quad warns when it cannot certify 1e-14; the result is still far inside 1e-10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        inner, _ = integrate.quad(dens, 0, abs(t), epsabs=1e-14, epsrel=1e-14, limit=200)
    return 1 - 2 * inner


def normal_equations(X, y):
    """Coefficients, standard errors, R^2 and adjusted R^2 via (X'X)^-1 X'y."""
    X = np.asarray(X, float)
    A = np.column_stack([np.ones(len(X)), X])
    XtX = A.T @ A
    beta = np.linalg.solve(XtX, A.T @ y)
    resid = y - A @ beta
    n, k = A.shape
    s2 = resid @ resid / (n - k)
    se = np.sqrt(np.diag(s2 * np.linalg.inv(XtX)))
    r2 = 1 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
    adj = 1 - (1 - r2) * (n - 1) / (n - k)
    return beta, se, r2, adj


def vif_inverse_corr(X):
    """VIFs are the diagonal of the inverse correlation matrix."""
    return np.diag(np.linalg.inv(np.corrcoef(X, rowvar=False)))


def shapley_enumerate(value, n_features):
    """Shapley values of a set function over features 0..n-1 by full enumeration."""
    phi = np.zeros(n_features)
    for i in range(n_features):
        others = [j for j in range(n_features) if j != i]
        for size in range(len(others) + 1):
            w = math.factorial(size) * math.factorial(n_features - size - 1) / math.factorial(n_features)
            for s in combinations(others, size):
                phi[i] += w * (value(frozenset(s) | {i}) - value(frozenset(s)))
    return phi


def cover_value(tree, x, coalition, node=0):
    """Path-dependent expectation: unknown features follow both branches by cover."""
    if tree.feature[node] < 0:
        return tree.value[node]
    f = tree.feature[node]
    left, right = tree.left[node], tree.right[node]
    if f in coalition:
        v = x[f]
        go_left = tree.default_left[node] if np.isnan(v) else v < tree.threshold[node]
        return cover_value(tree, x, coalition, left if go_left else right)
    cl, cr = tree.cover[left], tree.cover[right]
    return (cl * cover_value(tree, x, coalition, left) + cr * cover_value(tree, x, coalition, right)) / (cl + cr)


def on_segment(p, a, b, tol=1e-9) -> bool:
    """Is p on the segment ab (triangle-equality test)?"""
    d = np.linalg.norm
    return abs(d(p - a) + d(b - p) - d(b - a)) <= tol


def random_tree(rng, n_features, max_depth, p_split=0.8):
    """Random flat tree with consistent integer covers; features may repeat on a path."""
    from facetrait.gbt import Tree

    nodes = []

    def grow(depth, cover):
        idx = len(nodes)
        nodes.append(None)
        if depth < max_depth and cover >= 2 and rng.random() < p_split:
            cl = int(rng.integers(1, cover))
            f = int(rng.integers(0, n_features))
            thr = float(rng.uniform(-1, 1))
            left = grow(depth + 1, cl)
            right = grow(depth + 1, cover - cl)
            nodes[idx] = dict(feature=f, threshold=thr, left=left, right=right,
                              default_left=bool(rng.random() < 0.5), value=0.0, cover=float(cover))
        else:
            nodes[idx] = dict(feature=-1, value=float(rng.normal()), cover=float(cover))
        return idx

    grow(0, int(rng.integers(20, 200)))
    return Tree.from_nodes(nodes)
