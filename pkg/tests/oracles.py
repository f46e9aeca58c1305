"""Slow, obviously-correct reference computations used only by the tests.

Nothing here imports the package's numerical code paths.
"""
import math

import numpy as np


def two_pass_stats(X):
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    mean = [sum(X[i, j] for i in range(n)) / n for j in range(d)]
    var = [sum((X[i, j] - mean[j]) ** 2 for i in range(n)) / n for j in range(d)]
    return np.array(mean), np.array(var)


def scalar_sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def row_loss(w, x, y):
    """-[y log h + (1 - y) log(1 - h)] for one row, bias last in ``w``."""
    z = sum(wi * xi for wi, xi in zip(w[:-1], x)) + w[-1]
    # log(1 + e^z) without overflow
    softplus = z + math.log1p(math.exp(-z)) if z > 0 else math.log1p(math.exp(z))
    return softplus - y * z


def naive_loss(w, X, y):
    return sum(row_loss(w, x, yi) for x, yi in zip(X, y)) / len(y)


def naive_scores(w, X):
    return np.array([scalar_sigmoid(sum(wi * xi for wi, xi in zip(w[:-1], x)) + w[-1]) for x in X])


def finite_difference_grad(w, X, y, h=1e-6):
    w = np.asarray(w, dtype=float)
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (naive_loss(w + e, X, y) - naive_loss(w - e, X, y)) / (2 * h)
    return g


def minimal_gd(X, y, lr, iters):
    """Batch gradient descent on mean logistic loss, from zero, written out longhand."""
    n, d = X.shape
    Xa = np.column_stack([X, np.ones(n)])
    w = np.zeros(d + 1)
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(Xa @ w)))
        w = w - lr * (Xa.T @ (p - y)) / n
    return w


def pooled_zscore(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return (X - mu) / sd


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def sweep_trapezoid_auc(scores, labels):
    """ROC by lowering the threshold through each distinct score; area by trapezoids."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    P = int((labels == 1).sum())
    N = int((labels == 0).sum())
    pts = [(0.0, 0.0)]
    for th in sorted(set(scores.tolist()), reverse=True):
        tp = int(((scores >= th) & (labels == 1)).sum())
        fp = int(((scores >= th) & (labels == 0)).sum())
        pts.append((fp / N, tp / P))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area
