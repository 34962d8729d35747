"""Gradient-boosted regression trees with grid search and early stopping.

Squared loss boosts on residuals; logistic loss takes second-order (Newton)
leaf steps ``-G / max(H, 1e-6)``. Every grid cell is scored by k-fold
cross-validation, with all folds boosted in lockstep and the round count
chosen where the mean validation loss bottoms out (stopping after
``patience`` rounds without improvement). The winning cell is refit on all
rows for its chosen number of rounds.
"""

import numpy as np
from scipy.special import expit, log_expit

from ..errors import DataError
from . import _trees
from .base import FittedRegressor, TuningGrid, prepare_training

LOSSES = ("logistic", "squared")


def _loss(loss, y, F):
    if loss == "squared":
        return float(np.mean((y - F) ** 2))
    return float(-np.mean(y * log_expit(F) + (1.0 - y) * log_expit(-F)))


def _grad_hess(loss, y, F):
    if loss == "squared":
        return F - y, np.ones_like(F)
    p = expit(F)
    return p - y, p * (1.0 - p)


def _base_score(loss, y):
    m = float(np.mean(y))
    if loss == "squared":
        return m
    m = min(max(m, 1e-12), 1.0 - 1e-12)
    return float(np.log(m / (1.0 - m)))


class _Booster:
    """Incremental booster over a fixed binned design."""

    def __init__(self, bins, n_bins, y, loss, lr, depth, min_child_weight, reg_lambda):
        self.bins, self.n_bins, self.y = bins, n_bins, y
        self.loss, self.lr, self.depth = loss, lr, depth
        self.mcw, self.lam = min_child_weight, reg_lambda
        self.base = _base_score(loss, y)
        self.F = np.full(len(y), self.base)
        self.trees = []
        self._rng = np.zeros(1, dtype=np.uint64)

    def step(self):
        g, h = _grad_hess(self.loss, self.y, self.F)
        m = _trees.max_nodes(self.depth)
        arrs = (np.full(m, -1, np.int64), np.zeros(m, np.int64),
                np.full(m, -1, np.int64), np.full(m, -1, np.int64), np.zeros(m))
        rows = np.arange(len(self.y), dtype=np.int64)
        p = self.bins.shape[1]
        _trees.grow_tree(self.bins, self.n_bins, g, h, rows, self.depth, self.mcw,
                         p, self.lam, self._rng, *arrs)
        arrs[4][:] *= self.lr
        _trees.predict_binned(self.bins, arrs[0], arrs[1], arrs[2], arrs[3], arrs[4],
                              self.F, 1.0)
        self.trees.append(arrs)
        return arrs

    def apply(self, bins, F, tree):
        _trees.predict_binned(bins, tree[0], tree[1], tree[2], tree[3], tree[4], F, 1.0)


def _fold_ids(n, k, seed):
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % k
    return ids


def cv_cell(bins, n_bins, y, folds, loss, lr, depth, grid, min_child_weight, reg_lambda):
    """Lockstep k-fold boosting; returns (best_rounds, best_loss, curve)."""
    fits = []
    for k in range(folds.max() + 1):
        tr, va = folds != k, folds == k
        b = _Booster(np.ascontiguousarray(bins[tr]), n_bins, y[tr], loss, lr, depth,
                     min_child_weight, reg_lambda)
        bv = np.ascontiguousarray(bins[va])
        fits.append((b, bv, y[va], np.full(va.sum(), b.base)))
    curve = [np.mean([_loss(loss, yv, Fv) for _, _, yv, Fv in fits])]
    best, best_round = curve[0], 0
    for r in range(1, grid.max_rounds + 1):
        for b, bv, _, Fv in fits:
            tree = b.step()
            b.apply(bv, Fv, tree)
        cur = float(np.mean([_loss(loss, yv, Fv) for _, _, yv, Fv in fits]))
        curve.append(cur)
        if cur < best:
            best, best_round = cur, r
        elif r - best_round >= grid.patience:
            break
    return best_round, best, curve


def fit_gbt(features, targets, grid=None, loss="logistic", *, seed=0,
            min_child_weight=1.0, reg_lambda=0.0, columns=None):
    """Boosted trees tuned over ``grid.gbt_cells()`` by cross-validation.

    A constant target yields a zero-tree model that predicts the constant.
    """
    grid = grid or TuningGrid()
    if loss not in LOSSES:
        raise DataError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    cells = grid.gbt_cells()
    if not cells:
        raise DataError("empty tuning grid")
    X, enc, names = prepare_training(features, columns)
    y = np.asarray(targets, dtype=float)
    n = len(y)
    if n != X.shape[0]:
        raise DataError("features and targets differ in length")
    if n < 2 * grid.folds:
        raise DataError(f"need at least {2 * grid.folds} rows for {grid.folds}-fold CV")
    if loss == "logistic" and (y.min() < 0 or y.max() > 1):
        raise DataError("logistic loss needs targets in [0, 1]")
    probability = loss == "logistic"
    common = dict(n_features=X.shape[1], probability=probability, encoder=enc,
                  feature_names=tuple(names))

    if np.all(y == y[0]):
        return FittedRegressor(
            "gbt", {"loss": loss, "learning_rate": None, "max_depth": None, "n_rounds": 0},
            {"cv": [], "note": "constant target"},
            {"constant": float(y[0]), "loss": loss}, **common)

    edges, n_bins = _trees.make_bin_edges(X)
    bins = _trees.apply_bins(X, edges, n_bins)
    folds = _fold_ids(n, grid.folds, seed)

    table = []
    for lr, depth in cells:
        rounds, score, _ = cv_cell(bins, n_bins, y, folds, loss, lr, depth, grid,
                                   min_child_weight, reg_lambda)
        table.append({"learning_rate": lr, "max_depth": depth, "rounds": rounds,
                      "cv_loss": score})
    best = min(range(len(table)), key=lambda i: (table[i]["cv_loss"], i))
    cell = table[best]

    booster = _Booster(bins, n_bins, y, loss, cell["learning_rate"], cell["max_depth"],
                       min_child_weight, reg_lambda)
    train_trace = [_loss(loss, y, booster.F)]
    for _ in range(cell["rounds"]):
        booster.step()
        train_trace.append(_loss(loss, y, booster.F))

    m = _trees.max_nodes(cell["max_depth"])
    T = len(booster.trees)
    if T:
        feature = np.stack([t[0] for t in booster.trees])
        split_bin = np.stack([t[1] for t in booster.trees])
        left = np.stack([t[2] for t in booster.trees])
        right = np.stack([t[3] for t in booster.trees])
        value = np.stack([t[4] for t in booster.trees])
    else:
        feature = np.full((0, m), -1, np.int64)
        split_bin = np.zeros((0, m), np.int64)
        left = right = feature
        value = np.zeros((0, m))
    threshold = _trees.thresholds_from_bins(feature, split_bin, edges)
    return FittedRegressor(
        "gbt",
        {"loss": loss, "learning_rate": cell["learning_rate"],
         "max_depth": cell["max_depth"], "n_rounds": cell["rounds"], "folds": grid.folds,
         "min_child_weight": min_child_weight, "reg_lambda": reg_lambda},
        {"cv": table, "train_loss_trace": train_trace},
        {"base": booster.base, "loss": loss, "feature": feature, "threshold": threshold,
         "left": left, "right": right, "value": value},
        **common)
