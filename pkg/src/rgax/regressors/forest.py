"""Random forests tuned on out-of-bag error.

Each tree is grown on a bootstrap sample of size n, drawing ``mtry``
candidate features at every split. A grid cell ``(mtry, max_depth)`` is
scored by the mean squared OOB error (the Brier score for probability
forests); the best cell's ensemble is returned together with its OOB
predictions for the training rows.
"""

import numpy as np

from ..errors import DataError
from . import _trees
from .base import FittedRegressor, TuningGrid, prepare_training


def tree_seeds(seed, n_trees):
    """Per-tree stream seeds derived from the master seed."""
    return np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint64)


def _grow(bins, n_bins, y, seeds, depth, mtry, min_node_size, keep_inbag):
    T, n = len(seeds), len(y)
    m = _trees.max_nodes(depth)
    feature = np.full((T, m), -1, np.int64)
    split_bin = np.zeros((T, m), np.int64)
    left = np.full((T, m), -1, np.int64)
    right = np.full((T, m), -1, np.int64)
    value = np.zeros((T, m))
    inbag = np.zeros((T if keep_inbag else 1, n), np.int64)
    oob_sum, oob_cnt = _trees.fit_forest_kernel(
        bins, n_bins, y, seeds, depth, mtry, float(min_node_size),
        feature, split_bin, left, right, value, inbag)
    return (feature, split_bin, left, right, value), oob_sum, oob_cnt, inbag


def fit_forest(features, targets, grid=None, probability=True, *, seed=0,
               min_node_size=1, keep_inbag=False, columns=None):
    """Bagged depth-limited trees, cell chosen by OOB loss.

    Raises DataError when some training row is never out of bag, which
    means the tree count is too small for OOB predictions.
    """
    grid = grid or TuningGrid()
    X, enc, names = prepare_training(features, columns)
    y = np.asarray(targets, dtype=float)
    n, p = X.shape
    if len(y) != n:
        raise DataError("features and targets differ in length")
    if n < 10:
        raise DataError("forest needs at least 10 rows")
    if probability and not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("probability forest needs binary 0/1 targets")
    cells = grid.forest_cells(max(p, 1))
    if not cells:
        raise DataError("empty tuning grid")

    if p == 0:
        X = np.zeros((n, 1))
    edges, n_bins = _trees.make_bin_edges(X)
    bins = _trees.apply_bins(X, edges, n_bins)
    seeds = tree_seeds(seed, grid.n_trees)

    table, best = [], None
    for mtry, depth in cells:
        trees, s, c, inbag = _grow(bins, n_bins, y, seeds, depth, mtry, min_node_size,
                                   keep_inbag)
        if np.any(c == 0):
            raise DataError(
                f"{int(np.sum(c == 0))} training rows were never out of bag with "
                f"{grid.n_trees} trees; increase the tree count")
        oob = s / c
        loss = float(np.mean((y - oob) ** 2))
        table.append({"mtry": mtry, "max_depth": depth, "oob_loss": loss})
        if best is None or loss < best[0]:
            best = (loss, mtry, depth, trees, oob, inbag)

    loss, mtry, depth, (feature, split_bin, left, right, value), oob, inbag = best
    threshold = _trees.thresholds_from_bins(feature, split_bin, edges)
    state = {"feature": feature, "threshold": threshold, "left": left, "right": right,
             "value": value}
    diagnostics = {"oob_grid": table, "oob_loss": loss}
    if probability:
        diagnostics["oob_misclassification"] = float(np.mean((oob > 0.5) != (y > 0.5)))
    if keep_inbag:
        state["inbag"] = inbag
    return FittedRegressor(
        "forest",
        {"mtry": mtry, "max_depth": depth, "n_trees": grid.n_trees,
         "min_node_size": min_node_size, "seed": seed},
        diagnostics, state, n_features=p, probability=probability, encoder=enc,
        feature_names=tuple(names), oob_prediction=oob)
