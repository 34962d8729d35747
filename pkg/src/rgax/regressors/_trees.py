"""Histogram tree kernels shared by the boosting and forest learners.

Features are pre-binned into at most ``MAX_BINS`` ordered bins. A tree is
stored as flat node arrays; a split sends a row left when its bin index is
``<= split_bin`` (equivalently, raw value ``<= threshold``). Leaf values are
Newton steps ``-G / max(H + lam, LEAF_FLOOR)`` so the same grower fits
squared-loss forests (``grad = -y * w``, ``hess = w``) and second-order
boosting rounds.

Randomness (bootstrap draws, per-split feature subsets) comes from a
splitmix64 stream seeded per tree, which keeps results independent of how
trees are scheduled.
"""

import numpy as np
from numba import njit

MAX_BINS = 255
LEAF_FLOOR = 1e-6

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _randint(state, k):
    # 53 random bits scaled to [0, k)
    u = np.float64(_next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    j = np.int64(u * k)
    if j >= k:
        j = k - 1
    return j


def make_bin_edges(X, max_bins=MAX_BINS):
    """Per-feature split candidates.

    Features with at most ``max_bins`` distinct values get one edge between
    every pair of neighbours, so splits are exact; others use quantile edges.
    Returns ``(edges, n_bins)`` with ``edges`` padded by ``+inf``.
    """
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    edges = np.full((p, max_bins - 1), np.inf)
    n_bins = np.ones(p, dtype=np.int64)
    for j in range(p):
        u = np.unique(X[:, j])
        if len(u) <= 1:
            continue
        if len(u) <= max_bins:
            e = 0.5 * (u[:-1] + u[1:])
            # midpoint can round up onto the upper neighbour
            bad = e >= u[1:]
            e[bad] = u[:-1][bad]
        else:
            qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
            e = np.unique(np.quantile(X[:, j], qs, method="linear"))
            e = e[e < u[-1]]
        edges[j, : len(e)] = e
        n_bins[j] = len(e) + 1
    return edges, n_bins


def apply_bins(X, edges, n_bins):
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape, dtype=np.uint8)
    for j in range(X.shape[1]):
        k = n_bins[j] - 1
        out[:, j] = np.searchsorted(edges[j, :k], X[:, j], side="left")
    return out


def max_nodes(max_depth):
    return 2 ** (max_depth + 1) - 1


@njit(cache=True, nogil=True)
def grow_tree(bins, n_bins, grad, hess, rows, max_depth, min_child_weight,
              mtry, lam, rng, feature, split_bin, left, right, value):
    """Grow one depth-limited tree in place; returns the node count.

    ``rows`` is permuted in place. Output arrays must hold
    ``2**(max_depth+1) - 1`` nodes.
    """
    p = bins.shape[1]
    nb_max = 1
    for j in range(p):
        if n_bins[j] > nb_max:
            nb_max = n_bins[j]
    hist_g = np.zeros((p, nb_max))
    hist_h = np.zeros((p, nb_max))
    perm = np.arange(p)
    cand = np.empty(p, dtype=np.int64)

    cap = feature.shape[0]
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = rows.shape[0]
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]

        G = 0.0
        H = 0.0
        for i in range(start, end):
            r = rows[i]
            G += grad[r]
            H += hess[r]
        denom = H + lam
        if denom < 1e-6:
            denom = 1e-6
        value[node] = -G / denom
        feature[node] = -1
        split_bin[node] = 0
        left[node] = -1
        right[node] = -1
        if depth >= max_depth or end - start < 2:
            continue

        if mtry >= p:
            ncand = p
            for j in range(p):
                cand[j] = j
        else:
            ncand = mtry
            for j in range(mtry):
                k = j + _randint(rng, p - j)
                tmp = perm[j]
                perm[j] = perm[k]
                perm[k] = tmp
                cand[j] = perm[j]

        for c in range(ncand):
            f = cand[c]
            for b in range(n_bins[f]):
                hist_g[c, b] = 0.0
                hist_h[c, b] = 0.0
        for i in range(start, end):
            r = rows[i]
            g = grad[r]
            h = hess[r]
            for c in range(ncand):
                b = bins[r, cand[c]]
                hist_g[c, b] += g
                hist_h[c, b] += h

        parent = G * G / denom
        best_gain = 1e-12 * (abs(parent) + 1.0)
        best_f = -1
        best_b = -1
        for c in range(ncand):
            f = cand[c]
            GL = 0.0
            HL = 0.0
            for b in range(n_bins[f] - 1):
                GL += hist_g[c, b]
                HL += hist_h[c, b]
                HR = H - HL
                if HL < min_child_weight or HR < min_child_weight:
                    continue
                GR = G - GL
                dl = HL + lam
                if dl < 1e-6:
                    dl = 1e-6
                dr = HR + lam
                if dr < 1e-6:
                    dr = 1e-6
                gain = GL * GL / dl + GR * GR / dr - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_b = b
        if best_f < 0:
            continue

        i = start
        j = end - 1
        while i <= j:
            if bins[rows[i], best_f] <= best_b:
                i += 1
            else:
                tmp = rows[i]
                rows[i] = rows[j]
                rows[j] = tmp
                j -= 1
        mid = i
        if mid == start or mid == end:
            continue

        feature[node] = best_f
        split_bin[node] = best_b
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes + 1
        st_start[top] = mid
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes
        st_start[top] = start
        st_end[top] = mid
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True, nogil=True)
def _leaf_binned(bins, r, feature, split_bin, left, right):
    node = 0
    while feature[node] >= 0:
        if bins[r, feature[node]] <= split_bin[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def predict_binned(bins, feature, split_bin, left, right, value, out, scale):
    """``out += scale * tree(bins)`` for every row."""
    for r in range(bins.shape[0]):
        out[r] += scale * value[_leaf_binned(bins, r, feature, split_bin, left, right)]


@njit(cache=True, nogil=True)
def predict_raw_sum(X, feature, threshold, left, right, value):
    """Sum of tree outputs over a stacked ensemble, on raw feature values."""
    n = X.shape[0]
    n_trees = feature.shape[0]
    out = np.zeros(n)
    for r in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feature[t, node] >= 0:
                if X[r, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[r] = acc
    return out


@njit(cache=True, nogil=True)
def fit_forest_kernel(bins, n_bins, y, seeds, max_depth, mtry, min_node_weight,
                      feature, split_bin, left, right, value, inbag):
    """Grow a bagged ensemble; returns per-row OOB sums and counts.

    ``inbag[t, i]`` receives the bootstrap multiplicity of row ``i`` in
    tree ``t``; pass a single-row ``inbag`` to use it as scratch space.
    """
    n = y.shape[0]
    n_trees = seeds.shape[0]
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n, dtype=np.int64)
    grad = np.empty(n)
    hess = np.empty(n)
    rng = np.zeros(1, dtype=np.uint64)
    for t in range(n_trees):
        ti = t if inbag.shape[0] > 1 else 0
        rng[0] = seeds[t]
        for i in range(n):
            inbag[ti, i] = 0
        for i in range(n):
            inbag[ti, _randint(rng, n)] += 1
        m = 0
        for i in range(n):
            if inbag[ti, i] > 0:
                m += 1
        rows = np.empty(m, dtype=np.int64)
        m = 0
        for i in range(n):
            w = inbag[ti, i]
            grad[i] = -y[i] * w
            hess[i] = w
            if w > 0:
                rows[m] = i
                m += 1
        grow_tree(bins, n_bins, grad, hess, rows, max_depth, min_node_weight,
                  mtry, 0.0, rng, feature[t], split_bin[t], left[t], right[t],
                  value[t])
        for i in range(n):
            if inbag[ti, i] == 0:
                leaf = _leaf_binned(bins, i, feature[t], split_bin[t], left[t], right[t])
                oob_sum[i] += value[t, leaf]
                oob_cnt[i] += 1
    return oob_sum, oob_cnt


def thresholds_from_bins(feature, split_bin, edges):
    thr = np.zeros(feature.shape)
    internal = feature >= 0
    thr[internal] = edges[feature[internal], split_bin[internal]]
    return thr
