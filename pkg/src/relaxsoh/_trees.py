"""Depth-limited regression trees for stagewise boosting.

The hot operation is the exhaustive split scan: for each feature, samples are
ordered and every boundary between distinct values is scored by the exact
squared-error reduction, computable from prefix sums. Thresholds sit at
midpoints; ties resolve to the first (lowest feature index, then lowest
position) strictly better score, identically in both implementations.

Trees are flat int/float arrays (feature, threshold, left, right, value);
feature -1 marks a leaf.
"""

import numpy as np

from ._accel import USE_NUMBA, maybe_njit


def _best_split_loops(xn, rn, min_leaf):
    m = xn.shape[0]
    d = xn.shape[1]
    total = 0.0
    for a in range(m):
        total += rn[a]
    best_score = np.inf
    best_feat = -1
    best_thr = 0.0
    for f in range(d):
        order = np.argsort(xn[:, f])
        csum = 0.0
        for pos in range(m - 1):
            csum += rn[order[pos]]
            nl = pos + 1
            nr = m - nl
            if nr < min_leaf:
                break
            if nl < min_leaf:
                continue
            xl = xn[order[pos], f]
            xr = xn[order[pos + 1], f]
            if xr <= xl:
                continue
            rsum = total - csum
            score = -(csum * csum) / nl - (rsum * rsum) / nr
            if score < best_score:
                best_score = score
                best_feat = f
                best_thr = 0.5 * (xl + xr)
    return best_feat, best_thr, best_score, total


def _best_split_numpy(xn, rn, min_leaf):
    m, d = xn.shape
    total = float(rn.sum())
    best_score = np.inf
    best_feat = -1
    best_thr = 0.0
    nl = np.arange(1, m)
    nr = m - nl
    for f in range(d):
        order = np.argsort(xn[:, f])
        xs = xn[order, f]
        csum = np.cumsum(rn[order])[:-1]
        valid = (nl >= min_leaf) & (nr >= min_leaf) & (xs[1:] > xs[:-1])
        if not valid.any():
            continue
        rsum = total - csum
        score = np.where(valid, -(csum * csum) / nl - (rsum * rsum) / nr, np.inf)
        pos = int(np.argmin(score))
        if score[pos] < best_score:
            best_score = float(score[pos])
            best_feat = f
            best_thr = 0.5 * float(xs[pos] + xs[pos + 1])
    return best_feat, best_thr, best_score, total


def _tree_predict_loops(feat, thr, left, right, value, x):
    n = x.shape[0]
    out = np.empty(n)
    for a in range(n):
        node = 0
        while feat[node] >= 0:
            if x[a, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[a] = value[node]
    return out


def _tree_predict_numpy(feat, thr, left, right, value, x):
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feat[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        cur = node[idx]
        go_left = x[idx, feat[cur]] <= thr[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active[idx] = feat[node[idx]] >= 0
    return value[node]


_best_split_jit = maybe_njit(cache=True, nogil=True)(_best_split_loops)
_tree_predict_jit = maybe_njit(cache=True, nogil=True)(_tree_predict_loops)

best_split = _best_split_jit if USE_NUMBA else _best_split_numpy
tree_predict = _tree_predict_jit if USE_NUMBA else _tree_predict_numpy


def build_tree(x, residuals, max_depth, min_leaf):
    """Greedy depth-limited least-squares tree on the residuals.

    Returns flat arrays (feature, threshold, left, right, value). A node
    becomes a leaf when depth or sample count runs out, no boundary between
    distinct values is feasible, or no split strictly reduces the SSE.
    """
    x = np.ascontiguousarray(x, dtype=float)
    residuals = np.ascontiguousarray(residuals, dtype=float)
    feat, thr, left, right, value = [], [], [], [], []

    def new_node():
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feat) - 1

    root = new_node()
    stack = [(root, np.arange(len(residuals)), 0)]
    while stack:
        nid, idx, depth = stack.pop()
        rn = residuals[idx]
        value[nid] = float(rn.mean())
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            continue
        xn = np.ascontiguousarray(x[idx])
        f, t, score, total = best_split(xn, np.ascontiguousarray(rn), min_leaf)
        if f < 0:
            continue
        node_obj = -(total * total) / len(idx)
        if not score < node_obj - 1e-15 * (1.0 + abs(node_obj)):
            continue
        go_left = xn[:, f] <= t
        feat[nid] = int(f)
        thr[nid] = float(t)
        lid = new_node()
        rid = new_node()
        left[nid] = lid
        right[nid] = rid
        stack.append((lid, idx[go_left], depth + 1))
        stack.append((rid, idx[~go_left], depth + 1))

    return (np.asarray(feat, dtype=np.int64), np.asarray(thr, dtype=float),
            np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=float))
