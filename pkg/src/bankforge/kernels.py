"""Inner loops: polytope point search, per-cycle bank collision scan, GBT split search.

Every kernel has an ``_nb`` variant (numba) and a ``_np`` variant (vectorised
numpy).  The public wrappers dispatch on :data:`bankforge._accel.USE_NUMBA`.
Both variants must return identical results; ``tests/test_kernels.py`` checks
this and ``benchmarks/bench_kernels.py`` times them.
"""
import numpy as np

from bankforge import _accel
from bankforge._accel import njit

# --------------------------------------------------------------------------
# Polytope point search
#
# Variables t_i range over [lo_i, lo_i + size_i).  Constraint j holds when
#     floor(e1_j / div_j) - floor(e2_j / div_j) == 0  (mod mod_j)
# with e1_j = coef1[j] . t + const1[j] (same for e2), and mod_j == 0 meaning
# plain equality.
# --------------------------------------------------------------------------


@njit
def _find_point_nb(lo, size, coef1, const1, coef2, const2, div, mod):
    nvar = lo.shape[0]
    ncon = div.shape[0]
    e1 = np.empty(ncon, dtype=np.int64)
    e2 = np.empty(ncon, dtype=np.int64)
    t = lo.copy()
    for j in range(ncon):
        a = const1[j]
        b = const2[j]
        for i in range(nvar):
            a += coef1[j, i] * t[i]
            b += coef2[j, i] * t[i]
        e1[j] = a
        e2[j] = b
    count = 0
    while True:
        ok = True
        for j in range(ncon):
            d = e1[j] // div[j] - e2[j] // div[j]
            m = mod[j]
            if m == 0:
                if d != 0:
                    ok = False
                    break
            elif d % m != 0:
                ok = False
                break
        if ok:
            return count
        count += 1
        # odometer step, last variable fastest
        i = nvar - 1
        while i >= 0:
            if t[i] + 1 < lo[i] + size[i]:
                t[i] += 1
                for j in range(ncon):
                    e1[j] += coef1[j, i]
                    e2[j] += coef2[j, i]
                break
            back = size[i] - 1
            t[i] = lo[i]
            for j in range(ncon):
                e1[j] -= coef1[j, i] * back
                e2[j] -= coef2[j, i] * back
            i -= 1
        if i < 0:
            return -1


def _find_point_np(lo, size, coef1, const1, coef2, const2, div, mod, chunk=1 << 18):
    total = int(np.prod(size)) if size.size else 1
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk), dtype=np.int64)
        if size.size:
            pts = np.stack(np.unravel_index(flat, tuple(size)), axis=1) + lo
        else:
            pts = np.zeros((flat.size, 0), dtype=np.int64)
        e1 = pts @ coef1.T + const1
        e2 = pts @ coef2.T + const2
        d = e1 // div - e2 // div
        safe = np.where(mod == 0, 1, mod)
        ok = np.where(mod == 0, d == 0, d % safe == 0).all(axis=1)
        hit = np.flatnonzero(ok)
        if hit.size:
            return int(flat[hit[0]])
    return -1


def find_point(lo, size, coef1, const1, coef2, const2, div, mod):
    """Index (row-major over the variable box) of the first feasible point, or -1."""
    args = (
        np.ascontiguousarray(lo, dtype=np.int64),
        np.ascontiguousarray(size, dtype=np.int64),
        np.ascontiguousarray(coef1, dtype=np.int64).reshape(len(div), len(lo)),
        np.ascontiguousarray(const1, dtype=np.int64),
        np.ascontiguousarray(coef2, dtype=np.int64).reshape(len(div), len(lo)),
        np.ascontiguousarray(const2, dtype=np.int64),
        np.ascontiguousarray(div, dtype=np.int64),
        np.ascontiguousarray(mod, dtype=np.int64),
    )
    if (args[1] <= 0).any():
        return -1
    if _accel.USE_NUMBA:
        return int(_find_point_nb(*args))
    return _find_point_np(*args)


# --------------------------------------------------------------------------
# Bank collision scan
#
# banks: (n_access, n_points) int64; inactive accesses carry a unique negative
# id.  A point violates when some bank id is hit by more than ``k`` accesses.
# --------------------------------------------------------------------------


@njit
def _first_collision_nb(banks, k):
    n, m = banks.shape
    col = np.empty(n, dtype=np.int64)
    if n <= 24:
        # small groups: count equal ids directly, no sort
        for p in range(m):
            for a in range(n):
                col[a] = banks[a, p]
            for a in range(n - k):
                if col[a] < 0:
                    continue
                hits = 1
                for b in range(a + 1, n):
                    if col[b] == col[a]:
                        hits += 1
                if hits > k:
                    return p
        return -1
    for p in range(m):
        for a in range(n):
            col[a] = banks[a, p]
        col.sort()
        run = 1
        for a in range(1, n):
            if col[a] == col[a - 1] and col[a] >= 0:
                run += 1
                if run > k:
                    return p
            else:
                run = 1
    return -1


def _first_collision_np(banks, k):
    n = banks.shape[0]
    if n <= k:
        return -1
    s = np.sort(banks, axis=0)
    bad = (s[k:] == s[:-k]) & (s[k:] >= 0)
    hit = np.flatnonzero(bad.any(axis=0))
    return int(hit[0]) if hit.size else -1


def first_collision(banks, k):
    banks = np.ascontiguousarray(banks, dtype=np.int64)
    if banks.shape[0] <= k or banks.shape[1] == 0:
        return -1
    if _accel.USE_NUMBA:
        return int(_first_collision_nb(banks, int(k)))
    return _first_collision_np(banks, int(k))


# --------------------------------------------------------------------------
# Exact greedy split search for one tree level
#
# order: (d, n) row indices sorted by feature value, computed once per fit;
# vals: (d, n) the matching sorted feature values.
# node_of: (n,) node slot of every row at this level, -1 if not in the sample
# or in a node that is not being split.
# Returns per-slot (gain, feature, threshold); gain -inf when no split.
# --------------------------------------------------------------------------


@njit
def _best_splits_nb(vals, order, grad, hess, node_of, n_slots, lam, gamma, min_split):
    d, n = order.shape
    G = np.zeros(n_slots)
    H = np.zeros(n_slots)
    cnt = np.zeros(n_slots, dtype=np.int64)
    for r in range(n):
        s = node_of[r]
        if s >= 0:
            G[s] += grad[r]
            H[s] += hess[r]
            cnt[s] += 1
    parent = np.empty(n_slots)
    for s in range(n_slots):
        parent[s] = G[s] * G[s] / (H[s] + lam)
    best_gain = np.full(n_slots, -np.inf)
    best_feat = np.full(n_slots, -1, dtype=np.int64)
    best_thr = np.zeros(n_slots)
    gl = np.zeros(n_slots)
    hl = np.zeros(n_slots)
    last = np.zeros(n_slots)
    seen = np.zeros(n_slots, dtype=np.int64)
    for f in range(d):
        gl[:] = 0.0
        hl[:] = 0.0
        seen[:] = 0
        for q in range(n):
            r = order[f, q]
            s = node_of[r]
            if s < 0:
                continue
            v = vals[f, q]
            if seen[s] > 0 and v > last[s] and cnt[s] >= min_split:
                gr = G[s] - gl[s]
                hr = H[s] - hl[s]
                gain = 0.5 * (gl[s] * gl[s] / (hl[s] + lam) + gr * gr / (hr + lam) - parent[s]) - gamma
                if gain > best_gain[s]:
                    best_gain[s] = gain
                    best_feat[s] = f
                    best_thr[s] = 0.5 * (last[s] + v)
            gl[s] += grad[r]
            hl[s] += hess[r]
            last[s] = v
            seen[s] += 1
    return best_gain, best_feat, best_thr


def _best_splits_np(vals, order, grad, hess, node_of, n_slots, lam, gamma, min_split):
    best_gain = np.full(n_slots, -np.inf)
    best_feat = np.full(n_slots, -1, dtype=np.int64)
    best_thr = np.zeros(n_slots)
    for s in range(n_slots):
        member = node_of == s
        cnt = int(member.sum())
        if cnt < max(min_split, 2):
            continue
        # sequential sums, same association order as the loop kernel
        G = np.cumsum(grad[member])[-1]
        H = np.cumsum(hess[member])[-1]
        # keep only this node's rows, in per-feature sorted order
        keep = member[order]  # (d, n)
        rows = order[keep].reshape(order.shape[0], cnt)
        v = vals[keep].reshape(order.shape[0], cnt)
        gl = np.cumsum(grad[rows], axis=1)[:, :-1]
        hl = np.cumsum(hess[rows], axis=1)[:, :-1]
        valid = v[:, 1:] > v[:, :-1]
        gr = G - gl
        hr = H - hl
        parent = G * G / (H + lam)
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
        gain = np.where(valid, gain, -np.inf)
        # first maximum in (feature, position) order, matching the loop kernel
        flat = int(np.argmax(gain))
        f, q = divmod(flat, gain.shape[1])
        if np.isfinite(gain[f, q]):
            best_gain[s] = gain[f, q]
            best_feat[s] = f
            best_thr[s] = 0.5 * (v[f, q] + v[f, q + 1])
    return best_gain, best_feat, best_thr


def best_splits(vals, order, grad, hess, node_of, n_slots, lam, gamma, min_split):
    """Best split per frontier slot.

    ``vals[f, q]`` is the value of feature f at row ``order[f, q]`` (rows
    sorted by that feature).
    """
    args = (
        np.ascontiguousarray(vals, dtype=np.float64),
        np.ascontiguousarray(order, dtype=np.int64),
        np.ascontiguousarray(grad, dtype=np.float64),
        np.ascontiguousarray(hess, dtype=np.float64),
        np.ascontiguousarray(node_of, dtype=np.int64),
        int(n_slots),
        float(lam),
        float(gamma),
        int(max(min_split, 2)),
    )
    if _accel.USE_NUMBA:
        return _best_splits_nb(*args)
    return _best_splits_np(*args)
