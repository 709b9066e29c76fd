"""Independent reference implementations used to verify the package.

Everything here is deliberately naive (enumeration, exhaustive dynamic
programming, fixed-point iteration) and shares no code with the production
paths it checks.
"""

from functools import lru_cache

import numpy as np


# ----------------------------------------------------------------- DTW oracle

@lru_cache(maxsize=None)
def _monotone_paths(n, m):
    """All monotone warping paths over an n x m grid as index tuples."""
    paths = []

    def extend(i, j, acc):
        if i == n - 1 and j == m - 1:
            paths.append(tuple(acc))
            return
        if i + 1 < n and j + 1 < m:
            extend(i + 1, j + 1, acc + [(i + 1, j + 1)])
        if i + 1 < n:
            extend(i + 1, j, acc + [(i + 1, j)])
        if j + 1 < m:
            extend(i, j + 1, acc + [(i, j + 1)])

    extend(0, 0, [(0, 0)])
    return paths


@lru_cache(maxsize=None)
def _path_index_groups(n, m):
    """Paths grouped by length as flat-index arrays for vectorized scoring."""
    groups = {}
    for path in _monotone_paths(n, m):
        flat = tuple(i * m + j for i, j in path)
        groups.setdefault(len(flat), []).append(flat)
    return {L: np.array(v, dtype=int) for L, v in groups.items()}


def brute_force_dtw_cost(a, b) -> float:
    """Minimum path cost by enumerating every monotone path."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    best = np.inf
    for idx in _path_index_groups(len(a), len(b)).values():
        best = min(best, float(cost[idx].sum(axis=1).min()))
    return best


# -------------------------------------------------- optimal segmentation (DP)

def _sse_table(t, v):
    """SSE of the OLS fit for every sample range [i, j], O(n^2) total."""
    n = len(v)
    s_t = np.concatenate([[0.0], np.cumsum(t)])
    s_v = np.concatenate([[0.0], np.cumsum(v)])
    s_tt = np.concatenate([[0.0], np.cumsum(t * t)])
    s_vv = np.concatenate([[0.0], np.cumsum(v * v)])
    s_tv = np.concatenate([[0.0], np.cumsum(t * v)])
    sse = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            cnt = j - i + 1
            st = s_t[j + 1] - s_t[i]
            sv = s_v[j + 1] - s_v[i]
            stt = s_tt[j + 1] - s_tt[i]
            svv = s_vv[j + 1] - s_vv[i]
            stv = s_tv[j + 1] - s_tv[i]
            ctt = stt - st * st / cnt
            cvv = svv - sv * sv / cnt
            ctv = stv - st * sv / cnt
            sse[i, j] = cvv - (ctv * ctv / ctt if ctt > 1e-12 else 0.0)
    return sse


def dp_optimal_segmentation(t, v, k):
    """Minimum total SSE split into exactly k endpoint-sharing segments.

    Returns (breakpoint sample indices excluding 0 and n-1, total SSE).
    Segment m covers samples [b_{m-1}, b_m] inclusive, so adjacent segments
    share their boundary sample, matching the production convention.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    n = len(v)
    sse = _sse_table(t, v)
    NEG = -1
    best = np.full((k + 1, n), np.inf)
    back = np.full((k + 1, n), NEG, dtype=int)
    best[1, 1:] = sse[0, 1:]
    for seg in range(2, k + 1):
        for j in range(seg, n):
            # previous boundary i: segment seg covers [i, j]
            cands = best[seg - 1, seg - 1:j] + sse[seg - 1:j, j]
            pick = int(np.argmin(cands))
            best[seg, j] = cands[pick]
            back[seg, j] = pick + seg - 1
    bounds = []
    j = n - 1
    for seg in range(k, 1, -1):
        j = int(back[seg, j])
        bounds.append(j)
    bounds.reverse()
    return bounds, float(best[k, n - 1])


# -------------------------------------------------- refinement fixed point

def refine_fixed_point(thetas, starts_ends, eps, t, v):
    """Naive restart-from-zero fixed-point merge of near-equal slopes.

    Operates on (start, end) sample ranges; slopes are re-fit on unions
    with plain polyfit. Returns the final list of (start, end)."""
    ranges = list(starts_ends)

    def slope(r):
        ts = t[r[0]:r[1] + 1]
        vs = v[r[0]:r[1] + 1]
        return np.polyfit(ts, vs, 1)[0]

    while True:
        merged = False
        for i in range(len(ranges) - 1):
            if abs(slope(ranges[i]) - slope(ranges[i + 1])) < eps:
                ranges[i:i + 2] = [(ranges[i][0], ranges[i + 1][1])]
                merged = True
                break
        if not merged:
            return ranges


# -------------------------------------------------- misc scan oracles

def positive_spacing_runs(spacing, min_len):
    """Maximal runs of strictly positive spacing, as (start, end) inclusive."""
    runs = []
    k = 0
    n = len(spacing)
    while k < n:
        if spacing[k] <= 0:
            k += 1
            continue
        k2 = k
        while k2 < n and spacing[k2] > 0:
            k2 += 1
        if k2 - k >= min_len:
            runs.append((k, k2 - 1))
        k = k2
    return runs


def closed_loop_score(xs, ys):
    """Hysteresis check: (start-end distance, max deviation), both relative
    to the trace's bounding-box diagonal."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    scale = float(np.hypot(np.ptp(xs), np.ptp(ys)))
    start = np.array([xs[0], ys[0]])
    end = np.array([xs[-1], ys[-1]])
    closure = float(np.linalg.norm(end - start)) / scale
    dev = float(np.max(np.hypot(xs - start[0], ys - start[1]))) / scale
    return closure, dev
