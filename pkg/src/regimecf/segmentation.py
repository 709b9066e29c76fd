"""Bottom-up speed-profile segmentation with coherent-interval refinement.

A speed profile is split into atomic two-sample segments which are greedily
merged by a dual-criterion cost (slope gap minus a sign-agreement bonus)
until the segment count reaches floor(2*T). A refinement pass then merges
adjacent segments whose slopes differ by less than a tolerance, collapsing
noise-induced fragmentation into kinematically coherent intervals.

Segments share boundary samples: segment [i..j] covers samples i through j
inclusive and its successor starts at sample j, so the time intervals tile
the profile without gaps or overlapping interiors.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Segment:
    """Contiguous sample range with its least-squares slope fit."""

    start: int          # first sample index (inclusive)
    end: int            # last sample index (inclusive)
    t_start: float
    t_end: float
    theta: float        # OLS slope of v over t (m/s^2)
    residual: float     # sum of squared regression residuals
    short: bool = False  # profile too short for the minimum-length rule

    @property
    def duration(self):
        return self.t_end - self.t_start

    @property
    def n_samples(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class SegConfig:
    """Segmentation knobs; defaults follow the package-wide conventions."""

    lam: float = 0.1            # sign-alternation penalty weight
    epsilon_merge: float = 0.01  # slope-difference merge tolerance (m/s^2)
    l_min: float = 0.5          # minimum segment length (s)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.epsilon_merge <= 0:
            raise ConfigError("epsilon_merge must be > 0")
        if self.l_min <= 0:
            raise ConfigError("l_min must be > 0")


def fit_slope(t, v):
    """OLS slope and SSE of v against t over one segment's samples."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(t) < 2:
        return 0.0, 0.0
    tc = t - t.mean()
    denom = float(tc @ tc)
    if denom == 0.0:
        return 0.0, 0.0
    theta = float(tc @ (v - v.mean())) / denom
    pred = v.mean() + theta * tc
    resid = v - pred
    return theta, float(resid @ resid)


def _make_segment(t, v, start, end, short=False) -> Segment:
    theta, residual = fit_slope(t[start:end + 1], v[start:end + 1])
    return Segment(start, end, float(t[start]), float(t[end]), theta,
                   residual, short)


def merge_cost(left: Segment, right: Segment, cfg: SegConfig,
               t=None, v=None) -> float:
    """Dual-criterion merge cost of two adjacent segments.

    cost = |theta_left - theta_right| - lam * sgn(theta_left * theta_right),
    with slopes re-fit on the segments' points when the profile is given.
    Same-sign slope pairs get a merge bonus, alternating signs a penalty,
    and sgn(0) = 0 leaves exactly-flat neighbors unbiased.
    """
    if left.end != right.start:
        raise ConfigError("merge_cost requires adjacent segments")
    if t is not None:
        th_l, _ = fit_slope(t[left.start:left.end + 1],
                            v[left.start:left.end + 1])
        th_r, _ = fit_slope(t[right.start:right.end + 1],
                            v[right.start:right.end + 1])
    else:
        th_l, th_r = left.theta, right.theta
    product = th_l * th_r
    # dead zone so float dust on exactly-flat fits still counts as sgn(0)=0
    sign = 0.0 if abs(product) < 1e-24 else float(np.sign(product))
    return abs(th_l - th_r) - cfg.lam * sign


def n_max_segments(duration) -> int:
    """Termination bound floor(duration / l_min) with l_min = 0.5 s."""
    return max(1, int(np.floor(2.0 * duration + 1e-9)))


def segment_profile(t, v, cfg: SegConfig = SegConfig()):
    """Greedy bottom-up segmentation of one speed profile.

    Starts from atomic segments between consecutive samples and repeatedly
    merges the minimum-cost adjacent pair (ties break toward the earlier
    pair) until at most floor(2*T) segments remain; any segment still
    shorter than l_min is then absorbed into its cheaper neighbor. Profiles
    shorter than 2*l_min come back as a single segment flagged short.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    n = len(v)
    if n < 2:
        raise ConfigError("segment_profile needs at least 2 samples")
    duration = float(t[-1] - t[0])
    if duration < 2.0 * cfg.l_min - 1e-9:
        return [_make_segment(t, v, 0, n - 1, short=True)]

    # doubly linked segment list over boundary indices
    starts = list(range(n - 1))            # atomic segment k = [k, k+1]
    segs = {k: _make_segment(t, v, k, k + 1) for k in starts}
    prev = {starts[i]: (starts[i - 1] if i > 0 else None)
            for i in range(len(starts))}
    nxt = {starts[i]: (starts[i + 1] if i < len(starts) - 1 else None)
           for i in range(len(starts))}
    alive = set(starts)

    version = {k: 0 for k in starts}
    heap = []

    def push(k):
        nk = nxt[k]
        if nk is None:
            return
        cost = merge_cost(segs[k], segs[nk], cfg)
        heapq.heappush(heap, (cost, k, version[k], version[nk]))

    for k in starts:
        push(k)

    target = n_max_segments(duration)
    count = len(starts)
    while count > target and heap:
        cost, k, vk, vn = heapq.heappop(heap)
        nk = nxt.get(k)
        if k not in alive or nk is None:
            continue
        if version[k] != vk or version[nk] != vn:
            continue
        _merge_nodes(t, v, segs, prev, nxt, alive, version, k, nk)
        count -= 1
        if prev[k] is not None:
            push(prev[k])
        push(k)

    # enforce the minimum-length rule after count-based termination
    count = len(alive)
    while count > 1:
        order = sorted(alive)
        shortest = min(order, key=lambda k: (segs[k].duration, k))
        if segs[shortest].duration >= cfg.l_min - 1e-9:
            break
        left, right = prev[shortest], nxt[shortest]
        if left is None:
            into = shortest
        elif right is None:
            into = left
        else:
            c_left = merge_cost(segs[left], segs[shortest], cfg)
            c_right = merge_cost(segs[shortest], segs[right], cfg)
            into = left if c_left <= c_right else shortest
        _merge_nodes(t, v, segs, prev, nxt, alive, version, into, nxt[into])
        count -= 1

    return [segs[k] for k in sorted(alive)]


def _merge_nodes(t, v, segs, prev, nxt, alive, version, k, nk):
    merged = _make_segment(t, v, segs[k].start, segs[nk].end)
    segs[k] = merged
    after = nxt[nk]
    nxt[k] = after
    if after is not None:
        prev[after] = k
    alive.discard(nk)
    del segs[nk]
    version[k] += 1


def refine_segments(segs, cfg: SegConfig, t, v):
    """Merge adjacent segments with near-equal slopes until a fixed point.

    Scans left to right, merging the first pair with |theta_j - theta_k|
    below the tolerance and re-fitting the union, then resumes just before
    the merge; the result equals iterating the rule until no pair qualifies.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    out = list(segs)
    i = 0
    while i < len(out) - 1:
        if abs(out[i].theta - out[i + 1].theta) < cfg.epsilon_merge:
            merged = _make_segment(t, v, out[i].start, out[i + 1].end,
                                   short=out[i].short and out[i + 1].short)
            out[i:i + 2] = [merged]
            i = max(i - 1, 0)
        else:
            i += 1
    return out


def segment_and_refine(t, v, cfg: SegConfig = SegConfig()):
    """Full pipeline: greedy segmentation followed by coherence refinement."""
    return refine_segments(segment_profile(t, v, cfg), cfg, t, v)


def export_segments(path, segs, header_comment=None):
    """Write segments as CSV: t_start,t_end,theta,residual."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["t_start", "t_end", "theta", "residual"])
        for seg in segs:
            writer.writerow([repr(seg.t_start), repr(seg.t_end),
                             repr(seg.theta), repr(seg.residual)])
