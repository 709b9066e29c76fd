"""Dynamic time warping of leader-follower sequences and the CF/FF split.

Alignment uses absolute-difference local cost with the classic three-step
pattern (match, insertion, deletion), solved exactly by dynamic programming
over anti-diagonals so long sequences stay fast without compiled extensions.
From the speed-alignment path we read off, per matched index pair, the time
displacement tau (follower time minus leader time) and space displacement d
(leader position at its instant minus follower position at its instant);
their distribution drives the percentile-based car-following/free-flow split.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .regimes import SectionLabel
from .trajectory import DT


@dataclass(frozen=True)
class WarpPath:
    """Monotone alignment path; pairs is an (M, 2) int array of (i, j)."""

    pairs: np.ndarray
    total_cost: float

    def __post_init__(self):
        self.pairs.setflags(write=False)

    def __len__(self):
        return len(self.pairs)


def dtw_align(seq_a, seq_b, band=None) -> WarpPath:
    """Globally optimal monotone alignment under |a_i - b_j| local cost.

    band, when given, restricts the path to |i * m/n - j| <= band
    (half-width in samples of seq_b); the default explores the full plane.
    Ties prefer the diagonal step, then the step consuming seq_a.
    """
    a = np.asarray(seq_a, dtype=float).ravel()
    b = np.asarray(seq_b, dtype=float).ravel()
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("dtw_align requires non-empty sequences")
    cost = np.abs(a[:, None] - b[None, :])
    if band is not None:
        ii = np.arange(n)[:, None]
        jj = np.arange(m)[None, :]
        cost = np.where(np.abs(ii * (m / n) - jj) <= band, cost, np.inf)

    acc = np.full((n, m), np.inf)
    choice = np.full((n, m), 3, dtype=np.int8)  # 0 diag, 1 up, 2 left, 3 start
    acc[0, 0] = cost[0, 0]
    if m > 1:
        acc[0, 1:] = cost[0, 0] + np.cumsum(cost[0, 1:])
        choice[0, 1:] = 2
    if n > 1:
        acc[1:, 0] = cost[0, 0] + np.cumsum(cost[1:, 0])
        choice[1:, 0] = 1
    # sweep anti-diagonals; every predecessor lies on an earlier diagonal
    for d in range(2, n + m - 1):
        i_lo = max(1, d - m + 1)
        i_hi = min(n - 1, d - 1)
        if i_lo > i_hi:
            continue
        i = np.arange(i_lo, i_hi + 1)
        j = d - i
        cands = np.stack([acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]])
        best = np.argmin(cands, axis=0)  # first minimum: diag > up > left
        acc[i, j] = cost[i, j] + cands[best, np.arange(len(i))]
        choice[i, j] = best

    path = []
    i, j = n - 1, m - 1
    while True:
        path.append((i, j))
        c = choice[i, j]
        if c == 3:
            break
        if c == 0:
            i, j = i - 1, j - 1
        elif c == 1:
            i -= 1
        else:
            j -= 1
    path.reverse()
    pairs = np.array(path, dtype=int)
    return WarpPath(pairs, float(acc[n - 1, m - 1]))


@dataclass
class NewellParams:
    """Per-matched-pair displacement series extracted from a warping path."""

    leader_idx: np.ndarray
    follower_idx: np.ndarray
    tau: np.ndarray            # follower time - leader time (s)
    d: np.ndarray              # leader position - follower position (m)
    tau_median: float
    d_median: float
    tau_x_median: float        # cross-check from the position alignment
    low_confidence: bool       # near-constant speeds: alignment non-unique

    def segment_tau(self, start, end) -> float:
        """Median tau of matches whose follower index lies in [start, end]."""
        mask = (self.follower_idx >= start) & (self.follower_idx <= end)
        if not mask.any():
            return float("nan")
        return float(np.median(self.tau[mask]))


def extract_newell_params(pair, band=None) -> NewellParams:
    """Align the pair's speed series and read off tau/d per matched pair.

    The speed alignment is primary; the position alignment is run as a
    cross-check and only its median time displacement is kept. A pair whose
    speed barely varies is flagged low-confidence because many paths then
    tie and the displacement series carries little information.
    """
    if pair.duration < 3.0 - 1e-9:
        raise DataError("pair overlap shorter than 3 s")
    path_v = dtw_align(pair.leader.v, pair.follower.v, band=band)
    i = path_v.pairs[:, 0]
    j = path_v.pairs[:, 1]
    tau = (j - i) * DT
    d = pair.leader.x[i] - pair.follower.x[j]
    path_x = dtw_align(pair.leader.x, pair.follower.x, band=band)
    tau_x = (path_x.pairs[:, 1] - path_x.pairs[:, 0]) * DT
    low_conf = (np.ptp(pair.leader.v) < 0.1) or (np.ptp(pair.follower.v) < 0.1)
    return NewellParams(
        leader_idx=i, follower_idx=j, tau=tau, d=d,
        tau_median=float(np.median(tau)), d_median=float(np.median(d)),
        tau_x_median=float(np.median(tau_x)), low_confidence=low_conf)


def split_cf_ff(tau_samples, percentile=85.0):
    """Label analysis units CF/FF by a percentile threshold on tau.

    Units at or below the linearly interpolated percentile are CF, the rest
    FF. Returns (labels, threshold). Degenerate inputs (few or all-equal
    samples) still split exhaustively but emit a warning.
    """
    tau = np.asarray(tau_samples, dtype=float)
    if tau.size == 0:
        raise DataError("split_cf_ff needs at least one sample")
    if tau.size < 20:
        warnings.warn(
            f"only {tau.size} tau samples; percentile threshold is unstable",
            stacklevel=2)
    threshold = float(np.percentile(tau, percentile))
    if np.all(tau == tau[0]):
        warnings.warn("degenerate tau distribution: all units labeled CF",
                      stacklevel=2)
    labels = [SectionLabel.CF if x <= threshold else SectionLabel.FF
              for x in tau]
    return labels, threshold


def export_alignment(path, pair, params: NewellParams, header_comment=None):
    """Dump matched pairs as CSV: i,j,t_leader,t_follower,tau,d."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "t_leader", "t_follower", "tau", "d"])
        for i, j, tau, d in zip(params.leader_idx, params.follower_idx,
                                params.tau, params.d):
            writer.writerow([int(i), int(j), repr(float(pair.leader.t[i])),
                             repr(float(pair.follower.t[j])),
                             repr(float(tau)), repr(float(d))])
