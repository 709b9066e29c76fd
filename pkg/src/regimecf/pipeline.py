"""End-to-end regime labeling and dataset assembly for the predictors.

Labeling composes the upstream stages: segment each follower speed profile,
extract per-segment time displacements from the speed alignment, split
segments CF/FF at the global percentile threshold, and classify submodes.

A "frame" at timestep t stacks (spacing, relative speed, follower speed,
regime); the regime predictor consumes windows of N frames ending at t - 1
to predict the regime at t, and the kinematic predictor consumes windows
ending at t (whose last frame carries the freshly decided regime) to
predict the acceleration applied over [t, t + dt).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import extract_newell_params, split_cf_ff
from .errors import DataError
from .nn.layers import WINDOW
from .nn.tensor import no_grad
from .regimes import (
    ClassifyConfig,
    SectionLabel,
    label_regimes,
    one_hot_matrix,
)
from .segmentation import SegConfig, segment_and_refine


@dataclass
class LabeledPair:
    """A pair plus everything the labeling pipeline derived for it."""

    pair: object
    segments: list
    sections: list
    labels: np.ndarray          # per-timestep regime ids
    transitions: list
    assignments: list

    @property
    def section_per_step(self):
        out = [None] * len(self.labels)
        for seg, sec in zip(self.segments, self.sections):
            for k in range(seg.start, seg.end + 1):
                out[k] = sec
        return out


def label_dataset(pairs, seg_cfg: SegConfig = SegConfig(),
                  classify_cfg: ClassifyConfig = ClassifyConfig(),
                  percentile=85.0, band=None):
    """Unsupervised regime labeling over a pair corpus.

    The CF/FF threshold is the given percentile of the per-segment median
    time displacements pooled globally over the corpus. Returns
    (labeled_pairs, threshold).
    """
    if not pairs:
        raise DataError("label_dataset needs at least one pair")
    per_pair = []
    taus = []
    for pair in pairs:
        segs = segment_and_refine(pair.follower.t, pair.follower.v, seg_cfg)
        newell = extract_newell_params(pair, band=band)
        seg_taus = [newell.segment_tau(s.start, s.end) for s in segs]
        per_pair.append((pair, segs, seg_taus))
        taus.extend(seg_taus)
    section_labels, threshold = split_cf_ff(np.array(taus), percentile)
    cursor = 0
    labeled = []
    for pair, segs, seg_taus in per_pair:
        sections = section_labels[cursor:cursor + len(segs)]
        cursor += len(segs)
        labels, transitions, assignments = label_regimes(
            pair, segs, sections, classify_cfg)
        labeled.append(LabeledPair(pair, segs, sections, labels,
                                   transitions, assignments))
    return labeled, threshold


def label_dataset_known_sections(pairs, seg_cfg: SegConfig = SegConfig(),
                                 classify_cfg: ClassifyConfig = ClassifyConfig(),
                                 section: SectionLabel = SectionLabel.CF):
    """Labeling with a known section per pair (synthetic CF corpora)."""
    labeled = []
    for pair in pairs:
        segs = segment_and_refine(pair.follower.t, pair.follower.v, seg_cfg)
        sections = [section] * len(segs)
        labels, transitions, assignments = label_regimes(
            pair, segs, sections, classify_cfg)
        labeled.append(LabeledPair(pair, segs, sections, labels,
                                   transitions, assignments))
    return labeled


@dataclass
class PairFrames:
    """Per-timestep model features of one pair (arrays of length T)."""

    t: np.ndarray
    dd: np.ndarray
    dv: np.ndarray
    v: np.ndarray
    a: np.ndarray               # realized accel over [t, t+dt)
    dr: np.ndarray              # regime label per timestep
    leader_x: np.ndarray
    leader_v: np.ndarray
    x: np.ndarray
    pair: object = None

    def __len__(self):
        return len(self.t)

    def kin_matrix(self):
        return np.stack([self.dd, self.dv, self.v], axis=1)

    def gru_matrix(self):
        return np.concatenate([self.kin_matrix(), one_hot_matrix(self.dr)],
                              axis=1)


def pair_frames(labeled: LabeledPair, dr_override=None) -> PairFrames:
    """Assemble model-facing feature arrays from a labeled pair."""
    pair = labeled.pair
    dr = labeled.labels if dr_override is None else np.asarray(dr_override)
    if len(dr) != len(pair):
        raise DataError("regime series length must match the pair")
    return PairFrames(
        t=pair.t, dd=pair.spacing, dv=pair.rel_speed, v=pair.follower.v,
        a=pair.follower.a, dr=np.asarray(dr, dtype=int),
        leader_x=pair.leader.x, leader_v=pair.leader.v, x=pair.follower.x,
        pair=pair)


def gru_windows(frames: PairFrames, window=WINDOW):
    """Teacher-forced classification windows: (X (M, N, 9), y (M,), t_idx)."""
    T = len(frames)
    if T <= window:
        return (np.empty((0, window, 9)), np.empty(0, dtype=int),
                np.empty(0, dtype=int))
    g = frames.gru_matrix()
    t_idx = np.arange(window, T)
    X = np.stack([g[t - window:t] for t in t_idx])
    y = frames.dr[t_idx]
    return X, y, t_idx


def kinematic_windows(frames: PairFrames, dr_series, window=WINDOW):
    """Single-step regression windows ending at t, target a[t].

    dr_series supplies the per-frame regime fed to the embedding (labels or
    teacher-forced model predictions). Targets stop at T - 2 because a[t]
    is realized over [t, t + dt). Returns (kin (M, N, 3), dr (M, N),
    target (M,), t_idx).
    """
    T = len(frames)
    dr_series = np.asarray(dr_series, dtype=int)
    if len(dr_series) != T:
        raise DataError("dr_series length must match the pair")
    if T - 1 <= window:
        return (np.empty((0, window, 3)), np.empty((0, window), dtype=int),
                np.empty(0), np.empty(0, dtype=int))
    k = frames.kin_matrix()
    t_idx = np.arange(window, T - 1)
    kin = np.stack([k[t - window + 1:t + 1] for t in t_idx])
    dr = np.stack([dr_series[t - window + 1:t + 1] for t in t_idx])
    target = frames.a[t_idx]
    return kin, dr, target, t_idx


def teacher_forced_regimes(regime_net, frames: PairFrames, window=WINDOW):
    """Model regime series: labels through the warm-up, then GRU argmax.

    Predictions are teacher-forced (each window carries label regimes), so
    the series is fixed once the GRU is trained and can be precomputed.
    """
    T = len(frames)
    out = frames.dr.copy()
    if T <= window:
        return out
    X, _, t_idx = gru_windows(frames, window)
    with no_grad():
        probs = regime_net.forward_window(X)
    out[t_idx] = np.argmax(probs.data, axis=1)
    return out
