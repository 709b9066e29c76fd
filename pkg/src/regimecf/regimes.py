"""Six-state driving-regime taxonomy and the slope-based segment classifier.

Car-following (CF) sections decompose into steady following (F),
acceleration (A), deceleration (D), and standstill (S); free-flow (FF)
sections into free acceleration (Fa) and cruising (C). Classification is a
total, deterministic function of the segment slope, its section label, and
the mean speed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .errors import InternalError
from .segmentation import Segment, fit_slope


class DrivingRegime(IntEnum):
    FOLLOW = 0        # F: steady-state following
    ACCEL = 1         # A: acceleration behind a leader
    DECEL = 2         # D: deceleration behind a leader
    STANDSTILL = 3    # S: stopped behind a leader
    FREE_ACCEL = 4    # Fa: acceleration without leader influence
    CRUISE = 5        # C: cruising at desired speed

    @property
    def letter(self):
        return _LETTERS[self]

    def one_hot(self):
        vec = np.zeros(len(DrivingRegime))
        vec[int(self)] = 1.0
        return vec


_LETTERS = {
    DrivingRegime.FOLLOW: "F",
    DrivingRegime.ACCEL: "A",
    DrivingRegime.DECEL: "D",
    DrivingRegime.STANDSTILL: "S",
    DrivingRegime.FREE_ACCEL: "Fa",
    DrivingRegime.CRUISE: "C",
}

N_REGIMES = len(DrivingRegime)

CF_REGIMES = frozenset({DrivingRegime.FOLLOW, DrivingRegime.ACCEL,
                        DrivingRegime.DECEL, DrivingRegime.STANDSTILL})
FF_REGIMES = frozenset({DrivingRegime.FREE_ACCEL, DrivingRegime.CRUISE})


class SectionLabel(Enum):
    CF = "CF"
    FF = "FF"


def one_hot_matrix(labels):
    """(T, 6) one-hot rows from an integer label array."""
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), N_REGIMES))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True)
class ClassifyConfig:
    slope_threshold: float = 0.5   # |slope| at or below -> steady state
    v_stop: float = 0.1            # mean speed below -> standstill
    min_duration: float = 3.0      # shorter segments merge into a neighbor


@dataclass(frozen=True)
class RegimeAssignment:
    segment: Segment
    section: SectionLabel
    regime: DrivingRegime
    flagged: bool  # FF segment with a deceleration slope, mapped to CRUISE


def classify_segment(seg: Segment, section: SectionLabel, v_mean,
                     cfg: ClassifyConfig = ClassifyConfig()) -> DrivingRegime:
    """Slope-based regime of one segment given its CF/FF section."""
    return classify_segment_detail(seg, section, v_mean, cfg).regime


def classify_segment_detail(seg: Segment, section: SectionLabel, v_mean,
                            cfg: ClassifyConfig = ClassifyConfig()
                            ) -> RegimeAssignment:
    theta = seg.theta
    flagged = False
    if abs(theta) <= cfg.slope_threshold:
        if section is SectionLabel.CF:
            regime = (DrivingRegime.STANDSTILL if v_mean < cfg.v_stop
                      else DrivingRegime.FOLLOW)
        else:
            regime = DrivingRegime.CRUISE
    elif theta > cfg.slope_threshold:
        regime = (DrivingRegime.ACCEL if section is SectionLabel.CF
                  else DrivingRegime.FREE_ACCEL)
    else:
        if section is SectionLabel.CF:
            regime = DrivingRegime.DECEL
        else:
            # the FF taxonomy has no deceleration state; keep totality
            regime = DrivingRegime.CRUISE
            flagged = True
    return RegimeAssignment(seg, section, regime, flagged)


def _merge_short_segments(t, v, segs, sections, cfg):
    """Absorb segments shorter than min_duration into the closer-slope neighbor.

    The absorbing neighbor keeps its section label; the merged slope is
    re-fit on the union so tiling and slope semantics are preserved.
    """
    segs = list(segs)
    sections = list(sections)
    while len(segs) > 1:
        durations = [s.duration for s in segs]
        k = int(np.argmin(durations))
        if durations[k] >= cfg.min_duration - 1e-9:
            break
        if k == 0:
            nb = 1
        elif k == len(segs) - 1:
            nb = k - 1
        else:
            d_left = abs(segs[k].theta - segs[k - 1].theta)
            d_right = abs(segs[k].theta - segs[k + 1].theta)
            nb = k - 1 if d_left <= d_right else k + 1
        lo, hi = min(k, nb), max(k, nb)
        start, end = segs[lo].start, segs[hi].end
        theta, residual = fit_slope(t[start:end + 1], v[start:end + 1])
        merged = Segment(start, end, float(t[start]), float(t[end]),
                         theta, residual)
        segs[lo:hi + 1] = [merged]
        sections[lo:hi + 1] = [sections[nb]]
    return segs, sections


def label_regimes(pair, segs, sections, cfg: ClassifyConfig = ClassifyConfig()):
    """Per-timestep regime labels for a pair's follower profile.

    segs must tile the follower profile; sections carries one CF/FF label
    per segment. Returns (labels, transitions, assignments) where labels is
    an int array over the profile, transitions lists (t, from, to) at label
    changes, and assignments records the per-segment classification.
    """
    t, v = pair.follower.t, pair.follower.v
    n = len(v)
    if len(segs) != len(sections):
        raise InternalError("one section label required per segment")
    if segs[0].start != 0 or segs[-1].end != n - 1:
        raise InternalError("segments do not tile the follower profile")
    for left, right in zip(segs, segs[1:]):
        if left.end != right.start:
            raise InternalError("segments do not tile the follower profile")

    segs, sections = _merge_short_segments(t, v, segs, sections, cfg)
    labels = np.empty(n, dtype=int)
    assignments = []
    for seg, section in zip(segs, sections):
        v_mean = float(np.mean(v[seg.start:seg.end + 1]))
        detail = classify_segment_detail(seg, section, v_mean, cfg)
        assignments.append(detail)
        end = seg.end if seg is segs[-1] else seg.end - 1
        labels[seg.start:end + 1] = int(detail.regime)
    labels[n - 1] = int(assignments[-1].regime)

    transitions = []
    for k in range(1, n):
        if labels[k] != labels[k - 1]:
            transitions.append((float(t[k]), DrivingRegime(labels[k - 1]),
                                DrivingRegime(labels[k])))
    return labels, transitions, assignments


def check_consistency(labels, section_per_step):
    """True iff no FF regime appears under CF and vice versa."""
    for lab, sec in zip(labels, section_per_step):
        regime = DrivingRegime(int(lab))
        if sec is SectionLabel.CF and regime in FF_REGIMES:
            return False
        if sec is SectionLabel.FF and regime in CF_REGIMES:
            return False
    return True


def export_labels(path, t, labels, section_per_step, header_comment=None):
    """Write per-timestep labels as CSV: t,regime_id,regime_name,section."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "regime_id", "regime_name", "section"])
        for ti, lab, sec in zip(t, labels, section_per_step):
            regime = DrivingRegime(int(lab))
            writer.writerow([repr(float(ti)), int(lab), regime.letter,
                             sec.value])
