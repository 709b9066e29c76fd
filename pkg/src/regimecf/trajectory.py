"""Trajectory containers, NGSIM-style CSV I/O, and leader-follower pairing.

All quantities are SI (m, m/s, m/s^2) internally; unit conversion happens
once at ingestion. The time grid is fixed at DT = 0.1 s; inputs sampled at
other rates are linearly resampled onto that grid.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError, SchemaError

DT = 0.1
KINEMATIC_TOL = 0.05  # extra slack (m) on the x-v consistency check
NO_LEADER = -1

CSV_COLUMNS = (
    "vehicle_id",
    "frame",
    "time_s",
    "pos_m",
    "speed_mps",
    "accel_mps2",
    "lane",
    "leader_id",
)

# unit multipliers to SI, keyed by format descriptor
_UNIT_SCALES = {
    "si": (1.0, 1.0, 1.0),
    "imperial": (0.3048, 0.3048, 0.3048),  # ft, ft/s, ft/s^2
}


@dataclass(frozen=True)
class TrajectoryPoint:
    """One 10 Hz sample of a vehicle's longitudinal state."""

    t: float
    x: float
    v: float
    a: float
    lane: int
    leader_id: int | None


class Trajectory:
    """Time-indexed kinematic record of one vehicle on the DT grid.

    Arrays are read-only after construction; operations on trajectories are
    pure, so concurrent use on disjoint inputs is safe.
    """

    def __init__(self, vehicle_id, t, x, v, a, lane=None, leader_id=None,
                 validate=True):
        self.vehicle_id = int(vehicle_id)
        self.t = np.asarray(t, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.a = np.asarray(a, dtype=float)
        n = len(self.t)
        self.lane = (np.zeros(n, dtype=int) if lane is None
                     else np.asarray(lane, dtype=int))
        self.leader_id = (np.full(n, NO_LEADER, dtype=int) if leader_id is None
                          else np.asarray(leader_id, dtype=int))
        for arr in (self.t, self.x, self.v, self.a, self.lane, self.leader_id):
            if len(arr) != n:
                raise DataError(
                    f"vehicle {vehicle_id}: field arrays have mismatched lengths")
            arr.setflags(write=False)
        if validate:
            self.validate()

    def __len__(self):
        return len(self.t)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def point(self, i) -> TrajectoryPoint:
        lid = int(self.leader_id[i])
        return TrajectoryPoint(
            t=float(self.t[i]), x=float(self.x[i]), v=float(self.v[i]),
            a=float(self.a[i]), lane=int(self.lane[i]),
            leader_id=None if lid == NO_LEADER else lid)

    def index_at(self, t) -> int:
        """Grid index of time t; raises if t is off-grid or out of range."""
        k = (t - self.t[0]) / DT
        ki = int(round(k))
        if abs(k - ki) > 1e-6 or not 0 <= ki < len(self):
            raise DataError(
                f"vehicle {self.vehicle_id}: time {t} not on trajectory grid")
        return ki

    def slice(self, i0, i1) -> "Trajectory":
        """Sub-trajectory over sample indices [i0, i1)."""
        return Trajectory(
            self.vehicle_id, self.t[i0:i1], self.x[i0:i1], self.v[i0:i1],
            self.a[i0:i1], self.lane[i0:i1], self.leader_id[i0:i1],
            validate=False)

    def validate(self):
        """Check grid spacing, non-negative speed, and kinematic consistency."""
        vid = self.vehicle_id
        if len(self) == 0:
            raise DataError(f"vehicle {vid}: empty trajectory")
        if len(self) > 1:
            gaps = np.diff(self.t)
            if np.any(gaps <= 0):
                raise DataError(f"vehicle {vid}: non-monotone time")
            if np.any(np.abs(gaps - DT) > 1e-6):
                raise DataError(
                    f"vehicle {vid}: samples not spaced {DT} s apart")
        if np.any(self.v < -1e-9):
            raise DataError(f"vehicle {vid}: negative speed")
        if len(self) > 1:
            a_max = max(float(np.max(np.abs(self.a))), 1e-12)
            resid = np.abs(self.x[1:] - self.x[:-1] - self.v[:-1] * DT)
            bound = 0.5 * a_max * DT * DT + KINEMATIC_TOL
            if np.any(resid > bound):
                k = int(np.argmax(resid))
                raise DataError(
                    f"vehicle {vid}: kinematic inconsistency at t={self.t[k]:.1f}"
                    f" (|dx - v*dt| = {resid[k]:.4f} m > {bound:.4f} m)")


class TrajectorySet:
    """Trajectories of one recording, keyed by vehicle id."""

    def __init__(self, trajectories):
        self._by_id = {tr.vehicle_id: tr for tr in trajectories}
        if len(self._by_id) != len(list(trajectories)):
            raise DataError("duplicate vehicle ids in trajectory set")

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())

    def __contains__(self, vehicle_id):
        return vehicle_id in self._by_id

    @property
    def vehicle_ids(self):
        return sorted(self._by_id)

    def get(self, vehicle_id) -> Trajectory | None:
        return self._by_id.get(vehicle_id)

    def __getitem__(self, vehicle_id) -> Trajectory:
        try:
            return self._by_id[vehicle_id]
        except KeyError:
            raise KeyError(f"no trajectory for vehicle {vehicle_id}") from None


def _resample_to_grid(t, x, v, a, lane, leader_id):
    """Linearly resample one vehicle's record onto the DT grid."""
    t0 = round(t[0] / DT) * DT
    n = int(round((t[-1] - t0) / DT)) + 1
    grid = t0 + DT * np.arange(n)
    xg = np.interp(grid, t, x)
    vg = np.interp(grid, t, v)
    ag = np.interp(grid, t, a)
    # integer channels take the value of the last original sample <= grid time
    src = np.clip(np.searchsorted(t, grid + 1e-9) - 1, 0, len(t) - 1)
    return grid, xg, vg, ag, lane[src], leader_id[src]


def load_trajectories(path, format="ngsim_csv", units="si") -> TrajectorySet:
    """Load an NGSIM-style CSV into one validated Trajectory per vehicle.

    The file must carry the canonical header (see CSV_COLUMNS); an empty
    leader_id field marks a free vehicle. Lines starting with '#' are
    ignored (stage artifacts embed their config hash that way).
    """
    if format != "ngsim_csv":
        raise ConfigError(f"unknown trajectory format: {format!r}")
    try:
        sx, sv, sa = _UNIT_SCALES[units]
    except KeyError:
        raise ConfigError(f"unknown unit system: {units!r}") from None

    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(io.StringIO("".join(lines)))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required columns {missing}")
    col = {name: header.index(name) for name in CSV_COLUMNS}

    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            vid = int(row[col["vehicle_id"]])
            t = float(row[col["time_s"]])
            x = float(row[col["pos_m"]]) * sx
            v = float(row[col["speed_mps"]]) * sv
            a = float(row[col["accel_mps2"]]) * sa
            lane = int(row[col["lane"]])
            raw_leader = row[col["leader_id"]].strip()
            leader = int(raw_leader) if raw_leader else NO_LEADER
        except (ValueError, IndexError) as exc:
            raise ParseError(f"malformed row: {exc}", line=lineno) from None
        rows.setdefault(vid, []).append((t, x, v, a, lane, leader))

    trajectories = []
    for vid in sorted(rows):
        rec = sorted(rows[vid], key=lambda r: r[0])
        t = np.array([r[0] for r in rec])
        if len(t) > 1 and np.any(np.diff(t) <= 1e-9):
            raise DataError(f"vehicle {vid}: duplicate or non-monotone time")
        x = np.array([r[1] for r in rec])
        v = np.array([r[2] for r in rec])
        a = np.array([r[3] for r in rec])
        lane = np.array([r[4] for r in rec], dtype=int)
        leader = np.array([r[5] for r in rec], dtype=int)
        if len(t) > 1 and np.any(np.abs(np.diff(t) - DT) > 1e-6):
            t, x, v, a, lane, leader = _resample_to_grid(t, x, v, a, lane, leader)
        v = np.where((v < 0) & (v > -1e-9), 0.0, v)
        trajectories.append(Trajectory(vid, t, x, v, a, lane, leader))
    return TrajectorySet(trajectories)


def save_trajectories(tset: TrajectorySet, path, header_comment=None):
    """Write a TrajectorySet in the canonical CSV format (SI units)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for tr in sorted(tset, key=lambda tr: tr.vehicle_id):
            for i in range(len(tr)):
                lid = int(tr.leader_id[i])
                writer.writerow([
                    tr.vehicle_id,
                    int(round(tr.t[i] / DT)),
                    repr(float(tr.t[i])),
                    repr(float(tr.x[i])),
                    repr(float(tr.v[i])),
                    repr(float(tr.a[i])),
                    int(tr.lane[i]),
                    "" if lid == NO_LEADER else lid,
                ])


class LeaderFollowerPair:
    """Synchronized leader-follower slice over a common time grid.

    Spacing stays positive over the whole overlap; shorter-than-minimum
    overlaps are rejected by extract_pairs upstream.
    """

    MIN_OVERLAP = 3.0

    def __init__(self, leader: Trajectory, follower: Trajectory):
        if len(leader) != len(follower):
            raise DataError("pair trajectories must share a grid")
        if np.any(np.abs(leader.t - follower.t) > 1e-6):
            raise DataError("pair trajectories must share a grid")
        self.leader = leader
        self.follower = follower
        self.t = follower.t
        self.spacing = leader.x - follower.x
        self.rel_speed = leader.v - follower.v
        self.spacing.setflags(write=False)
        self.rel_speed.setflags(write=False)
        if np.any(self.spacing <= 0):
            raise DataError(
                f"pair ({leader.vehicle_id}->{follower.vehicle_id}): "
                "non-positive spacing inside overlap")
        if self.duration < self.MIN_OVERLAP - 1e-9:
            raise DataError(
                f"pair ({leader.vehicle_id}->{follower.vehicle_id}): "
                f"overlap {self.duration:.1f} s below minimum")

    def __len__(self):
        return len(self.t)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    @property
    def overlap(self):
        return (float(self.t[0]), float(self.t[-1]))

    @property
    def key(self):
        return (self.follower.vehicle_id, self.leader.vehicle_id,
                float(self.t[0]))

    def __repr__(self):
        return (f"LeaderFollowerPair(F={self.follower.vehicle_id}, "
                f"L={self.leader.vehicle_id}, t=[{self.t[0]:.1f}, "
                f"{self.t[-1]:.1f}])")


def extract_pairs(tset: TrajectorySet, min_overlap=3.0):
    """Extract maximal constant-leader, positive-spacing intervals.

    One pair per (follower, leader_id) maximal contiguous interval; an
    interval is truncated at the last positive-spacing step and dropped if
    shorter than min_overlap.
    """
    if min_overlap < 3.0:
        raise ConfigError("min_overlap must be at least 3 s")
    pairs = []
    for follower in tset:
        fid = follower.vehicle_id
        n = len(follower)
        i = 0
        while i < n:
            lid = int(follower.leader_id[i])
            j = i
            while j < n and int(follower.leader_id[j]) == lid:
                j += 1
            if lid != NO_LEADER and lid != fid:
                leader = tset.get(lid)
                if leader is not None:
                    _emit_pair_runs(leader, follower, i, j, min_overlap, pairs)
            i = j
    pairs.sort(key=lambda p: p.key)
    return pairs


def _emit_pair_runs(leader, follower, i0, i1, min_overlap, out):
    """Split [i0, i1) on leader coverage and positive spacing, emit pairs."""
    t_lo = max(follower.t[i0], leader.t[0])
    t_hi = min(follower.t[i1 - 1], leader.t[-1])
    if t_hi - t_lo < min_overlap - 1e-9:
        return
    f0 = follower.index_at(round(t_lo / DT) * DT)
    f1 = follower.index_at(round(t_hi / DT) * DT)
    l0 = leader.index_at(round(t_lo / DT) * DT)
    spacing = leader.x[l0:l0 + (f1 - f0 + 1)] - follower.x[f0:f1 + 1]
    positive = spacing > 0
    k = 0
    m = len(positive)
    while k < m:
        if not positive[k]:
            k += 1
            continue
        k2 = k
        while k2 < m and positive[k2]:
            k2 += 1
        if (k2 - k - 1) * DT >= min_overlap - 1e-9:
            out.append(LeaderFollowerPair(
                leader.slice(l0 + k, l0 + k2),
                follower.slice(f0 + k, f0 + k2)))
        k = k2


@dataclass
class DatasetSplit:
    """Train/val/test pair lists, disjoint by follower vehicle id."""

    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)


def split_pairs(pairs, val_fraction=0.2, test_fraction=0.0, seed=0) -> DatasetSplit:
    """Split pairs by follower id (80:20 train:val by default)."""
    if not 0 <= val_fraction + test_fraction < 1:
        raise ConfigError("val_fraction + test_fraction must be in [0, 1)")
    followers = sorted({p.follower.vehicle_id for p in pairs})
    rng = np.random.default_rng(seed)
    rng.shuffle(followers)
    n = len(followers)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    test_ids = set(followers[:n_test])
    val_ids = set(followers[n_test:n_test + n_val])
    split = DatasetSplit()
    for p in pairs:
        fid = p.follower.vehicle_id
        if fid in test_ids:
            split.test.append(p)
        elif fid in val_ids:
            split.val.append(p)
        else:
            split.train.append(p)
    return split
