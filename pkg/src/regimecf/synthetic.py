"""Physics-based synthetic trajectory generation for desk-scale experiments.

A scenario describes a leader running a piecewise-constant-acceleration
schedule and a column of followers generated by a chosen car-following law.
Ground-truth driving-regime labels are recorded alongside each follower,
derived from the commanded (pre-noise) acceleration and speed, so classifier
and model experiments have by-construction references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .physics import IdmParams, NewellConfig, idm_simulate, kinematic_step, newell_simulate
from .regimes import DrivingRegime
from .trajectory import DT, NO_LEADER, Trajectory, TrajectorySet

LEADER_ID = 1


@dataclass(frozen=True)
class SchedulePiece:
    duration_s: float
    accel_mps2: float


@dataclass
class ScenarioConfig:
    """Declarative synthetic scenario; see from_dict for the JSON schema."""

    leader_v0: float = 15.0
    leader_x0: float = 200.0
    schedule: list = field(default_factory=lambda: [SchedulePiece(30.0, 0.0)])
    follower_count: int = 1
    follower_law: str = "idm"          # idm | newell | regime_gain
    follower_params: dict = field(default_factory=dict)
    initial_spacing: float | list = 20.0
    initial_speed: float | None = None  # None: inherit the leader's v0
    noise_sigma: float = 0.0
    seed: int = 0
    lane: int = 2

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        try:
            leader = raw["leader"]
            followers = raw.get("followers", {})
            schedule = [SchedulePiece(float(p["duration_s"]),
                                      float(p["accel_mps2"]))
                        for p in leader["schedule"]]
            cfg = cls(
                leader_v0=float(leader.get("v0", 15.0)),
                leader_x0=float(leader.get("x0", 200.0)),
                schedule=schedule,
                follower_count=int(followers.get("count", 1)),
                follower_law=str(followers.get("law", "idm")),
                follower_params=dict(followers.get("params", {})),
                initial_spacing=followers.get("initial_spacing", 20.0),
                initial_speed=followers.get("initial_speed"),
                noise_sigma=float(raw.get("noise_sigma", 0.0)),
                seed=int(raw.get("seed", 0)),
                lane=int(raw.get("lane", 2)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario spec: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.leader_v0 < 0:
            raise ConfigError("leader v0 must be >= 0")
        if not self.schedule:
            raise ConfigError("schedule must have at least one piece")
        if any(p.duration_s <= 0 for p in self.schedule):
            raise ConfigError("schedule piece durations must be > 0")
        if self.follower_count < 0:
            raise ConfigError("follower count must be >= 0")
        if self.follower_law not in ("idm", "newell", "regime_gain"):
            raise ConfigError(f"unknown follower law {self.follower_law!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        for gap in self.spacings():
            if gap <= 0:
                raise ConfigError("initial spacing must be positive")

    def spacings(self):
        if isinstance(self.initial_spacing, (int, float)):
            return [float(self.initial_spacing)] * self.follower_count
        gaps = [float(g) for g in self.initial_spacing]
        if len(gaps) != self.follower_count:
            raise ConfigError("initial_spacing list must match follower count")
        return gaps


# regime-gain law: a linear stimulus-response follower whose gains depend on
# its current driving regime, giving data where the regime genuinely matters
REGIME_GAIN_DEFAULTS = {
    "F": {"k_dv": 0.6, "k_dd": 0.08, "T_gap": 1.4},
    "A": {"k_dv": 1.3, "k_dd": 0.22, "T_gap": 1.0},
    "D": {"k_dv": 0.35, "k_dd": 0.05, "T_gap": 2.2},
    "S": {"k_dv": 0.6, "k_dd": 0.08, "T_gap": 1.4},
    "s0": 2.0,
    "a_clip": 3.0,
}


def _truth_from_kinematics(a_cmd, v, slope_threshold=0.5, v_stop=0.1):
    """Regime of each timestep from commanded acceleration and speed."""
    labels = np.empty(len(v), dtype=int)
    for k in range(len(v)):
        if v[k] < v_stop and abs(a_cmd[k]) <= slope_threshold:
            labels[k] = DrivingRegime.STANDSTILL
        elif a_cmd[k] > slope_threshold:
            labels[k] = DrivingRegime.ACCEL
        elif a_cmd[k] < -slope_threshold:
            labels[k] = DrivingRegime.DECEL
        else:
            labels[k] = DrivingRegime.FOLLOW
    return labels


def build_leader(cfg: ScenarioConfig) -> Trajectory:
    """Integrate the leader schedule on the DT grid (speed floored at 0)."""
    n_steps = sum(int(round(p.duration_s / DT)) for p in cfg.schedule)
    t = DT * np.arange(n_steps + 1)
    x = np.empty(n_steps + 1)
    v = np.empty(n_steps + 1)
    a = np.zeros(n_steps + 1)
    x[0], v[0] = cfg.leader_x0, cfg.leader_v0
    k = 0
    for piece in cfg.schedule:
        for _ in range(int(round(piece.duration_s / DT))):
            x[k + 1], v[k + 1], a[k], _ = kinematic_step(
                x[k], v[k], piece.accel_mps2)
            k += 1
    a[-1] = a[-2] if n_steps else 0.0
    lane = np.full(n_steps + 1, cfg.lane, dtype=int)
    lid = np.full(n_steps + 1, NO_LEADER, dtype=int)
    return Trajectory(LEADER_ID, t, x, v, a, lane, lid, validate=False)


def _simulate_regime_gain(leader: Trajectory, params: dict, x0, v_init,
                          vehicle_id, noise=None):
    """Follower with regime-dependent response gains.

    The active regime is decided by thresholding the previous commanded
    acceleration (and current speed), then that regime's gains produce the
    next command: a = k_dv * dv + k_dd * (spacing - s0 - T_gap * v).
    """
    p = {**REGIME_GAIN_DEFAULTS, **params}
    n = len(leader)
    x = np.empty(n)
    v = np.empty(n)
    a = np.zeros(n)
    cmd = np.zeros(n)
    x[0], v[0] = x0, max(v_init, 0.0)
    regime = DrivingRegime.FOLLOW
    labels = np.empty(n, dtype=int)
    for k in range(n - 1):
        labels[k] = int(regime)
        gains = p[DrivingRegime(regime).letter]
        dv = leader.v[k] - v[k]
        gap_err = (leader.x[k] - x[k]) - p["s0"] - gains["T_gap"] * v[k]
        c = gains["k_dv"] * dv + gains["k_dd"] * gap_err
        c = float(np.clip(c, -p["a_clip"], p["a_clip"]))
        cmd[k] = c
        noisy = c if noise is None else c + noise[k]
        x[k + 1], v[k + 1], a[k], _ = kinematic_step(x[k], v[k], noisy)
        if leader.x[k + 1] - x[k + 1] < 0.1:
            x[k + 1] = leader.x[k + 1] - 0.1
            v[k + 1] = max((x[k + 1] - x[k]) / DT, 0.0)
            a[k] = (v[k + 1] - v[k]) / DT
        if v[k + 1] < 0.1 and abs(c) <= 0.5:
            regime = DrivingRegime.STANDSTILL
        elif c > 0.5:
            regime = DrivingRegime.ACCEL
        elif c < -0.5:
            regime = DrivingRegime.DECEL
        else:
            regime = DrivingRegime.FOLLOW
    labels[n - 1] = int(regime)
    a[-1] = a[-2] if n > 1 else 0.0
    cmd[-1] = cmd[-2] if n > 1 else 0.0
    lid = np.full(n, leader.vehicle_id, dtype=int)
    traj = Trajectory(vehicle_id, leader.t.copy(), x, v, a,
                      leader.lane.copy(), lid, validate=False)
    return traj, labels


def generate_synthetic(config: ScenarioConfig | dict, seed=None):
    """Generate a scenario; returns (TrajectorySet, truth_labels).

    truth_labels maps each follower vehicle id to its per-timestep regime
    array. Deterministic for a fixed seed; the seed argument overrides the
    one recorded in the config.
    """
    if isinstance(config, dict):
        config = ScenarioConfig.from_dict(config)
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    leader = build_leader(config)
    vehicles = [leader]
    truth = {}
    pred = leader
    v_init = config.leader_v0 if config.initial_speed is None else config.initial_speed
    for j, gap in enumerate(config.spacings()):
        vid = LEADER_ID + 1 + j
        x0 = pred.x[0] - gap
        if x0 >= pred.x[0]:
            raise ConfigError("non-positive spacing at t=0")
        noise = (rng.normal(0.0, config.noise_sigma, len(leader))
                 if config.noise_sigma > 0 else None)
        if config.follower_law == "idm":
            params = IdmParams(**config.follower_params) \
                if config.follower_params else IdmParams()
            traj = idm_simulate(pred, params, x0, v_init, vehicle_id=vid,
                                accel_noise=noise)
            labels = _truth_from_kinematics(traj.a, traj.v)
        elif config.follower_law == "newell":
            ncfg = NewellConfig(**config.follower_params) \
                if config.follower_params else NewellConfig()
            traj = newell_simulate(pred, ncfg, x0, vehicle_id=vid)
            if noise is not None:
                traj = _reintegrate_with_noise(traj, noise)
            labels = _truth_from_kinematics(traj.a, traj.v)
        else:
            traj, labels = _simulate_regime_gain(
                pred, config.follower_params, x0, v_init, vid, noise)
        vehicles.append(traj)
        truth[vid] = labels
        pred = traj
    return TrajectorySet(vehicles), truth


def _reintegrate_with_noise(traj: Trajectory, noise):
    """Perturb accelerations and re-integrate (post-hoc noise injection)."""
    n = len(traj)
    x = np.empty(n)
    v = np.empty(n)
    a = np.zeros(n)
    x[0], v[0] = traj.x[0], traj.v[0]
    for k in range(n - 1):
        x[k + 1], v[k + 1], a[k], _ = kinematic_step(
            x[k], v[k], traj.a[k] + noise[k])
    a[-1] = a[-2] if n > 1 else 0.0
    return Trajectory(traj.vehicle_id, traj.t.copy(), x, v, a,
                      traj.lane.copy(), traj.leader_id.copy(), validate=False)


def stop_and_go_config(cruise_v=15.0, n_followers=1, law="newell",
                       params=None, hold_s=5.0, seed=0, spacing=None,
                       lead_in_s=8.0, lead_out_s=10.0) -> ScenarioConfig:
    """Convenience scenario: cruise, decelerate to a stop, hold, re-accelerate."""
    decel_s = cruise_v / 1.0
    schedule = [
        SchedulePiece(lead_in_s, 0.0),
        SchedulePiece(decel_s, -1.0),
        SchedulePiece(hold_s, 0.0),
        SchedulePiece(decel_s, 1.0),
        SchedulePiece(lead_out_s, 0.0),
    ]
    if spacing is None:
        spacing = 8.0 + 1.2 * cruise_v if law == "newell" else 2.0 + 1.5 * cruise_v
    return ScenarioConfig(
        leader_v0=cruise_v, leader_x0=500.0, schedule=schedule,
        follower_count=n_followers, follower_law=law,
        follower_params=params or {}, initial_spacing=spacing, seed=seed)
