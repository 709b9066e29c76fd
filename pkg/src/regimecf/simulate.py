"""Closed-loop single-follower and platoon simulation with MSE evaluation.

Every model kind exposes the same contract: given the recent state history,
produce the next acceleration command, which the shared kinematic update
integrates (speed floored at zero, effective acceleration reported). Window
models replay the first N observed steps as warm-up and predict from step
N + 1 on; metrics for all kinds are computed over the post-warm-up range so
models remain comparable. A rollout whose spacing collapses records a
collision event and continues with spacing floored at 0.1 m.

Per-vehicle errors follow the double-mean convention: mean over time of
squared error per vehicle, then mean over vehicles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .nn.layers import WINDOW
from .nn.tensor import no_grad
from .physics import IdmParams, NewellConfig, idm_accel, newell_simulate
from .pipeline import PairFrames, pair_frames
from .regimes import DrivingRegime, one_hot_matrix
from .trajectory import DT, Trajectory

SPACING_FLOOR = 0.1

NEURAL_KINDS = ("lstm_dr", "lstm_plain", "gru_plain", "rnn_plain")
ALL_KINDS = NEURAL_KINDS + ("idm", "newell", "replay")


@dataclass
class ModelHandle:
    """Uniform wrapper around every simulatable follower model."""

    kind: str
    kinematic_net: object = None
    regime_net: object = None
    idm: IdmParams = None
    newell: NewellConfig = None
    window: int = WINDOW

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind in NEURAL_KINDS and self.kinematic_net is None:
            raise ConfigError(f"{self.kind} requires a kinematic net")
        if self.kind == "lstm_dr" and self.regime_net is None:
            raise ConfigError("lstm_dr requires a regime net")
        if self.kind == "idm" and self.idm is None:
            raise ConfigError("idm requires IdmParams")
        if self.kind == "newell" and self.newell is None:
            raise ConfigError("newell requires NewellConfig")

    @property
    def uses_regimes(self):
        return self.kind == "lstm_dr"


@dataclass
class SimEvent:
    kind: str      # "collision" | "clip"
    t_index: int
    vehicle: int


@dataclass
class SimResult:
    """Simulated series (full observed length) plus per-MoP errors."""

    vehicle_id: int
    t: np.ndarray
    x_sim: np.ndarray
    v_sim: np.ndarray
    a_sim: np.ndarray
    dd_sim: np.ndarray
    dv_sim: np.ndarray
    warmup: int
    events: list = field(default_factory=list)
    x_obs: np.ndarray = None
    v_obs: np.ndarray = None
    a_obs: np.ndarray = None
    dd_obs: np.ndarray = None
    dv_obs: np.ndarray = None
    mse: dict = None

    @property
    def collisions(self):
        return [e for e in self.events if e.kind == "collision"]


def evaluate_mse(sim_series, obs_series) -> float:
    """Per-vehicle mean squared error over aligned series."""
    sim = np.asarray(sim_series, dtype=float)
    obs = np.asarray(obs_series, dtype=float)
    if sim.shape != obs.shape:
        raise DataError(f"series length mismatch: {sim.shape} vs {obs.shape}")
    diff = sim - obs
    return float(np.mean(diff * diff))


def aggregate_mse(per_vehicle_values) -> float:
    """Mean over vehicles of per-vehicle MSEs (the outer 1/N_s sum)."""
    vals = [float(v) for v in per_vehicle_values]
    if not vals:
        raise DataError("aggregate_mse needs at least one vehicle")
    return float(np.mean(vals))


def aggregate_results(results, mop) -> float:
    return aggregate_mse([r.mse[mop] for r in results if r.mse is not None])


def _metric_ranges(n, warmup):
    """Index ranges entering the metrics: accel vs state series."""
    a_range = slice(warmup - 1, n - 1)   # accel realized over [t, t+dt)
    s_range = slice(warmup, n)           # speed/position/spacing states
    return a_range, s_range


def _result_metrics(res: SimResult):
    if res.x_obs is None:
        return None
    a_range, s_range = _metric_ranges(len(res.t), res.warmup)
    return {
        "a": evaluate_mse(res.a_sim[a_range], res.a_obs[a_range]),
        "v": evaluate_mse(res.v_sim[s_range], res.v_obs[s_range]),
        "x": evaluate_mse(res.x_sim[s_range], res.x_obs[s_range]),
        "dx": evaluate_mse(res.dd_sim[s_range], res.dd_obs[s_range]),
    }


def closed_loop_simulate(pair, model: ModelHandle, labels=None) -> SimResult:
    """Simulate one follower against its replayed leader."""
    return simulate_pairs([pair], model,
                          None if labels is None else [labels])[0]


def simulate_pairs(pairs, model: ModelHandle, labels_list=None):
    """Closed-loop simulation of many pairs (batched for neural models)."""
    if labels_list is None:
        labels_list = [None] * len(pairs)
    if len(labels_list) != len(pairs):
        raise ConfigError("labels_list must match pairs")
    if model.kind in NEURAL_KINDS:
        frames = []
        for pair, labels in zip(pairs, labels_list):
            if model.uses_regimes and labels is None:
                raise DataError("lstm_dr needs warm-up regime labels")
            dr = labels if labels is not None else np.zeros(len(pair), int)
            frames.append(PairFrames(
                t=pair.t, dd=pair.spacing, dv=pair.rel_speed,
                v=pair.follower.v, a=pair.follower.a,
                dr=np.asarray(dr, dtype=int), leader_x=pair.leader.x,
                leader_v=pair.leader.v, x=pair.follower.x, pair=pair))
        return _simulate_neural_batch(frames, model,
                                      [p.follower.vehicle_id for p in pairs])
    out = []
    for pair in pairs:
        if model.kind == "idm":
            out.append(_simulate_idm(pair, model))
        elif model.kind == "newell":
            out.append(_simulate_newell(pair, model))
        else:
            out.append(_simulate_replay(pair, model))
    return out


def _base_result(vehicle_id, pair, x, v, a, warmup, events) -> SimResult:
    dd = pair.leader.x - x
    dv = pair.leader.v - v
    res = SimResult(
        vehicle_id=vehicle_id, t=pair.t, x_sim=x, v_sim=v, a_sim=a,
        dd_sim=dd, dv_sim=dv, warmup=warmup, events=events,
        x_obs=pair.follower.x, v_obs=pair.follower.v, a_obs=pair.follower.a,
        dd_obs=pair.spacing, dv_obs=pair.rel_speed)
    res.mse = _result_metrics(res)
    return res


def _roll_scalar_model(pair, accel_fn, warmup) -> SimResult:
    """Shared loop for models that map instantaneous state to acceleration."""
    n = len(pair)
    fid = pair.follower.vehicle_id
    x = pair.follower.x.copy()
    v = pair.follower.v.copy()
    a = pair.follower.a.copy()
    events = []
    lead_x, lead_v = pair.leader.x, pair.leader.v
    for t in range(warmup - 1, n - 1):
        spacing = max(lead_x[t] - x[t], SPACING_FLOOR)
        cmd = accel_fn(t, x[t], v[t], spacing, lead_v[t])
        v_next = v[t] + cmd * DT
        if v_next < 0:
            v_next = 0.0
            events.append(SimEvent("clip", t + 1, fid))
        a_eff = (v_next - v[t]) / DT
        x_next = x[t] + v[t] * DT + 0.5 * a_eff * DT * DT
        if lead_x[t + 1] - x_next < SPACING_FLOOR:
            x_next = lead_x[t + 1] - SPACING_FLOOR
            v_next = max((x_next - x[t]) / DT, 0.0)
            a_eff = (v_next - v[t]) / DT
            events.append(SimEvent("collision", t + 1, fid))
        x[t + 1], v[t + 1], a[t] = x_next, v_next, a_eff
    if n >= 2:
        a[n - 1] = a[n - 2]
    return _base_result(fid, pair, x, v, a, warmup, events)


def _simulate_idm(pair, model) -> SimResult:
    p = model.idm

    def accel(t, x, v, spacing, v_lead):
        return float(idm_accel(v, v - v_lead, spacing, p))

    return _roll_scalar_model(pair, accel, model.window)


def _simulate_replay(pair, model) -> SimResult:
    a_obs = pair.follower.a

    def accel(t, x, v, spacing, v_lead):
        return float(a_obs[t])

    return _roll_scalar_model(pair, accel, model.window)


def _simulate_newell(pair, model) -> SimResult:
    traj = newell_simulate(pair.leader, model.newell, pair.follower.x[0],
                           vehicle_id=pair.follower.vehicle_id)
    events = []
    dd = pair.leader.x - traj.x
    for t in np.nonzero(dd < SPACING_FLOOR)[0]:
        events.append(SimEvent("collision", int(t),
                               pair.follower.vehicle_id))
    return _base_result(pair.follower.vehicle_id, pair, traj.x, traj.v,
                        traj.a, model.window, events)


def _simulate_neural_batch(frames_list, model: ModelHandle, vehicle_ids):
    """Lockstep rollout of many pairs through one batched network."""
    N = model.window
    B = len(frames_list)
    lengths = np.array([len(f) for f in frames_list])
    if np.any(lengths < N + 2):
        raise DataError(f"pairs must exceed the {N}-step warm-up window")
    Tmax = int(lengths.max())

    def padded(getter):
        out = np.zeros((B, Tmax))
        for b, f in enumerate(frames_list):
            out[b, :lengths[b]] = getter(f)
            out[b, lengths[b]:] = getter(f)[-1]
        return out

    lead_x = padded(lambda f: f.leader_x)
    lead_v = padded(lambda f: f.leader_v)
    x = padded(lambda f: f.x)
    v = padded(lambda f: f.v)
    a = padded(lambda f: f.a)
    dd = lead_x - x
    dv = lead_v - v
    dr = np.zeros((B, Tmax), dtype=int)
    for b, f in enumerate(frames_list):
        dr[b, :lengths[b]] = f.dr
        dr[b, lengths[b]:] = f.dr[-1]
    events = [[] for _ in range(B)]

    with no_grad():
        for t in range(N - 1, Tmax - 1):
            if model.uses_regimes and t >= N:
                kin_hist = np.stack([dd[:, t - N:t], dv[:, t - N:t],
                                     v[:, t - N:t]], axis=2)
                onehots = one_hot_matrix(
                    dr[:, t - N:t].ravel()).reshape(B, N, -1)
                gru_in = np.concatenate([kin_hist, onehots], axis=2)
                probs = model.regime_net.forward_window(gru_in)
                dr[:, t] = np.argmax(probs.data, axis=1)
            kin = np.stack([dd[:, t - N + 1:t + 1], dv[:, t - N + 1:t + 1],
                            v[:, t - N + 1:t + 1]], axis=2)
            dr_win = dr[:, t - N + 1:t + 1] if model.uses_regimes else None
            a_pred = model.kinematic_net.forward_window(kin, dr_win).data
            v_next = v[:, t] + a_pred * DT
            clipped = v_next < 0
            v_next = np.maximum(v_next, 0.0)
            a_eff = (v_next - v[:, t]) / DT
            x_next = x[:, t] + v[:, t] * DT + 0.5 * a_eff * DT * DT
            collide = lead_x[:, t + 1] - x_next < SPACING_FLOOR
            if collide.any():
                x_next = np.where(collide, lead_x[:, t + 1] - SPACING_FLOOR,
                                  x_next)
                v_next = np.where(collide,
                                  np.maximum((x_next - x[:, t]) / DT, 0.0),
                                  v_next)
                a_eff = np.where(collide, (v_next - v[:, t]) / DT, a_eff)
            for b in np.nonzero(clipped & (t + 1 < lengths))[0]:
                events[b].append(SimEvent("clip", t + 1, vehicle_ids[b]))
            for b in np.nonzero(collide & (t + 1 < lengths))[0]:
                events[b].append(SimEvent("collision", t + 1,
                                          vehicle_ids[b]))
            x[:, t + 1] = x_next
            v[:, t + 1] = v_next
            a[:, t] = a_eff
            dd[:, t + 1] = lead_x[:, t + 1] - x_next
            dv[:, t + 1] = lead_v[:, t + 1] - v_next

    results = []
    for b, f in enumerate(frames_list):
        n = lengths[b]
        xb, vb, ab = x[b, :n].copy(), v[b, :n].copy(), a[b, :n].copy()
        if n >= 2:
            ab[n - 1] = ab[n - 2]
        res = SimResult(
            vehicle_id=vehicle_ids[b], t=f.t, x_sim=xb, v_sim=vb, a_sim=ab,
            dd_sim=f.leader_x - xb, dv_sim=f.leader_v - vb, warmup=N,
            events=events[b], x_obs=f.x, v_obs=f.v, a_obs=f.a,
            dd_obs=f.leader_x - f.x, dv_obs=f.leader_v - f.v)
        res.mse = _result_metrics(res)
        results.append(res)
    return results


class _SyntheticPair:
    """Leader/follower view used by platoon simulation internals."""

    def __init__(self, leader: Trajectory, follower: Trajectory):
        self.leader = leader
        self.follower = follower
        self.t = follower.t
        self.spacing = leader.x - follower.x
        self.rel_speed = leader.v - follower.v

    def __len__(self):
        return len(self.t)


def _constant_speed_history(t, x0, v0, lane, vehicle_id, leader_id):
    n = len(t)
    x = x0 + v0 * (t - t[0])
    v = np.full(n, max(v0, 0.0))
    a = np.zeros(n)
    lid = np.full(n, leader_id, dtype=int)
    return Trajectory(vehicle_id, t, x, v, a, np.full(n, lane, dtype=int),
                      lid, validate=False)


def platoon_simulate(lead: Trajectory, followers, initial_spacings=None,
                     initial_speeds=None, observed=None, labels=None):
    """Chain simulation: vehicle n follows the simulated vehicle n - 1.

    followers is a list of ModelHandle. Initial states come from observed
    trajectories when given, otherwise from initial_spacings (+ speeds,
    default: the lead's initial speed). Window models receive a constant
    speed synthetic warm-up history (regime labels default to steady
    following) unless observed histories are provided.
    """
    results = []
    if not followers:
        return results
    n_followers = len(followers)
    if observed is not None and len(observed) != n_followers:
        raise ConfigError("observed list must match followers")
    if observed is None:
        if initial_spacings is None:
            raise ConfigError("need initial_spacings without observed data")
        gaps = list(initial_spacings)
        if len(gaps) != n_followers:
            raise ConfigError("initial_spacings must match followers")
        speeds = (list(initial_speeds) if initial_speeds is not None
                  else [float(lead.v[0])] * n_followers)
    current_leader = lead
    for i, model in enumerate(followers):
        vid = lead.vehicle_id + i + 1
        if observed is not None:
            follower_obs = observed[i]
            vid = follower_obs.vehicle_id
        else:
            x0 = current_leader.x[0] - gaps[i]
            if x0 >= current_leader.x[0]:
                raise ConfigError("initial spacing must be positive")
            follower_obs = _constant_speed_history(
                current_leader.t, x0, speeds[i], int(current_leader.lane[0]),
                vid, current_leader.vehicle_id)
        pair = _SyntheticPair(current_leader, follower_obs)
        pair_labels = None
        if model.uses_regimes:
            pair_labels = (labels[i] if labels is not None
                           else np.full(len(pair), int(DrivingRegime.FOLLOW)))
        res = simulate_pairs([pair], model, [pair_labels])[0]
        if observed is None:
            res.x_obs = res.v_obs = res.a_obs = None
            res.dd_obs = res.dv_obs = None
            res.mse = None
        results.append(res)
        current_leader = Trajectory(
            vid, pair.t, res.x_sim, res.v_sim, res.a_sim,
            current_leader.lane, np.full(len(pair), current_leader.vehicle_id,
                                         dtype=int), validate=False)
    return results


def wave_arrival_times(results, v_threshold):
    """First time each vehicle's simulated speed drops below a threshold."""
    arrivals = []
    for res in results:
        below = np.nonzero(res.v_sim < v_threshold)[0]
        arrivals.append(float(res.t[below[0]]) if len(below) else np.inf)
    return arrivals


PHASE_HEADER = ["t", "vehicle", "dv_obs", "dd_obs", "v_obs",
                "dv_sim", "dd_sim", "v_sim"]


def export_phase_data(results, path, header_comment=None):
    """Spacing-velocity phase rows per vehicle, observed beside simulated."""
    if isinstance(results, SimResult):
        results = [results]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(PHASE_HEADER)
        for res in results:
            has_obs = res.dv_obs is not None
            for k in range(len(res.t)):
                writer.writerow([
                    repr(float(res.t[k])), res.vehicle_id,
                    repr(float(res.dv_obs[k])) if has_obs else "",
                    repr(float(res.dd_obs[k])) if has_obs else "",
                    repr(float(res.v_obs[k])) if has_obs else "",
                    repr(float(res.dv_sim[k])),
                    repr(float(res.dd_sim[k])),
                    repr(float(res.v_sim[k])),
                ])


TRAJ_HEADER = ["t", "vehicle", "x", "v", "a", "error_x"]


def export_trajectories(results, path, header_comment=None):
    """Spatiotemporal rows for trajectory plots: t,vehicle,x,v,a,error_x."""
    if isinstance(results, SimResult):
        results = [results]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(TRAJ_HEADER)
        for res in results:
            has_obs = res.x_obs is not None
            for k in range(len(res.t)):
                err = (repr(float(res.x_sim[k] - res.x_obs[k]))
                       if has_obs else "")
                writer.writerow([
                    repr(float(res.t[k])), res.vehicle_id,
                    repr(float(res.x_sim[k])), repr(float(res.v_sim[k])),
                    repr(float(res.a_sim[k])), err,
                ])
