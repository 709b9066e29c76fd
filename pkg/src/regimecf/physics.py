"""Newell and IDM car-following laws plus genetic-algorithm IDM calibration.

Both laws integrate on the shared DT grid with the same kinematic update as
the closed-loop simulator, so physics baselines and learned models are
directly comparable. Simulated speed is floored at zero; when the floor
binds, the reported acceleration is the effective (post-clip) one so the
kinematic identity x[k+1] - x[k] - v[k]*DT - 0.5*a[k]*DT^2 = 0 holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .trajectory import DT, Trajectory


@dataclass(frozen=True)
class NewellConfig:
    """Time displacement tau_n, space displacement d_n, desired speed v0."""

    tau_n: float = 1.2
    d_n: float = 8.0
    v0: float = 30.0

    def __post_init__(self):
        if not (self.tau_n > 0 and self.d_n > 0 and self.v0 > 0):
            raise ConfigError("NewellConfig fields must be positive")
        if not np.isfinite([self.tau_n, self.d_n, self.v0]).all():
            raise ConfigError("NewellConfig fields must be finite")


def newell_simulate(leader: Trajectory, cfg: NewellConfig, x0, horizon=None,
                    vehicle_id=0) -> Trajectory:
    """Follower trajectory under the displaced-leader law.

    Position at t + tau is the minimum of the free-flow advance x(t) + v0*tau
    and the displaced leader position x_leader(t) - d_n. tau is rounded to
    the nearest grid multiple; the first delay window, which the law leaves
    unconstrained, is filled by linear interpolation from x0.
    """
    n_lead = len(leader)
    if horizon is None:
        steps = n_lead - 1
    else:
        steps = int(round(horizon / DT))
        if steps > n_lead - 1:
            raise ValueError("horizon extends beyond leader data")
    if x0 >= leader.x[0]:
        raise ValueError("follower must start behind the leader")
    m = max(1, int(round(cfg.tau_n / DT)))
    tau_eff = m * DT
    x = np.empty(steps + 1)
    x[0] = x0
    first = min(x0 + cfg.v0 * tau_eff, leader.x[0] - cfg.d_n)
    first = max(first, x0)  # too-close start: stand still through the delay
    if m <= steps:
        x[:m + 1] = np.linspace(x0, first, m + 1)
        for k in range(m + 1, steps + 1):
            x[k] = min(x[k - m] + cfg.v0 * tau_eff, leader.x[k - m] - cfg.d_n)
            if x[k] < x[k - 1]:
                x[k] = x[k - 1]
    else:
        x[:] = np.linspace(x0, first, m + 1)[:steps + 1]
    t = leader.t[0] + DT * np.arange(steps + 1)
    v = np.empty_like(x)
    v[:-1] = np.diff(x) / DT
    v[-1] = v[-2] if steps else 0.0
    v = np.maximum(v, 0.0)
    a = np.empty_like(x)
    a[:-1] = np.diff(v) / DT
    a[-1] = 0.0
    lid = np.full(steps + 1, leader.vehicle_id, dtype=int)
    return Trajectory(vehicle_id, t, x, v, a, leader.lane[:steps + 1], lid,
                      validate=False)


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters (desired-gap formulation)."""

    v0: float = 30.0
    T_hw: float = 1.5
    a_max: float = 1.0
    b: float = 2.0
    s0: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        vals = (self.v0, self.T_hw, self.a_max, self.b, self.s0, self.delta)
        if not all(x > 0 for x in vals):
            raise ConfigError("IdmParams fields must be positive")
        if self.delta < 1:
            raise ConfigError("IdmParams.delta must be >= 1")

    def as_array(self):
        return np.array([self.v0, self.T_hw, self.a_max, self.b, self.s0,
                         self.delta])

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(x) for x in arr))


IDM_FIELDS = ("v0", "T_hw", "a_max", "b", "s0", "delta")


def idm_accel(v, dv, s, p: IdmParams):
    """IDM acceleration; dv is the approach rate v - v_leader, s the spacing."""
    if np.any(np.asarray(s) <= 0):
        raise DataError("IDM requires positive spacing")
    s_star = p.s0 + np.maximum(
        0.0, v * p.T_hw + v * dv / (2.0 * np.sqrt(p.a_max * p.b)))
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)


def kinematic_step(x, v, a_cmd):
    """Shared integrator step; returns (x_next, v_next, a_eff, clipped)."""
    v_next = v + a_cmd * DT
    clipped = v_next < 0
    v_next = max(v_next, 0.0)
    a_eff = (v_next - v) / DT
    x_next = x + v * DT + 0.5 * a_eff * DT * DT
    return x_next, v_next, a_eff, clipped


def idm_simulate(leader: Trajectory, p: IdmParams, x0, v_init,
                 vehicle_id=0, accel_noise=None,
                 spacing_floor=0.1) -> Trajectory:
    """Closed-loop IDM follower behind a replayed leader.

    accel_noise, when given, is a per-step additive array applied to the
    commanded acceleration before integration. If spacing would drop to the
    floor, the position is clamped just behind the leader (collision event;
    the caller can detect it from the spacing series).
    """
    n = len(leader)
    x = np.empty(n)
    v = np.empty(n)
    a = np.zeros(n)
    x[0], v[0] = x0, max(v_init, 0.0)
    if x0 >= leader.x[0]:
        raise ValueError("follower must start behind the leader")
    for k in range(n - 1):
        s = leader.x[k] - x[k]
        s = max(s, spacing_floor)
        cmd = idm_accel(v[k], v[k] - leader.v[k], s, p)
        if accel_noise is not None:
            cmd += accel_noise[k]
        x[k + 1], v[k + 1], a[k], _ = kinematic_step(x[k], v[k], cmd)
        if leader.x[k + 1] - x[k + 1] < spacing_floor:
            x[k + 1] = leader.x[k + 1] - spacing_floor
            v[k + 1] = max((x[k + 1] - x[k]) / DT, 0.0)
            a[k] = (v[k + 1] - v[k]) / DT
    a[n - 1] = a[n - 2] if n > 1 else 0.0
    lid = np.full(n, leader.vehicle_id, dtype=int)
    return Trajectory(vehicle_id, leader.t.copy(), x, v, a,
                      leader.lane.copy(), lid, validate=False)


def _idm_accel_batch(v, dv, s, P):
    """Vectorized IDM over a population matrix P of shape (n_ind, 6)."""
    v0, T_hw, a_max, b, s0, delta = (P[:, i] for i in range(6))
    s_star = s0 + np.maximum(0.0, v * T_hw + v * dv / (2.0 * np.sqrt(a_max * b)))
    return a_max * (1.0 - (v / v0) ** delta - (s_star / s) ** 2)


def _spacing_mse_batch(pair, P, spacing_floor=0.1):
    """Spacing MSE of each candidate parameter row on one observed pair."""
    n = len(pair)
    n_ind = P.shape[0]
    x = np.full(n_ind, pair.follower.x[0])
    v = np.full(n_ind, pair.follower.v[0])
    lead_x, lead_v = pair.leader.x, pair.leader.v
    sq_err = np.zeros(n_ind)
    for k in range(n - 1):
        s = np.maximum(lead_x[k] - x, spacing_floor)
        cmd = _idm_accel_batch(v, v - lead_v[k], s, P)
        v_next = np.maximum(v + cmd * DT, 0.0)
        a_eff = (v_next - v) / DT
        x = x + v * DT + 0.5 * a_eff * DT * DT
        x = np.minimum(x, lead_x[k + 1] - spacing_floor)
        v = v_next
        d_sim = lead_x[k + 1] - x
        sq_err += (d_sim - pair.spacing[k + 1]) ** 2
    return sq_err / (n - 1)


DEFAULT_IDM_BOUNDS = {
    "v0": (10.0, 40.0),
    "T_hw": (0.5, 3.0),
    "a_max": (0.3, 3.0),
    "b": (0.5, 4.0),
    "s0": (0.5, 6.0),
    "delta": (1.0, 8.0),
}


@dataclass
class GaSettings:
    """Conventional GA configuration; the calibration paper gives none."""

    population: int = 50
    generations: int = 100
    tournament_k: int = 3
    crossover_prob: float = 0.9
    mutation_sigma_frac: float = 0.05
    mutation_prob: float = 0.3
    elitism: int = 1
    seed: int = 0
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_IDM_BOUNDS))

    def __post_init__(self):
        if self.population < 1 or self.generations < 1:
            raise ConfigError("population and generations must be >= 1")
        missing = [f for f in IDM_FIELDS if f not in self.bounds]
        if missing:
            raise ConfigError(f"GA bounds missing for {missing}")


def calibrate_idm(pairs, ga: GaSettings):
    """Calibrate IDM by minimizing mean spacing MSE over training pairs.

    Tournament selection, uniform crossover, Gaussian mutation clipped to
    bounds, and single-individual elitism; vectorized fitness evaluation
    keeps individuals independent (and runs deterministic). Returns the best
    IdmParams and the per-generation best-fitness trace (non-increasing).
    """
    if not pairs:
        raise ConfigError("calibrate_idm needs at least one pair")
    rng = np.random.default_rng(ga.seed)
    lo = np.array([ga.bounds[f][0] for f in IDM_FIELDS])
    hi = np.array([ga.bounds[f][1] for f in IDM_FIELDS])
    span = hi - lo
    pop = lo + rng.random((ga.population, 6)) * span

    def fitness(P):
        total = np.zeros(P.shape[0])
        for pair in pairs:
            total += _spacing_mse_batch(pair, P)
        return total / len(pairs)

    trace = np.empty(ga.generations)
    best_x = None
    best_f = np.inf
    for gen in range(ga.generations):
        fit = fitness(pop)
        gen_best = int(np.argmin(fit))
        if fit[gen_best] < best_f:
            best_f = float(fit[gen_best])
            best_x = pop[gen_best].copy()
        trace[gen] = best_f
        if gen == ga.generations - 1:
            break
        # breed the next generation
        n_children = ga.population - ga.elitism
        idx_a = _tournament(rng, fit, ga.tournament_k, n_children)
        idx_b = _tournament(rng, fit, ga.tournament_k, n_children)
        children = pop[idx_a].copy()
        cross = rng.random(n_children) < ga.crossover_prob
        gene_mix = rng.random((n_children, 6)) < 0.5
        take_b = cross[:, None] & gene_mix
        children[take_b] = pop[idx_b][take_b]
        mutate = rng.random((n_children, 6)) < ga.mutation_prob
        noise = rng.normal(0.0, ga.mutation_sigma_frac, (n_children, 6)) * span
        children = np.clip(children + mutate * noise, lo, hi)
        elite = best_x[None, :].repeat(ga.elitism, axis=0)
        pop = np.vstack([elite, children])
    return IdmParams.from_array(best_x), trace


def _tournament(rng, fitness, k, n):
    contestants = rng.integers(0, len(fitness), size=(n, k))
    winners = contestants[np.arange(n), np.argmin(fitness[contestants], axis=1)]
    return winners
