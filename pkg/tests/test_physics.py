import numpy as np
import pytest

from regimecf import (
    GaSettings,
    IdmParams,
    NewellConfig,
    calibrate_idm,
    extract_pairs,
    generate_synthetic,
    idm_accel,
    idm_simulate,
    newell_simulate,
    stop_and_go_config,
)
from regimecf.errors import ConfigError, DataError
from regimecf.physics import DEFAULT_IDM_BOUNDS, _spacing_mse_batch
from regimecf.synthetic import ScenarioConfig, SchedulePiece, build_leader
from regimecf.trajectory import DT


def leader_constant(v=10.0, duration=60.0, x0=500.0):
    cfg = ScenarioConfig(leader_v0=v, leader_x0=x0,
                         schedule=[SchedulePiece(duration, 0.0)],
                         follower_count=0)
    return build_leader(cfg)


class TestNewell:
    def test_free_flow_branch_exact_v0(self):
        leader = leader_constant(v=30.0, x0=5000.0)
        cfg = NewellConfig(tau_n=1.2, d_n=8.0, v0=20.0)
        fol = newell_simulate(leader, cfg, x0=0.0)
        m = int(round(cfg.tau_n / DT))
        v_free = fol.v[m:-1]
        assert np.allclose(v_free, 20.0, atol=1e-9)

    def test_leader_stopped_converges_to_standoff(self):
        cfg_lead = ScenarioConfig(
            leader_v0=0.0, leader_x0=100.0,
            schedule=[SchedulePiece(60.0, 0.0)], follower_count=0)
        leader = build_leader(cfg_lead)
        ncfg = NewellConfig(tau_n=1.2, d_n=8.0, v0=25.0)
        fol = newell_simulate(leader, ncfg, x0=0.0)
        assert fol.x[-1] == pytest.approx(100.0 - 8.0, abs=1e-9)
        assert fol.v[-1] == pytest.approx(0.0, abs=1e-9)

    def test_congested_steady_state_spacing(self):
        v_lead = 10.0
        leader = leader_constant(v=v_lead, duration=80.0, x0=100.0)
        cfg = NewellConfig(tau_n=1.2, d_n=8.0, v0=30.0)
        fol = newell_simulate(leader, cfg, x0=80.0)
        spacing = leader.x - fol.x
        expected = cfg.d_n + v_lead * cfg.tau_n
        assert spacing[-1] == pytest.approx(expected, abs=cfg.v0 * DT)

    def test_congested_spacing_never_below_dn(self):
        cfg = stop_and_go_config(law="newell", n_followers=1, seed=0)
        tset, _ = generate_synthetic(cfg, seed=0)
        leader, follower = tset[1], tset[2]
        spacing = leader.x - follower.x
        ncfg = NewellConfig()
        assert np.all(spacing >= ncfg.d_n - ncfg.v0 * DT)

    def test_horizon_beyond_leader_rejected(self):
        leader = leader_constant(duration=10.0)
        with pytest.raises(ValueError):
            newell_simulate(leader, NewellConfig(), x0=0.0, horizon=20.0)

    def test_position_nondecreasing(self):
        cfg = stop_and_go_config(law="newell", n_followers=1, seed=5)
        tset, _ = generate_synthetic(cfg, seed=5)
        assert np.all(np.diff(tset[2].x) >= -1e-12)


class TestIdmAccel:
    def test_equilibrium_limit_large_gap(self):
        p = IdmParams(v0=30.0)
        a = idm_accel(30.0, 0.0, 1e9, p)
        assert abs(a) < 1e-3

    def test_jam_equilibrium_zero(self):
        p = IdmParams(s0=2.0)
        assert idm_accel(0.0, 0.0, 2.0, p) == pytest.approx(0.0, abs=1e-12)

    def test_frozen_hand_value(self):
        p = IdmParams(v0=30.0, T_hw=1.5, a_max=1.0, b=2.0, s0=2.0, delta=4.0)
        # independent scalar evaluation:
        # s* = 2 + 20*1.5 = 32; a = 1 - (20/30)^4 - (32/40)^2
        assert idm_accel(20.0, 0.0, 40.0, p) == pytest.approx(
            0.16246913580246907, abs=1e-12)

    def test_nonpositive_spacing_rejected(self):
        with pytest.raises(DataError):
            idm_accel(10.0, 0.0, 0.0, IdmParams())

    def test_acceleration_bounded_above(self):
        rng = np.random.default_rng(0)
        p = IdmParams()
        for _ in range(500):
            a = idm_accel(rng.uniform(0, 35), rng.uniform(-10, 10),
                          rng.uniform(0.5, 200), p)
            assert a <= p.a_max

    def test_equilibrium_spacing_unique(self):
        p = IdmParams(v0=30.0, T_hw=1.5, a_max=1.0, b=2.0, s0=2.0)
        for v in (5.0, 15.0, 25.0):
            s_eq = (p.s0 + v * p.T_hw) / np.sqrt(1 - (v / p.v0) ** p.delta)
            assert idm_accel(v, 0.0, s_eq, p) == pytest.approx(0.0, abs=1e-9)
            assert idm_accel(v, 0.0, s_eq * 0.9, p) < 0
            assert idm_accel(v, 0.0, s_eq * 1.1, p) > 0


def make_idm_corpus(n_pairs=4, seed=0, params=None):
    pairs = []
    for k in range(n_pairs):
        cfg = stop_and_go_config(law="idm", n_followers=1, seed=seed + k,
                                 params=params, hold_s=3.0 + k,
                                 spacing=24.0 + 2 * k)
        tset, _ = generate_synthetic(cfg, seed=seed + k)
        pairs.extend(extract_pairs(tset))
    return pairs


class TestCalibrateIdm:
    def test_single_generation_population_one(self):
        pairs = make_idm_corpus(1)
        ga = GaSettings(population=1, generations=1, seed=3)
        best, trace = calibrate_idm(pairs, ga)
        assert len(trace) == 1
        mse = _spacing_mse_batch(pairs[0], best.as_array()[None, :])[0]
        assert trace[0] == pytest.approx(mse)

    def test_deterministic_given_seed(self):
        pairs = make_idm_corpus(2)
        ga = GaSettings(population=12, generations=6, seed=9)
        b1, t1 = calibrate_idm(pairs, ga)
        b2, t2 = calibrate_idm(pairs, ga)
        assert b1 == b2
        np.testing.assert_array_equal(t1, t2)

    def test_trace_monotone_nonincreasing(self):
        pairs = make_idm_corpus(2)
        ga = GaSettings(population=16, generations=12, seed=4)
        _, trace = calibrate_idm(pairs, ga)
        assert np.all(np.diff(trace) <= 1e-15)

    def test_config_errors(self):
        pairs = make_idm_corpus(1)
        with pytest.raises(ConfigError):
            GaSettings(population=0)
        with pytest.raises(ConfigError):
            GaSettings(generations=0)
        with pytest.raises(ConfigError):
            calibrate_idm([], GaSettings())

    def test_self_calibration_beats_center(self):
        """Recovered parameters reach <= 1% of the search-center MSE."""
        true = IdmParams(v0=22.0, T_hw=1.3, a_max=1.2, b=1.8, s0=2.5,
                         delta=4.0)
        train = make_idm_corpus(4, seed=0, params=vars(true))
        held = make_idm_corpus(2, seed=50, params=vars(true))
        ga = GaSettings(population=40, generations=40, seed=1)
        best, trace = calibrate_idm(train, ga)
        center = np.array([(lo + hi) / 2
                           for lo, hi in (ga.bounds[f] for f in
                                          ("v0", "T_hw", "a_max", "b", "s0",
                                           "delta"))])

        def held_mse(P):
            return float(np.mean([_spacing_mse_batch(p, P[None, :])[0]
                                  for p in held]))

        assert held_mse(best.as_array()) <= 0.01 * held_mse(center)


def test_idm_simulate_follows_without_collision(idm_stop_go):
    tset, _, pairs = idm_stop_go
    for pair in pairs:
        assert np.all(pair.spacing > 0)


def test_velocity_floor_logged_in_simulation():
    leader = leader_constant(v=0.5, duration=30.0, x0=6.0)
    fol = idm_simulate(leader, IdmParams(), x0=0.0, v_init=3.0)
    assert np.all(fol.v >= 0.0)
