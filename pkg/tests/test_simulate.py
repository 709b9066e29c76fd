import numpy as np
import pytest

from regimecf import (
    DrivingRegime,
    IdmParams,
    ModelHandle,
    NewellConfig,
    aggregate_mse,
    closed_loop_simulate,
    evaluate_mse,
    export_phase_data,
    export_trajectories,
    extract_pairs,
    generate_synthetic,
    platoon_simulate,
    stop_and_go_config,
    wave_arrival_times,
)
from regimecf.errors import ConfigError, DataError
from regimecf.nn.layers import KinematicPredictor, RegimePredictor
from regimecf.simulate import PHASE_HEADER, TRAJ_HEADER, simulate_pairs
from regimecf.synthetic import build_leader
from regimecf.trajectory import DT

from oracles import closed_loop_score


class TestEvaluateMse:
    def test_identical_series_zero(self):
        assert evaluate_mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_constant_offset_exact(self):
        obs = np.arange(5.0)
        assert evaluate_mse(obs + 2.0, obs) == pytest.approx(4.0, abs=1e-12)

    def test_aggregate_is_mean_of_per_vehicle(self):
        assert aggregate_mse([1.0, 3.0]) == pytest.approx(2.0, abs=1e-15)

    def test_hand_fixture_double_mean(self):
        # vehicle 1: errors (1, -1, 2) -> (1+1+4)/3 = 2
        # vehicle 2: errors (3, 0)    -> 9/2 = 4.5
        m1 = evaluate_mse([2.0, 1.0, 5.0], [1.0, 2.0, 3.0])
        m2 = evaluate_mse([4.0, 7.0], [1.0, 7.0])
        assert m1 == pytest.approx(2.0, abs=1e-12)
        assert m2 == pytest.approx(4.5, abs=1e-12)
        assert aggregate_mse([m1, m2]) == pytest.approx(3.25, abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            evaluate_mse([1.0], [1.0, 2.0])


class TestClosedLoop:
    def test_replay_model_zero_error(self, idm_stop_go):
        _, _, pairs = idm_stop_go
        res = closed_loop_simulate(pairs[0], ModelHandle("replay"))
        assert res.mse["a"] <= 1e-12
        assert res.mse["v"] <= 1e-12
        assert res.mse["x"] <= 1e-6

    def test_idm_self_consistency(self, idm_stop_go):
        _, _, pairs = idm_stop_go
        res = closed_loop_simulate(pairs[0], ModelHandle("idm",
                                                         idm=IdmParams()))
        assert res.mse["x"] < 0.01

    def test_newell_constant_leader_fixed_point(self):
        cfg = stop_and_go_config(law="newell", n_followers=1, seed=1)
        cfg.schedule = cfg.schedule[:1]  # constant leader
        tset, _ = generate_synthetic(cfg, seed=1)
        pair = extract_pairs(tset)[0]
        ncfg = NewellConfig()
        res = closed_loop_simulate(pair, ModelHandle("newell", newell=ncfg))
        expected = ncfg.d_n + pair.leader.v[0] * ncfg.tau_n
        assert res.dd_sim[-1] == pytest.approx(expected, abs=ncfg.v0 * DT)

    def test_series_lengths_match_observed(self, idm_stop_go):
        _, _, pairs = idm_stop_go
        res = closed_loop_simulate(pairs[0], ModelHandle("idm",
                                                         idm=IdmParams()))
        n = len(pairs[0])
        for series in (res.x_sim, res.v_sim, res.a_sim, res.dd_sim):
            assert len(series) == n

    def test_kinematic_identity_exact(self, idm_stop_go):
        _, _, pairs = idm_stop_go
        res = closed_loop_simulate(pairs[0], ModelHandle("idm",
                                                         idm=IdmParams()))
        x, v, a = res.x_sim, res.v_sim, res.a_sim
        resid = x[1:] - x[:-1] - v[:-1] * DT - 0.5 * a[:-1] * DT * DT
        assert np.max(np.abs(resid)) < 1e-12

    def test_untrained_neural_model_runs_and_flags(self, idm_stop_go):
        _, _, pairs = idm_stop_go
        kin = KinematicPredictor(regime_pathway=False, seed=0)
        res = closed_loop_simulate(pairs[0],
                                   ModelHandle("lstm_plain",
                                               kinematic_net=kin))
        assert res.mse is not None
        assert len(res.x_sim) == len(pairs[0])

    def test_lstm_dr_requires_labels(self, idm_stop_go):
        _, _, pairs = idm_stop_go
        model = ModelHandle("lstm_dr",
                            kinematic_net=KinematicPredictor(seed=0),
                            regime_net=RegimePredictor(seed=0))
        with pytest.raises(DataError):
            closed_loop_simulate(pairs[0], model)
        labels = np.full(len(pairs[0]), int(DrivingRegime.FOLLOW))
        res = closed_loop_simulate(pairs[0], model, labels=labels)
        assert len(res.a_sim) == len(pairs[0])

    def test_collision_flagged_and_floored(self):
        cfg = stop_and_go_config(law="idm", n_followers=1, seed=3,
                                 spacing=6.0)
        tset, _ = generate_synthetic(cfg, seed=3)
        pair = extract_pairs(tset)[0]
        # an aggressive IDM with near-zero headway tailgates into the stop
        bad = IdmParams(v0=40.0, T_hw=0.1, a_max=3.0, b=0.5, s0=0.5)
        res = closed_loop_simulate(pair, ModelHandle("idm", idm=bad))
        assert np.all(res.dd_sim >= 0.1 - 1e-9)
        assert res.mse is not None

    def test_model_handle_validation(self):
        with pytest.raises(ConfigError):
            ModelHandle("bogus")
        with pytest.raises(ConfigError):
            ModelHandle("idm")
        with pytest.raises(ConfigError):
            ModelHandle("lstm_dr", kinematic_net=KinematicPredictor(seed=0))


def stop_go_leader(seed=0, cruise=15.0, lead_out_s=10.0):
    cfg = stop_and_go_config(law="idm", n_followers=0, seed=seed,
                             cruise_v=cruise, hold_s=4.0,
                             lead_out_s=lead_out_s)
    return build_leader(cfg)


class TestPlatoon:
    def test_empty_followers(self):
        assert platoon_simulate(stop_go_leader(), []) == []

    def test_wave_propagates_upstream(self):
        lead = stop_go_leader()
        models = [ModelHandle("idm", idm=IdmParams(v0=25.0))] * 8
        results = platoon_simulate(lead, models,
                                   initial_spacings=[25.0] * 8)
        arrivals = wave_arrival_times(results, v_threshold=8.0)
        assert all(np.isfinite(arrivals))
        assert all(b > a for a, b in zip(arrivals, arrivals[1:]))

    def test_newell_translation_property(self):
        lead = stop_go_leader()
        ncfg = NewellConfig(tau_n=1.0, d_n=7.0, v0=30.0)
        k = 3
        models = [ModelHandle("newell", newell=ncfg)] * k
        spacing0 = ncfg.d_n + ncfg.tau_n * lead.v[0]
        results = platoon_simulate(lead, models,
                                   initial_spacings=[spacing0] * k)
        m = int(round(ncfg.tau_n / DT))
        for i, res in enumerate(results, start=1):
            shift = i * m
            x_expected = lead.x[:-shift] - i * ncfg.d_n
            x_got = res.x_sim[shift:]
            assert np.max(np.abs(x_got - x_expected)) <= \
                ncfg.v0 * DT * i + 1e-9

    def test_causality_changing_tail_model_is_bitwise_invisible(self):
        lead = stop_go_leader()
        front = [ModelHandle("idm", idm=IdmParams())] * 3
        run_a = platoon_simulate(lead, front + [ModelHandle(
            "idm", idm=IdmParams())], initial_spacings=[25.0] * 4)
        run_b = platoon_simulate(lead, front + [ModelHandle(
            "newell", newell=NewellConfig())], initial_spacings=[25.0] * 4)
        for res_a, res_b in zip(run_a[:3], run_b[:3]):
            np.testing.assert_array_equal(res_a.x_sim, res_b.x_sim)
            np.testing.assert_array_equal(res_a.v_sim, res_b.v_sim)

    def test_error_growth_with_position_on_stop_and_go(self):
        """Simulating with misspecified IDM against an observed IDM platoon:
        position errors accumulate along the chain."""
        n = 4
        cfg = stop_and_go_config(law="idm", n_followers=n, seed=2,
                                 spacing=25.0)
        tset, _ = generate_synthetic(cfg, seed=2)
        lead = tset[1]
        observed = [tset[2 + i] for i in range(n)]
        wrong = IdmParams(v0=30.0, T_hw=1.2, a_max=1.3, b=1.6, s0=2.5)
        results = platoon_simulate(lead, [ModelHandle("idm", idm=wrong)] * n,
                                   observed=observed)
        mse_x = [r.mse["x"] for r in results]
        assert all(b >= a for a, b in zip(mse_x, mse_x[1:]))

    def test_observed_platoon_gives_metrics(self):
        cfg = stop_and_go_config(law="idm", n_followers=2, seed=4)
        tset, _ = generate_synthetic(cfg, seed=4)
        results = platoon_simulate(
            tset[1], [ModelHandle("idm", idm=IdmParams())] * 2,
            observed=[tset[2], tset[3]])
        assert all(r.mse is not None for r in results)
        assert results[0].mse["x"] < 0.01  # same law, same params


class TestPhaseExport:
    def test_header_and_shape(self, idm_stop_go, tmp_path):
        _, _, pairs = idm_stop_go
        res = closed_loop_simulate(pairs[0],
                                   ModelHandle("idm", idm=IdmParams()))
        out = tmp_path / "phase.csv"
        export_phase_data(res, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == ",".join(PHASE_HEADER)
        assert len(lines) == len(pairs[0]) + 1

    def test_trajectory_export_header(self, idm_stop_go, tmp_path):
        _, _, pairs = idm_stop_go
        res = closed_loop_simulate(pairs[0],
                                   ModelHandle("idm", idm=IdmParams()))
        out = tmp_path / "traj.csv"
        export_trajectories(res, out)
        assert out.read_text().splitlines()[0] == ",".join(TRAJ_HEADER)

    def test_stop_and_go_trace_forms_closed_loop(self):
        lead = stop_go_leader(lead_out_s=45.0)
        res = platoon_simulate(lead, [ModelHandle("idm", idm=IdmParams())],
                               initial_spacings=[25.3])[0]
        closure, deviation = closed_loop_score(res.dv_sim, res.dd_sim)
        assert closure < 0.05
        assert deviation > 0.20

    def test_equilibrium_trace_collapses_to_point(self):
        cfg = stop_and_go_config(law="idm", n_followers=1, seed=6)
        cfg.schedule = cfg.schedule[:1]
        tset, _ = generate_synthetic(cfg, seed=6)
        pair = extract_pairs(tset)[0]
        res = closed_loop_simulate(pair, ModelHandle("idm", idm=IdmParams()))
        tail = slice(len(pair) // 2, None)
        assert np.ptp(res.dv_sim[tail]) < 0.05
        assert np.ptp(res.dd_sim[tail]) < 0.5


def test_simulate_pairs_batch_matches_single(idm_stop_go):
    _, _, pairs = idm_stop_go
    kin = KinematicPredictor(regime_pathway=False, seed=2)
    model = ModelHandle("lstm_plain", kinematic_net=kin)
    batch = simulate_pairs(pairs, model)
    singles = [simulate_pairs([p], model)[0] for p in pairs]
    for rb, rs in zip(batch, singles):
        np.testing.assert_allclose(rb.x_sim, rs.x_sim, atol=1e-9)
        np.testing.assert_allclose(rb.a_sim, rs.a_sim, atol=1e-9)
