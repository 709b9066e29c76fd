import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regimecf import (
    NewellConfig,
    dtw_align,
    extract_newell_params,
    generate_synthetic,
    extract_pairs,
    split_cf_ff,
    stop_and_go_config,
)
from regimecf.alignment import export_alignment
from regimecf.regimes import SectionLabel
from regimecf.trajectory import DT, Trajectory
from regimecf.errors import DataError

from oracles import brute_force_dtw_cost


class TestDtwAlign:
    def test_identical_sequences_diagonal_zero_cost(self):
        seq = [3.0, 1.0, 4.0, 1.0, 5.0]
        path = dtw_align(seq, seq)
        assert path.total_cost == 0.0
        np.testing.assert_array_equal(
            path.pairs, np.stack([np.arange(5), np.arange(5)], axis=1))

    def test_duplicated_match_zero_cost(self):
        path = dtw_align([0.0, 1.0, 2.0], [0.0, 0.0, 1.0, 2.0])
        assert path.total_cost == 0.0
        assert brute_force_dtw_cost([0, 1, 2], [0, 0, 1, 2]) == 0.0

    def test_hand_dp_table_single_vs_pair(self):
        path = dtw_align([1.0], [4.0, 4.0])
        assert path.total_cost == 6.0
        np.testing.assert_array_equal(path.pairs, [[0, 0], [0, 1]])

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            dtw_align([], [1.0])

    def test_path_step_and_boundary_invariants(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.normal(size=rng.integers(2, 30))
            b = rng.normal(size=rng.integers(2, 30))
            path = dtw_align(a, b)
            pairs = path.pairs
            assert tuple(pairs[0]) == (0, 0)
            assert tuple(pairs[-1]) == (len(a) - 1, len(b) - 1)
            steps = np.diff(pairs, axis=0)
            assert np.all((steps >= 0) & (steps <= 1))
            assert np.all(steps.sum(axis=1) >= 1)
            # total cost equals the sum of local costs along the path
            local = np.abs(a[pairs[:, 0]] - b[pairs[:, 1]]).sum()
            assert path.total_cost == pytest.approx(local, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_matches_brute_force(self, data):
        n = data.draw(st.integers(1, 7))
        m = data.draw(st.integers(1, 7))
        a = data.draw(st.lists(
            st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n))
        b = data.draw(st.lists(
            st.floats(-10, 10, allow_nan=False), min_size=m, max_size=m))
        assert dtw_align(a, b).total_cost == pytest.approx(
            brute_force_dtw_cost(a, b), abs=1e-12)

    def test_cost_symmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            a = rng.normal(size=rng.integers(2, 15))
            b = rng.normal(size=rng.integers(2, 15))
            assert dtw_align(a, b).total_cost == pytest.approx(
                dtw_align(b, a).total_cost, abs=1e-12)

    def test_zero_cost_iff_exact_alignment(self):
        path = dtw_align([1.0, 2.0], [1.0, 2.5])
        assert path.total_cost > 0


def shifted_pair(shift_s=1.0, gap=20.0, seed=0):
    """Follower = leader speed profile delayed by shift_s, gap m behind."""
    rng = np.random.default_rng(seed)
    n = 400
    t = DT * np.arange(n)
    v_lead = 12 + 2.0 * np.sin(2 * np.pi * t / 12.0) \
        + np.cumsum(rng.normal(0, 0.02, n))
    v_lead = np.maximum(v_lead, 0.1)
    m = int(round(shift_s / DT))
    v_fol = np.concatenate([np.full(m, v_lead[0]), v_lead[:-m]])
    x_lead = 100.0 + np.concatenate([[0.0], np.cumsum(v_lead[:-1] * DT)])
    x_fol = x_lead[0] - gap + np.concatenate(
        [[0.0], np.cumsum(v_fol[:-1] * DT)])
    a_lead = np.concatenate([np.diff(v_lead) / DT, [0.0]])
    a_fol = np.concatenate([np.diff(v_fol) / DT, [0.0]])
    leader = Trajectory(1, t, x_lead, v_lead, a_lead, validate=False)
    follower = Trajectory(2, t, x_fol, v_fol, a_fol,
                          leader_id=np.full(n, 1), validate=False)
    from regimecf.trajectory import LeaderFollowerPair
    return LeaderFollowerPair(leader, follower)


class TestNewellExtraction:
    def test_pure_shift_recovers_tau_and_gap(self):
        pair = shifted_pair(shift_s=1.0, gap=20.0)
        params = extract_newell_params(pair)
        assert abs(params.tau_median - 1.0) <= DT + 1e-9
        max_disp = float(np.max(pair.follower.v)) * 1.0
        assert abs(params.d_median - 20.0) <= max_disp

    def test_identical_colocated_series_zero_tau(self):
        n = 200
        t = DT * np.arange(n)
        v = 10 + np.sin(t)
        x = np.concatenate([[0.0], np.cumsum(v[:-1] * DT)])
        a = np.concatenate([np.diff(v) / DT, [0.0]])
        lead = Trajectory(1, t, x + 1e-6, v, a, validate=False)
        fol = Trajectory(2, t, x, v, a, validate=False)
        from regimecf.trajectory import LeaderFollowerPair
        pair = LeaderFollowerPair(lead, fol)
        params = extract_newell_params(pair)
        assert params.tau_median == 0.0
        assert np.all(params.tau == 0.0)

    def test_newell_roundtrip_recovers_parameters(self):
        cfg = stop_and_go_config(law="newell", n_followers=1, seed=21)
        tset, _ = generate_synthetic(cfg, seed=21)
        pair = extract_pairs(tset)[0]
        params = extract_newell_params(pair)
        assert abs(params.tau_median - 1.2) <= 0.2
        assert abs(params.d_median - 8.0) <= 1.5

    def test_constant_speed_flagged_low_confidence(self):
        n = 200
        t = DT * np.arange(n)
        v = np.full(n, 10.0)
        x = 10.0 * t
        lead = Trajectory(1, t, x + 30.0, v, np.zeros(n), validate=False)
        fol = Trajectory(2, t, x, v, np.zeros(n), validate=False)
        from regimecf.trajectory import LeaderFollowerPair
        pair = LeaderFollowerPair(lead, fol)
        assert extract_newell_params(pair).low_confidence

    def test_short_overlap_rejected(self):
        pair = shifted_pair()

        class Short:
            duration = 2.0
        with pytest.raises(DataError):
            extract_newell_params(Short())


class TestSplitCfFf:
    def test_uniform_1_to_100_percentile(self):
        tau = np.arange(1.0, 101.0)
        labels, threshold = split_cf_ff(tau)
        assert threshold == pytest.approx(85.15)
        ff = [i for i, lab in enumerate(labels) if lab is SectionLabel.FF]
        assert ff == list(range(85, 100))  # values 86..100

    def test_degenerate_all_equal_is_all_cf(self):
        with pytest.warns(UserWarning):
            labels, _ = split_cf_ff(np.full(30, 1.2))
        assert all(lab is SectionLabel.CF for lab in labels)

    def test_few_samples_warns(self):
        with pytest.warns(UserWarning):
            split_cf_ff(np.arange(5.0))

    def test_partition_exhaustive_exclusive(self):
        rng = np.random.default_rng(3)
        tau = rng.exponential(1.0, 200)
        labels, threshold = split_cf_ff(tau)
        for x, lab in zip(tau, labels):
            assert lab is (SectionLabel.CF if x <= threshold
                           else SectionLabel.FF)

    def test_mixture_flags_free_cruisers(self):
        """Followers responding ~1.2 s late vs cruisers echoing ambient
        conditions 8-20 s late: at least 90% of the cruisers land in FF."""
        taus = []
        is_cruiser = []
        k = 0
        for i in range(88):
            pair = shifted_pair(shift_s=float(1.0 + 0.4 * (i % 3) * 0.25),
                                gap=18.0, seed=100 + i)
            taus.append(extract_newell_params(pair).tau_median)
            is_cruiser.append(False)
            k += 1
        for i in range(12):
            pair = shifted_pair(shift_s=float(8.0 + i), gap=60.0,
                                seed=200 + i)
            taus.append(extract_newell_params(pair).tau_median)
            is_cruiser.append(True)
        labels, _ = split_cf_ff(np.array(taus))
        cruiser_ff = sum(1 for lab, c in zip(labels, is_cruiser)
                         if c and lab is SectionLabel.FF)
        assert cruiser_ff >= 0.9 * sum(is_cruiser)


def test_export_alignment_csv(tmp_path):
    pair = shifted_pair()
    params = extract_newell_params(pair)
    out = tmp_path / "align.csv"
    export_alignment(out, pair, params)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "i,j,t_leader,t_follower,tau,d"
    assert len(lines) == len(params.tau) + 1
