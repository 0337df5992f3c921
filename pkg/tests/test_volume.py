import numpy as np
import pytest

from pan4d.errors import ValidationError
from pan4d.kitti_io import Pose
from pan4d.volume import (
    PastScanState,
    VolumeConfig,
    align_scan,
    backfill_skipped,
    build_volume,
    sample_importance,
    sample_strided,
    sample_temporal_decay,
    sample_thing_prop,
    temporal_decay_shares,
)

from conftest import random_rigid

CAR, ROAD = 10, 40


def make_state(scan_index, coords, objectness=None, semantic=None, instance=None):
    n = coords.shape[0]
    return PastScanState(
        scan_index=scan_index,
        coords=np.asarray(coords, dtype=np.float64),
        objectness=np.asarray(
            objectness if objectness is not None else np.zeros(n), dtype=np.float64
        ),
        semantic=np.asarray(
            semantic if semantic is not None else np.full(n, ROAD), dtype=np.int64
        ),
        instance=np.asarray(
            instance if instance is not None else np.zeros(n), dtype=np.int64
        ),
    )


class TestAlignScan:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        np.testing.assert_allclose(align_scan(pts, Pose.identity()), pts)

    def test_translation_lifts_z(self):
        m = np.eye(4)
        m[2, 3] = 5.0
        pts = np.zeros((4, 3))
        out = align_scan(pts, Pose(matrix=m))
        np.testing.assert_allclose(out[:, 2], 5.0)

    def test_matches_homogeneous_matrix_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            m = random_rigid(rng)
            pts = rng.normal(size=(25, 3)) * 15.0
            # oracle: explicit 4x4 product on homogeneous coordinates
            hom = np.hstack([pts, np.ones((25, 1))])
            expected = (m @ hom.T).T[:, :3]
            np.testing.assert_allclose(align_scan(pts, Pose(matrix=m)), expected, atol=1e-9)


class TestThingPropagation:
    def test_selects_exactly_thing_points(self):
        sem = np.array([ROAD] * 7 + [CAR] * 3)
        state = make_state(0, np.zeros((10, 3)), semantic=sem)
        idx = sample_thing_prop(state, {CAR})
        np.testing.assert_array_equal(idx, [7, 8, 9])

    def test_no_thing_points(self):
        state = make_state(0, np.zeros((5, 3)))
        assert sample_thing_prop(state, {CAR}).size == 0

    def test_budget_subsamples_deterministically(self):
        sem = np.array([CAR, ROAD, CAR, CAR])
        state = make_state(0, np.zeros((4, 3)), semantic=sem)
        a = sample_thing_prop(state, {CAR}, budget=2, rng=np.random.default_rng(9))
        b = sample_thing_prop(state, {CAR}, budget=2, rng=np.random.default_rng(9))
        assert a.size == 2
        np.testing.assert_array_equal(a, b)
        assert set(a) <= {0, 2, 3}

    def test_empty_thing_set_rejected(self):
        state = make_state(0, np.zeros((5, 3)))
        with pytest.raises(ValidationError):
            sample_thing_prop(state, set())


class TestImportanceSampling:
    def test_one_hot_weight_is_always_picked(self):
        obj = np.zeros(10)
        obj[7] = 1.0
        state = make_state(0, np.zeros((10, 3)), objectness=obj)
        idx = sample_importance(state, fraction=0.1, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(idx, [7])

    def test_count_rule(self):
        state = make_state(0, np.zeros((10, 3)), objectness=np.full(10, 0.5))
        idx = sample_importance(state, fraction=0.10, rng=np.random.default_rng(1))
        assert idx.size == 1

    def test_all_zero_objectness_falls_back_to_uniform(self):
        state = make_state(0, np.zeros((20, 3)))
        idx = sample_importance(state, fraction=0.25, rng=np.random.default_rng(2))
        assert idx.size == 5

    def test_uniform_weights_empirically_uniform(self):
        # Monte-Carlo frequency oracle: with uniform objectness each index is
        # selected with probability k/N; check counts within 3 sigma.
        n, fraction, trials = 10, 0.3, 10_000
        k = int(np.ceil(fraction * n))
        state = make_state(0, np.zeros((n, 3)), objectness=np.full(n, 0.4))
        counts = np.zeros(n)
        for t in range(trials):
            idx = sample_importance(state, fraction, np.random.default_rng(t))
            counts[idx] += 1
        p = k / n
        sigma = np.sqrt(trials * p * (1 - p))
        assert np.abs(counts - trials * p).max() < 3 * sigma

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(123)
        obj = rng.uniform(size=100)
        state = make_state(0, np.zeros((100, 3)), objectness=obj)
        a = sample_importance(state, 0.1, np.random.default_rng(42))
        b = sample_importance(state, 0.1, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestTemporalDecay:
    def test_softmax_shares_tau3(self):
        # oracle: w_i = e^i / (e^1 + e^2); 100 * w = (26.894, 73.106)
        w = np.exp([1.0, 2.0])
        w /= w.sum()
        np.testing.assert_allclose(w, [0.26894142, 0.73105858], atol=1e-8)
        shares = temporal_decay_shares(2, 100)
        np.testing.assert_array_equal(shares, [27, 73])
        assert shares.sum() == 100

    def test_tau2_single_scan_gets_everything(self):
        np.testing.assert_array_equal(temporal_decay_shares(1, 50), [50])

    def test_zero_budget(self):
        states = [make_state(0, np.zeros((10, 3))), make_state(1, np.zeros((10, 3)))]
        picks = sample_temporal_decay(states, 0, np.random.default_rng(0))
        assert all(p.size == 0 for p in picks)

    def test_budget_beyond_available_takes_all(self):
        states = [make_state(0, np.zeros((3, 3))), make_state(1, np.zeros((4, 3)))]
        picks = sample_temporal_decay(states, 1000, np.random.default_rng(0))
        assert picks[0].size == 3
        assert picks[1].size == 4

    def test_nearest_scan_gets_more(self):
        states = [make_state(i, np.zeros((100, 3))) for i in range(3)]
        picks = sample_temporal_decay(states, 60, np.random.default_rng(0))
        assert picks[0].size < picks[1].size < picks[2].size


class TestStridedSampling:
    def test_tau4_selects_offsets_one_and_three(self):
        # past positions 0,1,2 correspond to offsets i = 1,2,3; stride 2
        # keeps i = 1,3 and skips i = 2
        states = [make_state(i, np.zeros((10, 3))) for i in range(3)]
        sel, skipped = sample_strided(states, stride=2, fraction=0.5,
                                      rng=np.random.default_rng(0))
        assert sorted(sel) == [0, 2]
        assert skipped == [1]

    def test_tau2_nothing_skipped(self):
        states = [make_state(0, np.zeros((10, 3)))]
        sel, skipped = sample_strided(states, rng=np.random.default_rng(0))
        assert sorted(sel) == [0]
        assert skipped == []

    def test_stride_beyond_window_keeps_only_oldest(self):
        states = [make_state(i, np.zeros((10, 3))) for i in range(3)]
        sel, skipped = sample_strided(states, stride=5, fraction=0.5,
                                      rng=np.random.default_rng(0))
        assert sorted(sel) == [0]
        assert skipped == [1, 2]


class TestBackfill:
    def test_coincident_point_inherits(self):
        inc = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        origin = np.array([[0, 0], [0, 1]])
        sem = np.array([CAR, ROAD])
        inst = np.array([4, 0])
        got_sem, got_inst = backfill_skipped(inc, origin, sem, inst,
                                             np.array([[0.0, 0.0, 0.0]]))
        assert got_sem[0] == CAR
        assert got_inst[0] == 4

    def test_equidistant_tie_lowest_origin_wins(self):
        inc = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        origin = np.array([[2, 5], [1, 9]])  # second point has lower scan index
        sem = np.array([CAR, ROAD])
        inst = np.array([1, 2])
        got_sem, got_inst = backfill_skipped(inc, origin, sem, inst,
                                             np.array([[0.0, 0.0, 0.0]]))
        assert got_sem[0] == ROAD
        assert got_inst[0] == 2

    def test_empty_volume_rejected(self):
        with pytest.raises(ValidationError):
            backfill_skipped(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64),
                             np.array([]), np.array([]), np.zeros((1, 3)))

    def test_matches_brute_force_oracle(self):
        # oracle: all-pairs squared distances, ties by (scan, point)
        rng = np.random.default_rng(17)
        inc = rng.normal(size=(400, 3)) * 5.0
        origin = np.column_stack([rng.integers(0, 4, 400), rng.permutation(400)])
        sem = rng.integers(0, 50, 400)
        inst = rng.integers(0, 6, 400)
        query = rng.normal(size=(200, 3)) * 5.0

        got_sem, got_inst = backfill_skipped(inc, origin, sem, inst, query)
        for q in range(query.shape[0]):
            diff = inc - query[q]
            d2 = np.einsum("ij,ij->i", diff, diff)
            tied = np.flatnonzero(d2 == d2.min())
            best = tied[np.lexsort((origin[tied, 1], origin[tied, 0]))[0]]
            assert got_sem[q] == sem[best]
            assert got_inst[q] == inst[best]


class TestBuildVolume:
    def _states(self, rng, t_first, count, n=1000):
        return [
            make_state(
                t_first + i,
                rng.normal(size=(n, 3)),
                objectness=rng.uniform(size=n),
                semantic=rng.choice([CAR, ROAD], size=n),
            )
            for i in range(count)
        ]

    def test_current_scan_always_complete(self):
        rng = np.random.default_rng(3)
        for strategy in ("thing", "importance", "decay", "stride"):
            cfg = VolumeConfig(strategy=strategy, tau=4)
            states = self._states(rng, 0, 3, n=500)
            cur = rng.normal(size=(777, 3))
            vol = build_volume(cur, 3, states, cfg, np.random.default_rng(0), {CAR})
            assert vol.n_current == 777
            assert vol.is_current.sum() == 777
            np.testing.assert_allclose(vol.coords[vol.is_current, :3], cur)

    def test_memory_proxy_importance_tau4(self):
        # 1 + 3 * 0.10 = 1.3x a single scan on uniform synthetic scans
        rng = np.random.default_rng(4)
        cfg = VolumeConfig(strategy="importance", tau=4, fraction=0.10)
        states = self._states(rng, 0, 3, n=1000)
        vol = build_volume(rng.normal(size=(1000, 3)), 3, states, cfg,
                           np.random.default_rng(0))
        assert len(vol) <= 1.3 * 1000

    def test_time_coordinate_slots(self):
        rng = np.random.default_rng(5)
        cfg = VolumeConfig(strategy="importance", tau=4, time_scale=0.5)
        states = self._states(rng, 0, 3, n=100)
        vol = build_volume(rng.normal(size=(100, 3)), 3, states, cfg,
                           np.random.default_rng(0))
        slots = np.unique(vol.coords[:, 3])
        assert set(slots) <= {0.0, 0.5, 1.0, 1.5}
        assert vol.coords[vol.is_current, 3].min() == 1.5

    def test_truncated_window_at_sequence_start(self):
        rng = np.random.default_rng(6)
        cfg = VolumeConfig(strategy="importance", tau=4)
        states = self._states(rng, 0, 1, n=100)  # only scan 0 exists before t=1
        vol = build_volume(rng.normal(size=(100, 3)), 1, states, cfg,
                           np.random.default_rng(0))
        assert vol.window == (0, 1)
        assert vol.coords[vol.is_current, 3].max() == 1.0

    def test_origin_pairs_unique(self):
        rng = np.random.default_rng(7)
        cfg = VolumeConfig(strategy="decay", tau=3)
        states = self._states(rng, 0, 2, n=300)
        vol = build_volume(rng.normal(size=(300, 3)), 2, states, cfg,
                           np.random.default_rng(1))
        packed = vol.origin[:, 0] * 10_000_000 + vol.origin[:, 1]
        assert np.unique(packed).size == len(vol)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(8)
        cfg = VolumeConfig(strategy="importance", tau=3)
        states = self._states(rng, 0, 2, n=200)
        cur = rng.normal(size=(200, 3))
        a = build_volume(cur, 2, states, cfg, np.random.default_rng(5))
        b = build_volume(cur, 2, states, cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a.origin, b.origin)

    def test_inconsistent_past_states_rejected(self):
        rng = np.random.default_rng(9)
        cfg = VolumeConfig(strategy="importance", tau=4)
        states = self._states(rng, 0, 2, n=50)
        with pytest.raises(ValidationError):
            build_volume(rng.normal(size=(50, 3)), 5, states, cfg,
                         np.random.default_rng(0))

    def test_base_strategy_has_no_past(self):
        rng = np.random.default_rng(10)
        cfg = VolumeConfig(strategy="base", tau=1)
        vol = build_volume(rng.normal(size=(60, 3)), 4, [], cfg,
                           np.random.default_rng(0))
        assert len(vol) == 60
        assert vol.window == (4, 4)

    def test_thing_strategy_honors_total_budget(self):
        rng = np.random.default_rng(11)
        cfg = VolumeConfig(strategy="thing", tau=3, max_points=700)
        states = [
            make_state(i, rng.normal(size=(400, 3)),
                       semantic=np.full(400, CAR)) for i in range(2)
        ]
        vol = build_volume(rng.normal(size=(500, 3)), 2, states, cfg,
                           np.random.default_rng(0), thing_classes={CAR})
        assert len(vol) <= 700
        assert vol.n_current == 500  # the budget never shrinks the newest scan

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            VolumeConfig(strategy="warp").validate()
        with pytest.raises(ValidationError):
            VolumeConfig(strategy="importance", fraction=0.0).validate()
        with pytest.raises(ValidationError):
            VolumeConfig(strategy="base", tau=2).validate()
