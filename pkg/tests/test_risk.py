import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import close, random_pairs, sampled_encounters, well_conditioned
from strategies import road_users
from v2vru.risk import (DEFAULT_COLLISION_RADII, DangerLevel, RequirementProfile, WarningPolicy, assess_arrays,
                        assess_pair, classify, closest_approach, closest_approach_vectors, pair_key,
                        predict_trajectory, required_range, time_to_collision, ttc_vectors, warning_threshold)
from v2vru.scenario.world import step
from v2vru.state import MotionState, RoadUserState, VruProfile

P, V, C, M = VruProfile.PEDESTRIAN, VruProfile.VEHICLE, VruProfile.CYCLIST, VruProfile.MOTORCYCLIST


def ru(pos, vel, profile=P, pseudonym=1, motion=None):
    if motion is None:
        motion = MotionState.DRIVING if profile is V else MotionState.WALKING
    return RoadUserState(pseudonym, pseudonym, profile, motion, pos, vel)


class TestExamples:
    def test_crossing_cpa(self):
        a = ru((0.0, -20.0), (0.0, 10.0), pseudonym=1)
        b = ru((-30.0, 0.0), (10.0, 0.0), V, pseudonym=2)
        t, d = closest_approach(a, b)
        assert t == pytest.approx(2.5, abs=1e-9)
        assert d == pytest.approx(7.0711, abs=1e-4)
        assert d == pytest.approx(5 * math.sqrt(2), abs=1e-6)
        # d_min 7.07 never meets R = 2
        assert time_to_collision(a, b, 2.0) is None

    def test_crossing_cpa_matches_sampling(self):
        _, d_fine, _, _ = sampled_encounters(np.array([[-30.0, 20.0, 10.0, -10.0, 2.0]]), 10.0)
        t, d = closest_approach_vectors(-30.0, 20.0, 10.0, -10.0)
        assert d_fine[0] == pytest.approx(d, abs=1e-6)

    def test_coincident(self):
        assert closest_approach(ru((3.0, 4.0), (1.0, 0.0)), ru((3.0, 4.0), (1.0, 0.0))) == (0.0, 0.0)

    def test_receding_is_clamped(self):
        t, d = closest_approach(ru((0.0, 0.0), (0.0, 0.0)), ru((10.0, 0.0), (1.0, 0.0), V))
        assert (t, d) == (0.0, 10.0)

    def test_vehicle_approach_ttc(self):
        ped = ru((0.0, 0.0), (0.0, 0.0), motion=MotionState.STANDING)
        veh = ru((50.0, 0.0), (-12.5, 0.0), V, pseudonym=2)
        ttc = time_to_collision(ped, veh, 1.0)
        assert ttc == pytest.approx(3.92, abs=1e-12)
        policy = WarningPolicy()
        assert classify(ttc, 4.0, 0.0, 1.0, policy) is DangerLevel.WARNING

    def test_parallel_never_collides(self):
        assert time_to_collision(ru((0.0, 0.0), (5.0, 0.0)), ru((0.0, 10.0), (5.0, 0.0), V), 1.5) is None

    def test_overlapping_is_zero(self):
        assert time_to_collision(ru((0.0, 0.0), (0.0, 0.0)), ru((0.5, 0.0), (9.0, 0.0), V), 1.0) == 0.0

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            time_to_collision(ru((0, 0), (0, 0)), ru((1, 0), (0, 0)), 0.0)


class TestThreshold:
    def test_default(self):
        assert warning_threshold(WarningPolicy()) == pytest.approx(4.3)

    def test_zero(self):
        assert warning_threshold(WarningPolicy(0, 0, 0, 0)) == 0.0

    def test_warning_separation(self):
        r = DEFAULT_COLLISION_RADII[pair_key(V, P)]
        sep = warning_threshold(WarningPolicy()) * 12.5 + r
        assert sep == pytest.approx(53.75 + r)
        assert sep <= RequirementProfile().range_pedestrian_m

    @pytest.mark.parametrize("bad", [dict(reaction_s=-0.1), dict(margin_s=-1),
                                     dict(collision_radius_m={(V, P): 0.0})])
    def test_invalid_policy(self, bad):
        with pytest.raises(ValueError):
            WarningPolicy(**bad)


class TestRequirements:
    @pytest.mark.parametrize("profile,rng", [(P, 75), (C, 150), (M, 300), (VruProfile.INFRASTRUCTURE, 25),
                                             (V, 300)])
    def test_required_range(self, profile, rng):
        assert required_range(profile) == rng

    def test_reference_values(self):
        r = RequirementProfile()
        assert (r.latency_max_ms, r.max_frequency_hz, r.max_users_per_zone, r.zone_radius_m) == (300, 10, 5000, 300)
        assert (r.positioning_sigma_max_m, r.vam_max_bytes, r.denm_max_bytes) == (0.5, 300, 1200)

    def test_non_positive_rejected(self):
        with pytest.raises(ValueError):
            RequirementProfile(latency_max_ms=0)

    def test_danger_is_ordered(self):
        assert DangerLevel.NONE < DangerLevel.AWARENESS < DangerLevel.WARNING < DangerLevel.IMMINENT


class TestPrediction:
    def test_linear(self):
        traj = predict_trajectory(ru((0.0, 0.0), (1.0, 0.0)), 5.0)
        assert traj.at(5.0) == (5.0, 0.0)

    def test_standing_holds_position(self):
        traj = predict_trajectory(ru((2.0, 3.0), (1.0, 1.0), motion=MotionState.STANDING), 5.0)
        assert traj.at(0.0) == traj.at(4.0) == (2.0, 3.0)

    def test_matches_world_step(self):
        s = ru((-4.0, 7.0), (1.2, -0.4))
        traj = predict_trajectory(s, 5.0)
        stepped = s
        for _ in range(25):
            stepped = step(stepped, 0.1)
        assert stepped.position_m == pytest.approx(traj.at(2.5), abs=1e-9)

    def test_horizon_positive(self):
        with pytest.raises(ValueError):
            predict_trajectory(ru((0, 0), (0, 0)), 0.0)


class TestAssessment:
    def test_symmetric(self):
        a = ru((0.0, -15.0), (0.0, 1.4), P, 7)
        b = ru((-60.0, 0.0), (12.5, 0.0), V, 3)
        ab, ba = assess_pair(a, b, WarningPolicy()), assess_pair(b, a, WarningPolicy())
        assert ab == ba
        assert ab.pair == (3, 7)

    def test_far_miss_is_none(self):
        a = ru((0.0, 0.0), (0.0, 0.0), motion=MotionState.STANDING)
        b = ru((-100.0, 40.0), (10.0, 0.0), V, 2)
        assert assess_pair(a, b, WarningPolicy()).danger is DangerLevel.NONE

    def test_near_miss_is_awareness(self):
        a = ru((0.0, 0.0), (0.0, 0.0), motion=MotionState.STANDING)
        b = ru((-30.0, 2.5), (10.0, 0.0), V, 2)
        r = assess_pair(a, b, WarningPolicy())
        assert r.ttc_s is None and r.danger is DangerLevel.AWARENESS

    def test_unknown_pair_radius(self):
        with pytest.raises(ValueError):
            assess_pair(ru((0, 0), (0, 0)), ru((1, 0), (0, 0), P, 2), WarningPolicy())

    @pytest.mark.parametrize("speed", [5.0, 12.5, 25.0])
    def test_head_on_danger_is_monotone(self, speed):
        policy = WarningPolicy()
        ped = ru((0.0, 0.0), (0.0, 0.0), motion=MotionState.STANDING)
        levels = []
        for k in range(100_000):
            x = 200.0 - speed * k * 0.01
            if x <= 1.5:
                break
            levels.append(assess_pair(ped, ru((x, 0.0), (-speed, 0.0), V, 2), policy).danger)
        assert levels == sorted(levels)
        assert levels[-1] is DangerLevel.IMMINENT

    @settings(max_examples=300)
    @given(road_users((P,)), road_users((V,)))
    def test_invariants_of_assessment(self, a, b):
        r = assess_pair(a, b, WarningPolicy())
        assert r.d_min_m >= 0 and r.t_cpa_s >= 0
        if r.ttc_s is not None:
            assert r.ttc_s >= 0
            assert r.d_min_m < r.radius_m + 1e-9

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        pairs = random_pairs(rng, 2000)
        policy = WarningPolicy()
        ttc, t_cpa, d_min, danger = assess_arrays(*(pairs[:, i] for i in range(5)), policy)
        for k, (rx, ry, vx, vy, rad) in enumerate(pairs):
            ref_t = ttc_vectors(rx, ry, vx, vy, rad)
            tc, dm = closest_approach_vectors(rx, ry, vx, vy)
            assert (ref_t is None) == bool(np.isnan(ttc[k]))
            if ref_t is not None:
                assert ttc[k] == pytest.approx(ref_t, rel=1e-12, abs=1e-12)
            assert t_cpa[k] == pytest.approx(tc, rel=1e-12, abs=1e-12)
            assert d_min[k] == pytest.approx(dm, rel=1e-12, abs=1e-12)
            assert danger[k] == classify(ref_t, tc, dm, rad, policy)


class TestOracleAgreement:
    def test_sampled_pairs(self):
        pairs = random_pairs(np.random.default_rng(11), 1000)
        t_min, d_fine, t_first, d_coarse = sampled_encounters(pairs)
        for k, (rx, ry, vx, vy, rad) in enumerate(pairs):
            tc, dm = closest_approach_vectors(rx, ry, vx, vy)
            assert abs(tc - t_min[k]) <= 0.002
            assert abs(dm - d_fine[k]) <= 1e-3
            assert dm <= d_coarse[k] + 1e-9
            ttc = ttc_vectors(rx, ry, vx, vy, rad)
            if np.isnan(t_first[k]):
                if ttc is not None:
                    # only a grazing contact shorter than one sample can slip between samples
                    assert rad - dm <= math.hypot(vx, vy) * 0.001
            else:
                assert ttc is not None
                assert ttc <= t_first[k] + 1e-12
                assert t_first[k] - ttc <= 0.002
                if ttc > 0:
                    assert math.hypot(rx + vx * ttc, ry + vy * ttc) == pytest.approx(rad, abs=1e-6)


rel = st.floats(-100, 100)
vel = st.floats(-20, 20)
radius = st.floats(0.5, 3.0)


class TestInvariance:
    @settings(max_examples=500)
    @given(rel, rel, vel, vel, vel, vel, radius)
    def test_symmetry(self, ax, ay, bx, by, avx, avy, r):
        assume(well_conditioned(bx - ax, by - ay, -avy - avx, avx - avy, r))
        a = ru((ax, ay), (avx, avy), P, 1)
        b = ru((bx, by), (-avy, avx), V, 2)
        assert closest_approach(a, b) == pytest.approx(closest_approach(b, a), rel=1e-12, abs=1e-12)
        t1, t2 = time_to_collision(a, b, r), time_to_collision(b, a, r)
        assert close(t1, t2, 1.0)

    @settings(max_examples=500)
    @given(rel, rel, vel, vel, radius, st.floats(0, 2 * math.pi), rel, rel)
    def test_rigid_motion(self, rx, ry, vx, vy, r, theta, tx, ty):
        assume(math.hypot(vx, vy) > 0.1 and well_conditioned(rx, ry, vx, vy, r))
        c, s = math.cos(theta), math.sin(theta)
        rot = lambda x, y: (c * x - s * y, s * x + c * y)  # noqa: E731
        a0, b0 = ru((0.0, 0.0), (0.0, 0.0), P, 1), ru((rx, ry), (vx, vy), V, 2)
        p = rot(rx, ry)
        a1 = ru((tx * 10, ty * 10), (0.0, 0.0), P, 1)
        b1 = ru((tx * 10 + p[0], ty * 10 + p[1]), rot(vx, vy), V, 2)
        scale_d = math.hypot(rx, ry) + 1.0
        scale_t = scale_d / math.hypot(vx, vy)
        t0, d0 = closest_approach(a0, b0)
        t1, d1 = closest_approach(a1, b1)
        assert close(t0, t1, scale_t) and close(d0, d1, scale_d)
        assert close(time_to_collision(a0, b0, r), time_to_collision(a1, b1, r), scale_t)

    @settings(max_examples=500)
    @given(rel, rel, vel, vel, vel, vel, radius)
    def test_common_velocity(self, rx, ry, vx, vy, wx, wy, r):
        assume(math.hypot(vx, vy) > 0.1 and well_conditioned(rx, ry, vx, vy, r))
        a0, b0 = ru((0.0, 0.0), (0.0, 0.0), P, 1), ru((rx, ry), (vx, vy), V, 2)
        a1, b1 = ru((0.0, 0.0), (wx, wy), P, 1), ru((rx, ry), (vx + wx, vy + wy), V, 2)
        scale_d = math.hypot(rx, ry) + 1.0
        # the common offset itself is rounded, so scale by the largest speed involved
        speed = math.hypot(vx, vy)
        scale_t = scale_d / speed * (1 + math.hypot(wx, wy) / speed)
        t0, d0 = closest_approach(a0, b0)
        t1, d1 = closest_approach(a1, b1)
        assert close(d0, d1, scale_d * (1 + math.hypot(wx, wy) / speed))
        assert close(time_to_collision(a0, b0, r), time_to_collision(a1, b1, r), scale_t)
