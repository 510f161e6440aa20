import json
import math
from collections import defaultdict

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2vru.messages import decode_denm, decode_vam
from v2vru.netsim import LinkLatencyModel, PipelineMode
from v2vru.netsim.latency import EDGE_TO_EDGE, EDGE_TO_SERVER, SERVER_TO_EDGE
from v2vru.risk import DangerLevel, WarningPolicy, time_to_collision
from v2vru.scenario import (BUILTIN_NAMES, ActorSpec, CollisionDetector, ConfigError, MotionScript, ScenarioConfig,
                            VelocitySegment, Waypoint, builtin_scenario, config_from_dict, config_to_dict,
                            detect_ground_truth_collisions, dump_scenario, load_scenario, los_crossing_variants,
                            observe, run, scenario_schema, step, tick_noise)
from v2vru.state import MotionState, RoadUserState, VruProfile
from v2vru.trace import (DenmPublished, GroundTruthCollision, ScenarioEnd, ScenarioStart, StateSample,
                         VamPublished, WarningPresented)

P, V, C = VruProfile.PEDESTRIAN, VruProfile.VEHICLE, VruProfile.CYCLIST
WALK, DRIVE, STAND = MotionState.WALKING, MotionState.DRIVING, MotionState.STANDING
SMALL_BUILTINS = [n for n in BUILTIN_NAMES if n != "intersection_load"]


def cruise(profile, start, vel, until=10_000, motion=None):
    motion = motion or (DRIVE if profile is V else WALK)
    return ActorSpec(profile, start, (VelocitySegment(until, vel, motion),))


def warnings_by_pair(trace):
    """Map each presented Warning+ to its DENM's target pair, in actor ids."""
    actor_of = {}
    for e in trace.of_type(VamPublished):
        actor_of[e.envelope.sender] = e.actor_id
    denm_targets = {}
    for e in trace.of_type(DenmPublished):
        d = decode_denm(e.envelope.payload)
        denm_targets[(e.envelope.sender, d.event_id)] = tuple(sorted(actor_of[p] for p in d.target_pseudonyms))
    out = defaultdict(list)
    for w in trace.of_type(WarningPresented):
        if w.danger >= DangerLevel.WARNING:
            out[denm_targets[(w.sender, w.event_id)]].append(w)
    return out


class TestConfig:
    def test_builtins_validate(self):
        for name in BUILTIN_NAMES:
            builtin_scenario(name).validate()

    def test_unknown_builtin(self):
        with pytest.raises(KeyError):
            builtin_scenario("nope")

    def test_los_crossing_geometry(self):
        cfg = builtin_scenario("los_crossing")
        veh, ped = cfg.actors
        assert veh.profile is V and ped.profile is P
        assert math.hypot(*veh.script[0].velocity) == pytest.approx(45 / 3.6)
        sv, sp = MotionScript(V, veh.start, veh.script), MotionScript(P, ped.start, ped.script)
        assert sv.position_at(8000) == pytest.approx((0.0, 0.0), abs=1e-9)
        assert sp.position_at(8000) == pytest.approx((0.0, 0.0), abs=1e-9)

    def test_intersection_load_population(self):
        cfg = builtin_scenario("intersection_load")
        assert len(cfg.actors) == 5000
        assert max(math.hypot(*a.start) for a in cfg.actors) <= 300.0

    @pytest.mark.parametrize("change", [dict(tick_ms=30), dict(duration_s=0), dict(noise_sigma_m=-1),
                                        dict(publish_rate_hz=3), dict(cell_size_m=0),
                                        dict(latency={"bogus": LinkLatencyModel.fixed(1)}),
                                        dict(actors=(cruise(P, (0, 0), (5.0, 0.0)),))])
    def test_invalid(self, change):
        with pytest.raises(ConfigError):
            ScenarioConfig(name="x", duration_s=5).with_(**change).validate()

    def test_speed_caps_configurable(self):
        cfg = ScenarioConfig(name="x", duration_s=5, actors=(cruise(P, (0, 0), (5.0, 0.0)),),
                             speed_caps={P: 6.0})
        cfg.validate()

    @pytest.mark.parametrize("name", BUILTIN_NAMES)
    def test_json_round_trip(self, name):
        cfg = builtin_scenario(name)
        d = config_to_dict(cfg)
        back = config_from_dict(json.loads(json.dumps(d)))
        assert back == cfg
        assert config_to_dict(back) == d

    @pytest.mark.parametrize("name", SMALL_BUILTINS)
    def test_emitted_json_matches_schema(self, name):
        jsonschema.validate(json.loads(dump_scenario(builtin_scenario(name))), scenario_schema())

    @pytest.mark.parametrize("path,extra", [
        ((), {"colour": "red"}),
        (("origin",), {"alt": 1}),
        (("policy",), {"gain": 2}),
        (("latency", "direct"), {"jitter": 1}),
        (("actors", 0), {"speed": 3}),
        (("actors", 0, "script", 0), {"heading": 90}),
    ])
    def test_unknown_fields_rejected(self, path, extra):
        d = config_to_dict(builtin_scenario("los_crossing"))
        node = d
        for key in path:
            node = node[key]
        node.update(extra)
        with pytest.raises(ConfigError):
            config_from_dict(d)
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(d, scenario_schema())

    def test_missing_required(self):
        with pytest.raises(ConfigError):
            config_from_dict({"name": "x"})

    def test_bad_radius_key(self):
        d = config_to_dict(builtin_scenario("los_crossing"))
        d["policy"]["collision_radius_m"] = {"pedestrian-vehicle": 1.0}
        with pytest.raises(ConfigError):
            config_from_dict(d)

    def test_load_and_dump_files(self, tmp_path):
        cfg = builtin_scenario("shared_road")
        path = tmp_path / "s.json"
        with open(path, "w") as fp:
            dump_scenario(cfg, fp)
        assert load_scenario(path) == cfg
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_scenario(path)

    def test_variants(self):
        vs = los_crossing_variants(6)
        assert len({v.seed for v in vs}) == 6
        assert [v.name for v in vs][:2] == ["los_crossing_variant_0", "los_crossing_variant_1"]
        assert los_crossing_variants(6) == vs


class TestMotion:
    def test_waypoints(self):
        s = MotionScript(P, (0.0, 0.0), (Waypoint(2000, (2.0, 0.0), WALK), Waypoint(4000, (2.0, 2.0), WALK)))
        assert s.position_at(1000) == (1.0, 0.0)
        assert s.position_at(3000) == (2.0, 1.0)
        pos, vel, motion = s.kinematics_at(5000)
        assert pos == (2.0, 2.0) and vel == (0.0, 0.0) and motion is STAND

    def test_vehicle_rests_idle(self):
        s = MotionScript(V, (0.0, 0.0), (VelocitySegment(1000, (10.0, 0.0), DRIVE),))
        assert s.kinematics_at(2000)[2] is MotionState.IDLE

    def test_non_increasing_times(self):
        with pytest.raises(ConfigError):
            MotionScript(P, (0, 0), (VelocitySegment(1000, (1, 0), WALK), VelocitySegment(1000, (0, 1), WALK)))


class TestStep:
    def test_linear(self):
        s = RoadUserState(0, 0, P, WALK, (0.0, 0.0), (1.0, 0.0))
        assert step(s, 0.1).position_m == (0.1, 0.0)

    def test_zero_dt(self):
        s = RoadUserState(0, 0, P, WALK, (3.0, 4.0), (1.0, 0.0), 700)
        assert step(s, 0.0) is s

    def test_negative_dt(self):
        with pytest.raises(ValueError):
            step(RoadUserState(0, 0, P, WALK, (0, 0), (1, 0)), -0.1)

    def test_scripted_steps_have_no_drift(self):
        script = MotionScript(C, (1.3, -7.7), (VelocitySegment(20_000, (4.1, 0.3), MotionState.CYCLING),))
        s = script.state_at(0)
        for _ in range(100):
            s = step(s, 0.1, script)
        assert s.position_m == (1.3 + 4.1 * 10.0, -7.7 + 0.3 * 10.0)
        assert s.timestamp_ms == 10_000

    def test_switches_at_boundary(self):
        script = MotionScript(P, (0.0, 0.0), (VelocitySegment(1000, (1.0, 0.0), WALK),
                                              VelocitySegment(2000, (0.0, 2.0), MotionState.RUNNING)))
        s = script.state_at(0)
        for _ in range(15):
            s = step(s, 0.1, script)
        assert s.position_m == pytest.approx((1.0, 1.0))
        assert s.motion_state is MotionState.RUNNING and s.velocity_ms == (0.0, 2.0)


class TestObserve:
    BASE = RoadUserState(0, 0, P, WALK, (10.0, -4.0), (1.0, 0.5))

    def test_zero_sigma(self):
        assert observe(self.BASE, 0.0, np.random.default_rng(0)).position_m == self.BASE.position_m

    def test_sigma_five_statistics(self):
        rng = np.random.default_rng(2024)
        obs = [observe(self.BASE, 5.0, rng) for _ in range(10_000)]
        xs = np.array([o.position_m for o in obs])
        std = xs.std(axis=0, ddof=1)
        assert abs(std[0] - 5.0) <= 0.2 and abs(std[1] - 5.0) <= 0.2
        assert all(o.velocity_ms == self.BASE.velocity_ms and o.sigma_m == 5.0 for o in obs[:100])

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            observe(self.BASE, -1.0, np.random.default_rng(0))

    def test_tick_noise_deterministic(self):
        a = tick_noise(7, 12, 5)
        assert np.array_equal(a, tick_noise(7, 12, 5))
        assert not np.array_equal(a, tick_noise(7, 13, 5))
        # an actor's draw does not depend on how many actors follow it
        assert np.array_equal(tick_noise(7, 12, 3), a[:3])


def history(scripts, duration_ms, tick_ms=100):
    snaps = []
    for t in range(0, duration_ms + 1, tick_ms):
        snaps.append([s.state_at(t, actor_id=i) for i, s in enumerate(scripts)])
    return snaps


class TestGroundTruth:
    def test_head_on(self):
        ped = MotionScript(P, (0.0, 0.0), (VelocitySegment(10_000, (0.0, 0.0), STAND),))
        veh = MotionScript(V, (50.0, 0.0), (VelocitySegment(10_000, (-12.5, 0.0), DRIVE),))
        [(pair, t)] = detect_ground_truth_collisions(history([ped, veh], 10_000))
        assert pair == (0, 1)
        assert t == pytest.approx(3880.0, abs=1e-3)  # 1e-6 s
        ttc = time_to_collision(ped.state_at(0), veh.state_at(0), 1.5)
        assert t / 1000.0 == pytest.approx(ttc, abs=1e-3)

    def test_parallel(self):
        a = MotionScript(P, (0.0, 0.0), (VelocitySegment(10_000, (1.0, 0.0), WALK),))
        b = MotionScript(V, (0.0, 3.0), (VelocitySegment(10_000, (1.0, 0.0), DRIVE),))
        assert detect_ground_truth_collisions(history([a, b], 10_000)) == []

    def test_empty(self):
        assert detect_ground_truth_collisions([]) == []

    def test_reported_once(self):
        a = MotionScript(P, (0.0, 0.0), (VelocitySegment(10_000, (0.0, 0.0), STAND),))
        b = MotionScript(V, (-10.0, 0.0), (VelocitySegment(10_000, (1.0, 0.0), DRIVE),))
        assert len(detect_ground_truth_collisions(history([a, b], 10_000))) == 1

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-60, 60), st.floats(-60, 60), st.floats(-15, 15), st.floats(-15, 15), st.floats(-2, 2),
           st.floats(-2, 2))
    def test_matches_ttc(self, x, y, vx, vy, px, py):
        a = RoadUserState(0, 0, P, WALK, (0.0, 0.0), (px, py))
        b = RoadUserState(1, 1, V, DRIVE, (x, y), (vx, vy))
        if math.hypot(x, y) < 1.5:
            return
        sa = MotionScript(P, a.position_m, (VelocitySegment(10_000, a.velocity_ms, WALK),))
        sb = MotionScript(V, b.position_m, (VelocitySegment(10_000, b.velocity_ms, DRIVE),))
        got = detect_ground_truth_collisions(history([sa, sb], 10_000))
        ttc = time_to_collision(a, b, 1.5)
        if ttc is None or ttc > 10.0:
            assert got == []
        elif ttc < 9.99:
            assert len(got) == 1
            assert got[0][1] / 1000.0 == pytest.approx(ttc, abs=1e-3)

    def test_detector_matches_sampling_oracle(self):
        rng = np.random.default_rng(9)
        n = 40
        profiles = [V if k % 3 == 0 else P for k in range(n)]
        p0 = rng.uniform(-40, 40, size=(n, 2))
        vel = rng.uniform(-8, 8, size=(n, 2))
        det = CollisionDetector(profiles)
        got = {}
        for k in range(50):
            t0, t1 = k * 100.0, (k + 1) * 100.0
            for i, j, when in det.check(t0, p0 + vel * t0 / 1000, t1, p0 + vel * t1 / 1000):
                got[(i, j)] = when
        # 1 ms brute force over every pair
        t = np.arange(0, 5001) / 1000.0
        expect = {}
        for i in range(n):
            for j in range(i + 1, n):
                if (profiles[i] is V) == (profiles[j] is V):
                    continue
                d = np.hypot(*(p0[j] - p0[i] + np.outer(t, vel[j] - vel[i])).T)
                hit = np.nonzero(d < 1.5)[0]
                if hit.size:
                    expect[(i, j)] = hit[0]
        assert set(got) == set(expect)
        for key, when in got.items():
            assert when <= expect[key] + 1e-9 and expect[key] - when <= 1.0


class TestRun:
    def test_zero_actors(self):
        tr = run(ScenarioConfig(name="empty", duration_s=2.0))
        assert [type(e) for e in tr] == [ScenarioStart, ScenarioEnd]

    def test_los_crossing_warns_both_before_collision(self):
        tr = run(builtin_scenario("los_crossing"))
        [gt] = tr.of_type(GroundTruthCollision)
        ws = warnings_by_pair(tr)[(0, 1)]
        assert {w.actor_id for w in ws if w.time < gt.time} == {0, 1}

    @pytest.mark.parametrize("mode", list(PipelineMode))
    def test_deterministic(self, mode):
        cfg = builtin_scenario("shared_road").with_(pipeline=mode, noise_sigma_m=1.0)
        assert run(cfg).to_bytes() == run(cfg).to_bytes()

    def test_seed_changes_noisy_run(self):
        cfg = builtin_scenario("los_crossing").with_(noise_sigma_m=1.0)
        assert run(cfg).to_bytes() != run(cfg.with_(seed=1)).to_bytes()

    def test_timestamps_nondecreasing(self):
        tr = run(builtin_scenario("distracted_pedestrian").with_(noise_sigma_m=2.0))
        times = [e.time for e in tr]
        assert times == sorted(times)

    def test_emission_cadence(self):
        cfg = builtin_scenario("shared_road")
        tr = run(cfg)
        per_actor = defaultdict(list)
        for e in tr.of_type(VamPublished):
            per_actor[e.actor_id].append(e.time)
        for times in per_actor.values():
            assert len(times) == len(set(times))
            assert all(b - a >= cfg.tick_ms for a, b in zip(times, times[1:]))
            for t in times:
                assert sum(1 for u in times if t <= u < t + 1000) <= 10

    def test_ground_truth_ignores_noise(self):
        clean = run(builtin_scenario("los_crossing")).of_type(GroundTruthCollision)
        noisy = run(builtin_scenario("los_crossing").with_(noise_sigma_m=5.0)).of_type(GroundTruthCollision)
        assert clean == noisy

    def test_vams_carry_noisy_positions(self):
        tr = run(builtin_scenario("los_crossing").with_(noise_sigma_m=3.0))
        truth = {(s.actor_id, s.time): s.position for s in tr.of_type(StateSample)}
        errs = []
        for e in tr.of_type(VamPublished):
            v = decode_vam(e.envelope.payload)
            x, y = truth[(e.actor_id, e.time)]
            errs.append(math.hypot(v.position_cm[0] / 100 - x, v.position_cm[1] / 100 - y))
        assert 2.0 < np.mean(errs) < 5.0  # mean of a Rayleigh(3) is 3.76

    def test_pseudonym_continuity(self):
        cfg = builtin_scenario("shared_road").with_(pseudonym_epoch_s=2.0)
        tr = run(cfg)
        seen = defaultdict(dict)
        for s in tr.of_type(StateSample):
            seen[s.actor_id][s.time] = s.pseudonym
        for actor, by_time in seen.items():
            times = sorted(by_time)
            for a, b in zip(times, times[1:]):
                same_epoch = a // 2000 == b // 2000
                assert (by_time[a] == by_time[b]) == same_epoch
        for e in tr.of_type(VamPublished):
            assert e.envelope.sender == seen[e.actor_id][e.time]

    def test_rotation_keeps_warnings_flowing(self):
        # an epoch boundary in the middle of the encounter
        tr = run(builtin_scenario("los_crossing").with_(pseudonym_epoch_s=5.0))
        [gt] = tr.of_type(GroundTruthCollision)
        assert {w.actor_id for w in warnings_by_pair(tr)[(0, 1)] if w.time < gt.time} == {0, 1}

    @pytest.mark.parametrize("name", SMALL_BUILTINS)
    @pytest.mark.parametrize("mode", list(PipelineMode))
    def test_noiseless_soundness(self, name, mode):
        cfg = builtin_scenario(name).with_(pipeline=mode)
        tr = run(cfg)
        gts = tr.of_type(GroundTruthCollision)
        assert gts
        meta = tr.meta
        lat = {k: v["base_ms"] for k, v in meta["links"].items()}
        if mode is PipelineMode.CENTRAL:
            e2e = lat["client->edge"] + lat["edge->server"] + lat["server->edge"] + lat["edge->client"]
        elif mode is PipelineMode.EDGE:
            e2e = 2 * lat["client->edge"] + 2 * lat["edge->edge"]
        else:
            e2e = 2 * lat["direct"]
        bound_s = WarningPolicy().t_warn - (cfg.tick_ms + e2e) / 1000.0
        by_pair = warnings_by_pair(tr)
        for g in gts:
            pair = (min(g.actor_a, g.actor_b), max(g.actor_a, g.actor_b))
            ok = {w.actor_id for w in by_pair.get(pair, [])
                  if w.time < g.time and w.ttc_ms / 1000.0 >= bound_s and (g.time - w.time) / 1000.0 >= bound_s}
            assert ok == set(pair)

    def test_zero_server_hops_match_edge(self):
        zero = LinkLatencyModel.fixed(0.0)
        links = {EDGE_TO_SERVER: zero, SERVER_TO_EDGE: zero, EDGE_TO_EDGE: zero}
        base = builtin_scenario("shared_road").with_(latency=links)
        traces = {m: run(base.with_(pipeline=m)) for m in (PipelineMode.CENTRAL, PipelineMode.EDGE)}

        def fingerprint(tr):
            out = []
            for w in tr.of_type(WarningPresented):
                out.append((w.time, w.actor_id, w.danger, w.ttc_ms))
            return out

        c, e = (fingerprint(traces[m]) for m in (PipelineMode.CENTRAL, PipelineMode.EDGE))
        assert c and c == e
        denms = {m: [(p.time, decode_denm(p.envelope.payload)) for p in traces[m].of_type(DenmPublished)]
                 for m in traces}
        strip = [[(t, d.danger_level, d.ttc_ms, d.target_pseudonyms, d.event_position_cm) for t, d in denms[m]]
                 for m in (PipelineMode.CENTRAL, PipelineMode.EDGE)]
        assert strip[0] == strip[1]
