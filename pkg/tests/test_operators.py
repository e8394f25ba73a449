"""Synthetic operator: planner, reactive avoidance, delays, noise."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from telewip import dynamics as dyn
from telewip import operators as ops
from telewip import sharedcontrol as sc
from telewip import worlds as w

BOUNDS = (0.0, 30.0, -3.0, 3.0)


def corridor(obstacles=(), name="test", goal_x=29.0, start=(1.0, 0.0, 0.0),
             bounds=BOUNDS, **kw):
    obs = tuple(w.Obstacle(id=i, center=c) for i, c in enumerate(obstacles))
    return w.MapSpec(name=name, bounds=bounds, start=start, goal_x=goal_x,
                     obstacles=obs, walls=w._corridor_walls(bounds), **kw)


def seg_point_dist(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    t = 0.0 if L2 == 0.0 else min(max(((cx - ax) * vx + (cy - ay) * vy) / L2, 0.0), 1.0)
    return math.hypot(cx - (ax + t * vx), cy - (ay + t * vy))


def polyline_clearance(spec, pts):
    """Worst surface clearance of the waypoint polyline to any obstacle."""
    worst = math.inf
    prev = spec.start[:2]
    for p in pts:
        for ob in spec.obstacles:
            worst = min(worst, seg_point_dist(prev, p, ob.center) - ob.radius)
        prev = p
    return worst


class TestOperatorValidation:
    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            ops.SyntheticOperator(policy="teleport")

    def test_negative_delay_rejected(self):
        with pytest.raises(ValueError):
            ops.SyntheticOperator(reaction_delay=-0.1)

    def test_noise_enabled_flag(self):
        assert ops.SyntheticOperator().noise_enabled
        assert not ops.SyntheticOperator(policy="pure_pursuit").noise_enabled
        assert not ops.SyntheticOperator(noise_std=0.0).noise_enabled


class TestInversePiecewise:
    def test_round_trip_examples(self):
        m = sc.VelocityMapping()
        for slope_low, slope_high, out_max in ((m.slope_low_x, m.slope_high_x, m.v_max),
                                               (m.slope_low_y, m.slope_high_y, m.yaw_rate_max)):
            reachable = sc.piecewise_map_s(0.15, 0.01, slope_low, slope_high,
                                           0.06, out_max)
            for frac in (0.1, 0.35, -0.6, 0.97, -0.999):
                target = frac * reachable
                d = ops.inverse_piecewise_s(target, 0.01, slope_low, slope_high,
                                            0.06, out_max, 0.15)
                back = sc.piecewise_map_s(d, 0.01, slope_low, slope_high, 0.06, out_max)
                assert back == pytest.approx(target, abs=1e-12)

    @given(st.floats(-2.0, 2.0))
    def test_round_trip_property(self, target):
        d = ops.inverse_piecewise_s(target, 0.01, 9.0, 18.0, 0.06, 2.0, 0.15)
        back = sc.piecewise_map_s(d, 0.01, 9.0, 18.0, 0.06, 2.0)
        assert back == pytest.approx(target, abs=1e-9)

    @given(st.floats(-5.0, 5.0))
    def test_odd(self, target):
        f = ops.inverse_piecewise_s
        assert f(-target, 0.01, 9.0, 18.0, 0.06, 2.0, 0.15) == \
            -f(target, 0.01, 9.0, 18.0, 0.06, 2.0, 0.15)

    def test_saturates_at_travel(self):
        # x axis: 1.5 m/s needs more travel than exists, so clamp to 0.15
        d = ops.inverse_piecewise_s(1.5, 0.01, 4.0, 8.0, 0.06, 1.5, 0.15)
        assert d == 0.15

    def test_saturates_at_out_max(self):
        # y axis: the rate clamp engages before the travel does
        d = ops.inverse_piecewise_s(50.0, 0.01, 9.0, 18.0, 0.06, 2.0, 0.15)
        assert d == ops.inverse_piecewise_s(2.0, 0.01, 9.0, 18.0, 0.06, 2.0, 0.15)
        assert d < 0.15


class TestNextWaypoint:
    def test_no_visible_column_returns_target(self):
        centers = np.zeros((0, 2))
        radii = np.zeros(0)
        wx, wy, kind = ops.next_waypoint_s(1.0, 0.0, 29.0, 0.0, centers, radii,
                                           0, -3.0, 3.0, 0.25, 8.0)
        assert (wx, wy, kind) == (29.0, 0.0, 1)

    def test_single_obstacle_pre_point(self):
        centers = np.array([[5.0, 0.0]])
        radii = np.array([w.OBSTACLE_RADIUS])
        wx, wy, kind = ops.next_waypoint_s(1.0, 0.0, 29.0, 0.0, centers, radii,
                                           1, -3.0, 3.0, 0.25, 8.0)
        assert kind == 1
        assert wx == pytest.approx(5.0 - 0.75)
        # gap center between inflated obstacle edge and wall margin
        lo, hi = -3.0 + 0.25, 0.0 - w.OBSTACLE_RADIUS - 0.25
        assert wy == pytest.approx(0.5 * (lo + hi))

    def test_past_column_gives_post_point(self):
        centers = np.array([[5.0, 0.0]])
        radii = np.array([w.OBSTACLE_RADIUS])
        wx, wy, kind = ops.next_waypoint_s(4.5, -1.5, 29.0, 0.0, centers, radii,
                                           1, -3.0, 3.0, 0.25, 8.0)
        assert kind == 1
        assert wx == pytest.approx(5.0 + 0.8)

    def test_blocked_column_probes_forward(self):
        ys = np.arange(-2.9, 3.0, 0.45)
        centers = np.column_stack([np.full(len(ys), 5.0), ys])
        radii = np.full(len(ys), w.OBSTACLE_RADIUS)
        wx, wy, kind = ops.next_waypoint_s(4.6, 0.1, 29.0, 0.0, centers, radii,
                                           len(ys), -3.0, 3.0, 0.25, 8.0)
        assert kind == 0
        assert (wx, wy) == (4.6 + 0.6, 0.1)

    def test_out_of_vision_column_ignored(self):
        centers = np.array([[15.0, 0.0]])
        radii = np.array([w.OBSTACLE_RADIUS])
        wx, wy, kind = ops.next_waypoint_s(1.0, 0.0, 29.0, 0.0, centers, radii,
                                           1, -3.0, 3.0, 0.25, 8.0)
        assert (wx, wy, kind) == (29.0, 0.0, 1)


class TestAvoidanceBias:
    def test_left_obstacle_pushes_right(self):
        centers = np.array([[1.2, 0.5]])   # ahead-left, inside avoid range
        radii = np.array([0.2])
        bias, sf = ops.avoidance_bias_s(0.0, 0.0, 0.0, centers, radii, 1,
                                        0.25, 8.0, 0.55, 1.6)
        assert bias < 0.0
        assert sf < 1.0

    def test_symmetric_pair_cancels(self):
        centers = np.array([[1.2, 0.5], [1.2, -0.5]])
        radii = np.array([0.2, 0.2])
        bias, _ = ops.avoidance_bias_s(0.0, 0.0, 0.0, centers, radii, 2,
                                       0.25, 8.0, 0.55, 1.6)
        assert bias == pytest.approx(0.0, abs=1e-15)

    def test_behind_ignored(self):
        centers = np.array([[-1.0, 0.0]])
        radii = np.array([0.2])
        bias, sf = ops.avoidance_bias_s(0.0, 0.0, 0.0, centers, radii, 1,
                                        0.25, 8.0, 0.55, 1.6)
        assert bias == 0.0 and sf == 1.0

    def test_clear_front_full_speed(self):
        centers = np.array([[5.0, 0.0]])
        radii = np.array([0.2])
        _, sf = ops.avoidance_bias_s(0.0, 0.0, 0.0, centers, radii, 1,
                                     0.25, 8.0, 0.55, 1.6)
        assert sf == 1.0


class TestPlanWaypoints:
    def test_empty_map_single_goal_point(self):
        assert ops.plan_waypoints(corridor(), 8.0) == [(29.0, 0.0)]

    def test_s1_static_clearance_and_goal(self):
        spec = w.make_s1_static()
        wp = ops.plan_waypoints(spec, 8.0)
        assert wp[-1][0] == spec.goal_x
        assert polyline_clearance(spec, wp) >= 0.3

    def test_s2_bright_clearance(self):
        spec = w.build_map("s2bright", seed=0)
        wp = ops.plan_waypoints(spec, 8.0)
        assert polyline_clearance(spec, wp) >= 0.25

    def test_deterministic(self):
        spec = w.build_map("s2bright", seed=4)
        assert ops.plan_waypoints(spec, 8.0) == ops.plan_waypoints(spec, 8.0)

    def test_dark_map_shrinks_vision(self):
        bright = ops.plan_waypoints(w.build_map("s2bright", seed=0), 8.0)
        dark = ops.plan_waypoints(w.build_map("s2dark", seed=0), 8.0)
        # at a tenth of the vision no column is seen before reaching it,
        # so the dark route has far fewer planned legs
        assert len(dark) < len(bright)

    def test_brightness_equivalent_to_scaled_vision(self):
        layout = ((5.0, 0.4), (9.0, -1.0), (13.0, 0.9))
        dim = corridor(layout, brightness=0.1)
        lit = corridor(layout, brightness=1.0)
        assert ops.plan_waypoints(dim, 8.0) == ops.plan_waypoints(lit, 0.8)

    def test_midpoints_visited_in_order(self):
        spec = w.build_map("s2dyn", seed=3)
        wp = ops.plan_waypoints(spec, 8.0)
        m0, m1 = spec.midpoints
        i0 = wp.index((m0[0], m0[1]))
        i1 = wp.index((m1[0], m1[1]))
        assert i0 < i1 < len(wp) - 1

    def test_bad_vision_rejected(self):
        with pytest.raises(ValueError):
            ops.plan_waypoints(corridor(), 0.0)


class TestNoiseGeneration:
    def test_prefix_stable_in_length(self):
        n1, j1 = ops.generate_noise(7, 100)
        n2, j2 = ops.generate_noise(7, 5000)
        assert np.array_equal(n1, n2[:100])
        assert np.array_equal(j1, j2)

    def test_seed_sensitivity(self):
        n1, _ = ops.generate_noise(0, 64)
        n2, _ = ops.generate_noise(1, 64)
        assert not np.array_equal(n1, n2)

    def test_ou_coefficients(self):
        a, b = ops.ou_coefficients(1e-3, 0.008)
        assert a == pytest.approx(math.exp(-1e-3 / 0.3), rel=1e-12)
        # stationarity: a^2 s^2 + b^2 = s^2
        assert a * a * 0.008 ** 2 + b * b == pytest.approx(0.008 ** 2, rel=1e-12)

    def test_ou_stationary_std(self):
        a, b = ops.ou_coefficients(1e-3, 0.008)
        z = np.random.default_rng(0).standard_normal(400_000)
        n = 0.0
        samples = np.empty(len(z))
        for i, zi in enumerate(z):
            n = a * n + b * zi
            samples[i] = n
        assert np.std(samples[50_000:]) == pytest.approx(0.008, rel=0.05)


STILL = dyn.WipState(x=1.0, y=0.0, yaw=0.0)
ZERO_F = sc.HmiForceCommand(0.0, 0.0)


def make_runtime(spec=None, **op_kw):
    spec = corridor() if spec is None else spec
    op = ops.SyntheticOperator(**op_kw)
    return ops.OperatorRuntime(op, spec, sc.VelocityMapping())


class TestOperatorRuntime:
    def test_deterministic(self):
        a = make_runtime(seed=5)
        b = make_runtime(seed=5)
        for _ in range(400):
            la = a.tick(STILL, ZERO_F)
            lb = b.tick(STILL, ZERO_F)
            assert (la.lean_x, la.lean_y) == (lb.lean_x, lb.lean_y)

    def test_seed_changes_noise(self):
        a = make_runtime(seed=5)
        b = make_runtime(seed=6)
        diffs = [a.tick(STILL, ZERO_F).lean_y - b.tick(STILL, ZERO_F).lean_y
                 for _ in range(400)]
        assert any(d != 0.0 for d in diffs)

    def test_admittance_force_response_exact(self):
        """A steady rendered force shifts the lean by admittance * force."""
        a = make_runtime(policy="pure_pursuit", seed=0)
        b = make_runtime(policy="pure_pursuit", seed=0)
        push = sc.HmiForceCommand(0.0, 2.1)
        for _ in range(600):
            la = a.tick(STILL, ZERO_F)
            lb = b.tick(STILL, push)
        assert lb.lean_y - la.lean_y == pytest.approx(0.004 * 2.1, abs=1e-15)

    def test_force_response_delayed(self):
        """The force path goes through the same reaction delay as vision."""
        a = make_runtime(policy="pure_pursuit", seed=0)
        b = make_runtime(policy="pure_pursuit", seed=0)
        push = sc.HmiForceCommand(0.0, 10.0)
        delay = a.delay_ticks
        for k in range(delay + 5):
            la = a.tick(STILL, ZERO_F)
            lb = b.tick(STILL, push)
            if k < delay:
                assert la.lean_y == lb.lean_y
            else:
                assert la.lean_y != lb.lean_y

    def test_steering_signs(self):
        """Target ahead-left: lean left (negative y) and forward."""
        rt = make_runtime(policy="pure_pursuit")
        st_ = dyn.WipState(x=1.0, y=-1.0, yaw=0.0)
        lean = None
        for _ in range(400):
            lean = rt.tick(st_, ZERO_F)
        assert lean.lean_y < 0.0
        assert lean.lean_x > 0.0

    def test_travel_clamped(self):
        rt = make_runtime(seed=1, noise_std=0.05)
        big = sc.HmiForceCommand(50.0, -50.0)
        for _ in range(2000):
            lean = rt.tick(STILL, big)
            assert abs(lean.lean_x) <= sc.HMI_TRAVEL_LIMIT
            assert abs(lean.lean_y) <= sc.HMI_TRAVEL_LIMIT

    def test_stuck_triggers_escape(self):
        rt = make_runtime(policy="pure_pursuit", stuck_time=0.5, escape_time=0.3)
        n_escape = int(round(0.5 / rt.dt)) + rt.delay_ticks + 10
        for _ in range(n_escape):
            rt.tick(STILL, ZERO_F)
        assert rt.escape_count >= 1

    def test_escape_backs_up(self):
        rt = make_runtime(policy="pure_pursuit", stuck_time=0.4, escape_time=5.0)
        for _ in range(3000):
            lean = rt.tick(STILL, ZERO_F)
        assert rt.escape_left > 0
        assert lean.lean_x < 0.0    # reverse command

    def test_spring_boost_cancels_spring_squash(self):
        """Closed loop against the spring, the achieved lean equals the
        no-admittance operator's lean: the counter-lean exactly pays for
        the admittance yield to the spring force."""
        spec = corridor()
        st_ = dyn.WipState(x=1.0, y=-1.5, yaw=0.0)   # off-axis: steady turn
        free = make_runtime(spec=spec, policy="pure_pursuit", admittance=0.0)
        loaded = make_runtime(spec=spec, policy="pure_pursuit", admittance=0.004)
        lean_free = lean_loaded = None
        hmi = sc.HmiForceCommand(0.0, 0.0)
        # stop before the stuck-escape fires on the stationary robot
        for _ in range(4000):
            lean_free = free.tick(st_, ZERO_F)
            lean_loaded = loaded.tick(st_, hmi)
            hmi = sc.HmiForceCommand(0.0, -100.0 * lean_loaded.lean_y)
        assert lean_loaded.lean_y == pytest.approx(lean_free.lean_y, abs=1e-7)

    def test_noise_magnitude_scales(self):
        quiet = make_runtime(seed=3, noise_std=0.004)
        loud = make_runtime(seed=3, noise_std=0.02)
        qs, ls = [], []
        for _ in range(4000):
            qs.append(quiet.tick(STILL, ZERO_F).lean_y)
            ls.append(loud.tick(STILL, ZERO_F).lean_y)
        assert np.std(np.diff(ls)) > 3.0 * np.std(np.diff(qs))
