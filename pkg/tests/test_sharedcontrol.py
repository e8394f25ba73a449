import math

import pytest
from hypothesis import given, strategies as st

from telewip import sharedcontrol as sc
from telewip.forcefield import ForceParams, ObstacleObservation

P = ForceParams()
M = sc.VelocityMapping()

lean = st.floats(-sc.HMI_TRAVEL_LIMIT, sc.HMI_TRAVEL_LIMIT)


def operator(lean_x=0.0, lean_y=0.0):
    return sc.OperatorState(lean_x=lean_x, lean_y=lean_y)


def nearby_obstacles():
    return [
        ObstacleObservation(1.0, -0.5, math.pi / 2),
        ObstacleObservation(1.4, -0.3, -0.4),
        ObstacleObservation(0.8, -0.2, 0.1, kind="wall"),
    ]


class TestOperatorState:
    def test_travel_limit_enforced(self):
        with pytest.raises(ValueError):
            sc.OperatorState(lean_x=0.2)
        with pytest.raises(ValueError):
            sc.OperatorState(lean_y=-0.16)

    def test_calibrated_flag(self):
        assert operator().calibrated
        assert not sc.OperatorState(neutral_x=None, neutral_y=None).calibrated


class TestVelocityMapping:
    def test_validation(self):
        with pytest.raises(ValueError):
            sc.VelocityMapping(deadband_x=-0.01)
        with pytest.raises(ValueError):
            sc.VelocityMapping(knee=0.005)
        with pytest.raises(ValueError):
            sc.VelocityMapping(v_max=0.0)

    def test_deadband_zero(self):
        v, w = sc.map_com_to_velocity(operator(lean_x=0.005, lean_y=-0.008), M)
        assert v == 0.0 and w == 0.0

    def test_worked_low_slope_value(self):
        v, _ = sc.map_com_to_velocity(operator(lean_x=0.05), M)
        assert v == pytest.approx(0.16, abs=1e-12)

    def test_high_slope_segment(self):
        v, _ = sc.map_com_to_velocity(operator(lean_x=0.10), M)
        # (0.06-0.01)*4 + (0.10-0.06)*8
        assert v == pytest.approx(0.52, abs=1e-12)

    def test_rightward_lean_gives_clockwise_yaw(self):
        _, w = sc.map_com_to_velocity(operator(lean_y=0.05), M)
        assert w < 0.0

    def test_yaw_rate_clamped_at_full_lean(self):
        _, w = sc.map_com_to_velocity(operator(lean_y=sc.HMI_TRAVEL_LIMIT), M)
        assert w == -M.yaw_rate_max

    def test_velocity_clamp_with_steep_mapping(self):
        steep = sc.VelocityMapping(slope_low_x=50.0, slope_high_x=100.0)
        v, _ = sc.map_com_to_velocity(operator(lean_x=0.15), steep)
        assert v == steep.v_max

    @given(d=lean)
    def test_odd_function(self, d):
        vp, wp = sc.map_com_to_velocity(operator(lean_x=d, lean_y=d), M)
        vn, wn = sc.map_com_to_velocity(operator(lean_x=-d, lean_y=-d), M)
        assert vn == -vp and wn == -wp

    @given(d=st.floats(0.0, sc.HMI_TRAVEL_LIMIT))
    def test_monotone_nondecreasing(self, d):
        v1, _ = sc.map_com_to_velocity(operator(lean_x=d), M)
        v2, _ = sc.map_com_to_velocity(operator(lean_x=min(d + 0.01, 0.15)), M)
        assert v2 >= v1

    def test_uncalibrated_raises(self):
        op = sc.OperatorState(neutral_x=None, neutral_y=None)
        with pytest.raises(sc.CalibrationRequired):
            sc.map_com_to_velocity(op, M)


class TestCompensateYaw:
    def test_identity_without_field(self):
        assert sc.compensate_yaw(0.7, 0.0, P) == 0.7

    def test_worked_value(self):
        assert sc.compensate_yaw(0.4, -0.21, P) == pytest.approx(0.19, abs=1e-12)

    def test_sensitivity_scaling(self):
        params = ForceParams(command_sensitivity=0.5)
        assert sc.compensate_yaw(0.8, 0.0, params) == pytest.approx(0.4)

    def test_clamped(self):
        assert sc.compensate_yaw(1.9, 5.0, P, yaw_rate_max=2.0) == 2.0
        assert sc.compensate_yaw(-1.9, -5.0, P, yaw_rate_max=2.0) == -2.0


class TestHmiForce:
    def test_neutral_no_field_is_zero(self):
        cmd = sc.hmi_force(operator(), 0.0, P)
        assert cmd.force_x == 0.0 and cmd.force_y == 0.0

    def test_spring_law(self):
        cmd = sc.hmi_force(operator(lean_y=0.02), 0.0, P)
        assert cmd.force_y == pytest.approx(-2.0, abs=1e-12)  # ky = 100 N/m

    def test_field_pushes_away_from_obstacle_side(self):
        # obstacle on the left gives a negative lateral field; the haptic
        # force must push the operator's CoM to the right (positive)
        cmd = sc.hmi_force(operator(), -0.21, P)
        assert cmd.force_y == pytest.approx(2.1, abs=1e-12)
        assert cmd.force_x == 0.0

    def test_force_limit(self):
        cmd = sc.hmi_force(operator(lean_y=0.01), -1000.0, P)
        assert cmd.force_y == sc.HMI_FORCE_LIMIT

    @given(lx=lean, ly=lean)
    def test_spring_restores_toward_neutral(self, lx, ly):
        cmd = sc.hmi_force(operator(lean_x=lx, lean_y=ly), 0.0, P)
        assert cmd.force_x * lx <= 0.0
        assert cmd.force_y * ly <= 0.0


class TestFeedbackConfig:
    def test_combined_ratio(self):
        cfg = sc.FeedbackConfig.combined(2.0)
        assert cfg.activation_haptic == 2.5

    def test_combined_ratio_enforced(self):
        with pytest.raises(ValueError):
            sc.FeedbackConfig(mode=sc.FeedbackMode.COMBINED,
                              activation_command=2.0, activation_haptic=2.0)

    def test_positive_activations(self):
        with pytest.raises(ValueError):
            sc.FeedbackConfig(activation_command=0.0)


class TestApplyMode:
    def test_no_feedback_ignores_field(self):
        cfg = sc.FeedbackConfig(mode=sc.FeedbackMode.NONE)
        yaw, cmd = sc.apply_mode(cfg, operator(lean_y=0.02), 0.4,
                                 nearby_obstacles(), P)
        assert yaw == pytest.approx(P.command_sensitivity * 0.4)
        assert cmd.force_y == pytest.approx(-2.0)   # spring survives

    def test_command_mode_bends_yaw_only(self):
        cfg = sc.FeedbackConfig(mode=sc.FeedbackMode.COMMAND)
        yaw, cmd = sc.apply_mode(cfg, operator(), 0.4, nearby_obstacles(), P)
        assert yaw != pytest.approx(0.4)
        assert cmd.force_x == 0.0 and cmd.force_y == 0.0   # no haptic term

    def test_haptic_mode_renders_field_only(self):
        cfg = sc.FeedbackConfig(mode=sc.FeedbackMode.HAPTIC)
        yaw, cmd = sc.apply_mode(cfg, operator(), 0.4, nearby_obstacles(), P)
        assert yaw == pytest.approx(0.4)
        assert cmd.force_y != 0.0

    def test_combined_matches_single_modes_per_channel(self):
        combo = sc.FeedbackConfig.combined(2.0)
        fc = sc.FeedbackConfig(mode=sc.FeedbackMode.COMMAND,
                               activation_command=combo.activation_command)
        fh = sc.FeedbackConfig(mode=sc.FeedbackMode.HAPTIC,
                               activation_haptic=combo.activation_haptic)
        obs = nearby_obstacles()
        op = operator(lean_y=-0.03)
        yaw_combo, hmi_combo = sc.apply_mode(combo, op, 0.6, obs, P)
        yaw_fc, _ = sc.apply_mode(fc, op, 0.6, obs, P)
        _, hmi_fh = sc.apply_mode(fh, op, 0.6, obs, P)
        assert yaw_combo == yaw_fc
        assert hmi_combo == hmi_fh

    def test_left_obstacle_turns_command_rightward(self):
        cfg = sc.FeedbackConfig(mode=sc.FeedbackMode.COMMAND)
        left = [ObstacleObservation(1.0, -0.5, math.pi / 2)]
        yaw, _ = sc.apply_mode(cfg, operator(), 0.0, left, P)
        assert yaw < 0.0

    @given(
        lx=lean, ly=lean,
        yaw_d=st.floats(-2.0, 2.0),
        mode=st.sampled_from(list(sc.FeedbackMode)),
    )
    def test_forward_command_never_modified(self, lx, ly, yaw_d, mode):
        # the full pipeline has no path that touches v_d: mapping output is
        # what the robot sees, regardless of mode or obstacles
        op = operator(lean_x=lx, lean_y=ly)
        v_before, _ = sc.map_com_to_velocity(op, M)
        cfg = sc.FeedbackConfig.for_mode(mode)
        sc.apply_mode(cfg, op, yaw_d, nearby_obstacles(), P)
        v_after, _ = sc.map_com_to_velocity(op, M)
        assert v_after == v_before


class TestCalibration:
    def test_averages_samples(self):
        xs = [0.01, 0.02, 0.03] * 40
        ys = [-0.01] * 120
        nx, ny = sc.calibrate_neutral(xs, ys, sample_rate_hz=100.0)
        assert nx == pytest.approx(0.02)
        assert ny == pytest.approx(-0.01)

    def test_requires_one_second(self):
        with pytest.raises(ValueError):
            sc.calibrate_neutral([0.0] * 50, [0.0] * 50, sample_rate_hz=100.0)

    def test_requires_equal_lengths(self):
        with pytest.raises(ValueError):
            sc.calibrate_neutral([0.0] * 100, [0.0] * 99, sample_rate_hz=100.0)

    def test_calibrated_neutral_feeds_mapping(self):
        nx, ny = sc.calibrate_neutral([0.02] * 100, [0.0] * 100, 100.0)
        op = sc.OperatorState(lean_x=0.07, neutral_x=nx, neutral_y=ny)
        v, _ = sc.map_com_to_velocity(op, M)
        assert v == pytest.approx(0.16, abs=1e-12)  # same offset as uncalibrated 0.05
