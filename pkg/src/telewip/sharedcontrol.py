"""Operator lean to robot command mapping plus the four feedback modes.

Conventions, fixed once here: positive lateral lean is to the operator's
right; yaw is counterclockwise-positive; a rightward lean therefore commands
a negative (clockwise) yaw rate. The haptic channel pushes the operator's
CoM away from the obstacle side, and the command channel bends the yaw-rate
command away from it; the forward velocity command is never touched by
either channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from numba import njit

from .forcefield import BearingWeight, ForceParams, ObstacleObservation, total_force

HMI_TRAVEL_LIMIT = 0.15    # m, either axis
HMI_FORCE_LIMIT = 50.0     # N, either axis


class CalibrationRequired(RuntimeError):
    """Raised when commands are requested before a neutral pose is set."""


@dataclass(frozen=True)
class OperatorState:
    """Operator CoM displacement and the calibrated neutral it is read against."""

    lean_x: float = 0.0
    lean_y: float = 0.0
    neutral_x: float | None = 0.0
    neutral_y: float | None = 0.0

    def __post_init__(self):
        if abs(self.lean_x) > HMI_TRAVEL_LIMIT + 1e-9 or abs(self.lean_y) > HMI_TRAVEL_LIMIT + 1e-9:
            raise ValueError("lean exceeds HMI travel limit")

    @property
    def calibrated(self) -> bool:
        return self.neutral_x is not None and self.neutral_y is not None


@dataclass(frozen=True)
class VelocityMapping:
    """Piecewise-linear odd map from lean displacement to command.

    Per axis: zero inside the dead-band, slope_low from there to the knee,
    slope_high beyond, clamped at the maxima. Forward axis units are
    (m/s)/m, lateral axis (rad/s)/m.
    """

    deadband_x: float = 0.01
    deadband_y: float = 0.01
    knee: float = 0.06
    slope_low_x: float = 4.0
    slope_high_x: float = 8.0
    slope_low_y: float = 9.0
    slope_high_y: float = 18.0
    v_max: float = 1.5
    yaw_rate_max: float = 2.0

    def __post_init__(self):
        for name in ("deadband_x", "deadband_y", "slope_low_x", "slope_high_x",
                     "slope_low_y", "slope_high_y"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.knee <= max(self.deadband_x, self.deadband_y):
            raise ValueError("knee must exceed the dead-band")
        if self.v_max <= 0.0 or self.yaw_rate_max <= 0.0:
            raise ValueError("command maxima must be positive")


class FeedbackMode(Enum):
    NONE = "none"          # plain telelocomotion, no field influence
    HAPTIC = "haptic"      # field rendered on the operator's lateral axis
    COMMAND = "command"    # field bends the yaw-rate command
    COMBINED = "combined"  # both channels at once


@dataclass(frozen=True)
class FeedbackConfig:
    """Mode plus per-channel activation distances.

    The haptic channel activates 25% further out than the command channel
    when both run together, so the operator feels the field before the
    command bends.
    """

    mode: FeedbackMode = FeedbackMode.NONE
    activation_command: float = 2.0
    activation_haptic: float = 2.5

    COMBINED_HAPTIC_RATIO = 1.25

    def __post_init__(self):
        if self.activation_command <= 0.0 or self.activation_haptic <= 0.0:
            raise ValueError("activation distances must be positive")
        if self.mode is FeedbackMode.COMBINED:
            expected = self.COMBINED_HAPTIC_RATIO * self.activation_command
            if not math.isclose(self.activation_haptic, expected, rel_tol=1e-12):
                raise ValueError(
                    f"combined mode requires activation_haptic = "
                    f"{self.COMBINED_HAPTIC_RATIO} * activation_command "
                    f"(got {self.activation_haptic}, expected {expected})")

    @classmethod
    def combined(cls, activation_command: float = 2.0) -> "FeedbackConfig":
        return cls(mode=FeedbackMode.COMBINED,
                   activation_command=activation_command,
                   activation_haptic=cls.COMBINED_HAPTIC_RATIO * activation_command)

    @classmethod
    def for_mode(cls, mode: FeedbackMode, activation_command: float = 2.0) -> "FeedbackConfig":
        if mode is FeedbackMode.COMBINED:
            return cls.combined(activation_command)
        return cls(mode=mode, activation_command=activation_command,
                   activation_haptic=cls.COMBINED_HAPTIC_RATIO * activation_command)


@dataclass(frozen=True)
class HmiForceCommand:
    force_x: float = 0.0
    force_y: float = 0.0


@njit(cache=True)
def piecewise_map_s(d: float, deadband: float, slope_low: float,
                    slope_high: float, knee: float, out_max: float) -> float:
    """Odd piecewise-linear map of one displacement axis."""
    mag = abs(d)
    if mag <= deadband:
        return 0.0
    if mag <= knee:
        out = slope_low * (mag - deadband)
    else:
        out = slope_low * (knee - deadband) + slope_high * (mag - knee)
    if out > out_max:
        out = out_max
    return out if d > 0.0 else -out


@njit(cache=True)
def clamp_s(v: float, limit: float) -> float:
    if v > limit:
        return limit
    if v < -limit:
        return -limit
    return v


def map_com_to_velocity(op: OperatorState, m: VelocityMapping) -> tuple[float, float]:
    """(forward velocity cmd, yaw rate cmd) from the operator lean.

    Forward lean drives forward speed; rightward lean drives clockwise
    (negative) yaw.
    """
    if not op.calibrated:
        raise CalibrationRequired("neutral pose not calibrated")
    v_d = piecewise_map_s(op.lean_x - op.neutral_x, m.deadband_x,
                          m.slope_low_x, m.slope_high_x, m.knee, m.v_max)
    lateral = piecewise_map_s(op.lean_y - op.neutral_y, m.deadband_y,
                              m.slope_low_y, m.slope_high_y, m.knee, m.yaw_rate_max)
    return v_d, -lateral


def compensate_yaw(yaw_rate_d: float, field: float, params: ForceParams,
                   yaw_rate_max: float = 2.0) -> float:
    """Bend the yaw-rate command by the field output (Eq.-style additive
    compensation); the forward command is untouched by design."""
    return clamp_s(params.command_sensitivity * yaw_rate_d + field, yaw_rate_max)


def hmi_force(op: OperatorState, field: float, params: ForceParams) -> HmiForceCommand:
    """Spring return toward neutral on both axes, plus the field rendered on
    the lateral axis only. Clamped to the HMI force limit."""
    if not op.calibrated:
        raise CalibrationRequired("neutral pose not calibrated")
    fx = -params.spring_kx * (op.lean_x - op.neutral_x)
    fy = -params.spring_ky * (op.lean_y - op.neutral_y) - params.haptic_gain * field
    return HmiForceCommand(clamp_s(fx, HMI_FORCE_LIMIT), clamp_s(fy, HMI_FORCE_LIMIT))


def apply_mode(config: FeedbackConfig, op: OperatorState, yaw_rate_d: float,
               observations: list[ObstacleObservation], params: ForceParams,
               yaw_rate_max: float = 2.0) -> tuple[float, HmiForceCommand]:
    """One feedback tick: route the field onto the channels the mode enables.

    Returns the compensated yaw-rate command and the HMI force. Disabled
    channels see a zero field, so the spring behavior survives in every mode.
    """
    command_field = 0.0
    haptic_field = 0.0
    if config.mode in (FeedbackMode.COMMAND, FeedbackMode.COMBINED):
        command_field = total_force(observations, BearingWeight.YAW_ANGLE,
                                    params, config.activation_command)
    if config.mode in (FeedbackMode.HAPTIC, FeedbackMode.COMBINED):
        haptic_field = total_force(observations, BearingWeight.LATERAL_PROJECTION,
                                   params, config.activation_haptic)
    yaw_rate_star = compensate_yaw(yaw_rate_d, command_field, params, yaw_rate_max)
    return yaw_rate_star, hmi_force(op, haptic_field, params)


def calibrate_neutral(samples_x, samples_y, sample_rate_hz: float) -> tuple[float, float]:
    """Average at least one second of lean samples into a neutral pose."""
    n = len(samples_x)
    if n != len(samples_y):
        raise ValueError("sample streams must have equal length")
    if n < sample_rate_hz:
        raise ValueError(
            f"calibration needs at least 1 s of samples ({int(sample_rate_hz)}), got {n}")
    return float(sum(samples_x) / n), float(sum(samples_y) / n)
