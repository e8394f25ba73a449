"""Repulsive force fields for obstacle feedback.

Two families live here. The primary one is a rate-gated sigmoid repulsion:
the force is the slope of a sigmoid potential times the approach speed, so
it is bounded everywhere and vanishes when the range is static or opening.
The baseline is the classic inverse-square potential-field repulsion, which
diverges near contact and needs a ceiling clamp.

Per-observation forces are nonnegative magnitudes; direction enters only in
``total_force``, which weighs each contribution by a bearing function and
applies a leading minus so that an obstacle on the left pushes the command
to the right.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

FORCE_CEILING = 1000.0   # clamp for the divergent baseline near contact


@dataclass(frozen=True)
class ForceParams:
    """Gains for the repulsive field and the downstream command/haptic use.

    magnitude_gain scales the sigmoid amplitude; slope_gain (1/m) sets how
    sharply it rises; activation_distance (m) is the range gate. The two
    weights blend obstacle and wall contributions; command_sensitivity
    scales the operator yaw command before compensation; haptic_gain maps
    the field onto the lateral HMI force; the spring constants (N/m) pull
    the operator interface back to neutral.
    """

    magnitude_gain: float = 1.0
    slope_gain: float = 2.0
    activation_distance: float = 2.0
    obstacle_weight: float = 1.0
    wall_weight: float = 0.5
    command_sensitivity: float = 1.0
    haptic_gain: float = 10.0
    spring_kx: float = 100.0
    spring_ky: float = 100.0

    def __post_init__(self):
        for name in ("magnitude_gain", "slope_gain", "activation_distance",
                     "spring_kx", "spring_ky"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("obstacle_weight", "wall_weight", "command_sensitivity",
                     "haptic_gain"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class ObstacleObservation:
    """One ranged surface as seen from the robot body frame.

    distance is surface-to-surface and floored at zero. approach_rate is
    d(distance)/dt, negative while closing. bearing is atan2 of the
    robot-to-surface vector in body coordinates, in (-pi, pi].
    """

    distance: float
    approach_rate: float
    bearing: float
    kind: str = "obstacle"

    def __post_init__(self):
        if self.distance < 0.0:
            raise ValueError("distance must be nonnegative")
        if abs(self.bearing) > math.pi:
            raise ValueError("bearing must lie in [-pi, pi]")
        if self.kind not in ("obstacle", "wall"):
            raise ValueError(f"unknown observation kind {self.kind!r}")


class BearingWeight(Enum):
    """How bearing enters the force sum: the raw angle feeds the yaw
    compensation channel, the lateral sine projection feeds the haptic
    channel."""

    YAW_ANGLE = "yaw_angle"
    LATERAL_PROJECTION = "lateral_projection"


@njit(cache=True)
def sigmoid_potential_s(p: float, magnitude_gain: float, slope_gain: float) -> float:
    return magnitude_gain / (1.0 + math.exp(-slope_gain * p))


@njit(cache=True)
def sigmoid_slope_s(p: float, magnitude_gain: float, slope_gain: float) -> float:
    e = math.exp(-slope_gain * p)
    return magnitude_gain * slope_gain * e / ((1.0 + e) * (1.0 + e))


@njit(cache=True)
def rate_force_s(p: float, p_dot: float, magnitude_gain: float,
                 slope_gain: float, activation: float) -> float:
    """Nonnegative repulsion magnitude; zero unless in range and closing."""
    if p > activation or p_dot >= 0.0:
        return 0.0
    return slope_gain * sigmoid_slope_s(p, magnitude_gain, slope_gain) * (-p_dot)


@njit(cache=True)
def potential_field_s(p: float, eta: float, p0: float, ceiling: float) -> float:
    if p > p0:
        return 0.0
    if p <= 0.0:
        return ceiling
    f = eta * (1.0 / p - 1.0 / p0) / (p * p)
    return f if f < ceiling else ceiling


@njit(cache=True)
def potential_field_rate_s(p: float, p_dot: float, eta: float, p0: float,
                           ceiling: float) -> float:
    """Approach-rate form of the baseline: |dF/dp| * |p_dot|, range-gated
    and closing-gated like the sigmoid variant so the two are comparable."""
    if p > p0 or p_dot >= 0.0:
        return 0.0
    if p <= 0.0:
        return ceiling
    dfdp = eta * (3.0 / p ** 4 - 2.0 / (p0 * p ** 3))
    f = abs(dfdp) * (-p_dot)
    return f if f < ceiling else ceiling


def sigmoid_potential(p: float, params: ForceParams) -> float:
    """Logistic potential: magnitude_gain / (1 + exp(-slope_gain * p))."""
    if p < 0.0:
        raise ValueError("p must be nonnegative")
    return sigmoid_potential_s(p, params.magnitude_gain, params.slope_gain)


def sigmoid_slope(p: float, params: ForceParams) -> float:
    """Derivative of sigmoid_potential in p; peaks at p=0 with value
    magnitude_gain * slope_gain / 4 and decreases monotonically."""
    if p < 0.0:
        raise ValueError("p must be nonnegative")
    return sigmoid_slope_s(p, params.magnitude_gain, params.slope_gain)


def rate_force(obs: ObstacleObservation, params: ForceParams,
               activation: float | None = None) -> float:
    """Rate-gated sigmoid repulsion magnitude.

    slope_gain * sigmoid_slope(distance) * |approach_rate| when the surface
    is within the activation range and closing; zero otherwise. Bounded by
    magnitude_gain * slope_gain^2 * |approach_rate| / 4 for every distance.
    """
    if activation is None:
        activation = params.activation_distance
    if activation <= 0.0:
        raise ValueError("activation must be strictly positive")
    return rate_force_s(obs.distance, obs.approach_rate,
                        params.magnitude_gain, params.slope_gain, activation)


def apf_force(obs: ObstacleObservation, eta: float, p0: float,
              ceiling: float = FORCE_CEILING) -> float:
    """Classic potential-field repulsion eta*(1/p - 1/p0)/p^2 inside p0.

    Divergent as p -> 0; returns the ceiling there instead of raising.
    """
    return potential_field_s(obs.distance, eta, p0, ceiling)


def apf_rate_force(obs: ObstacleObservation, eta: float, p0: float,
                   ceiling: float = FORCE_CEILING) -> float:
    return potential_field_rate_s(obs.distance, obs.approach_rate, eta, p0, ceiling)


def total_force(observations: list[ObstacleObservation], g: BearingWeight,
                params: ForceParams, activation: float | None = None) -> float:
    """Signed scalar field output.

    -(w_obstacle * sum_m f_m * g(bearing_m) + w_wall * sum_n f_n * g(bearing_n))
    with g the raw bearing or its sine. The minus makes a left-side obstacle
    (positive bearing) produce a negative output, i.e. a rightward push.
    """
    obstacle_sum = 0.0
    wall_sum = 0.0
    for obs in observations:
        f = rate_force(obs, params, activation)
        if f == 0.0:
            continue
        weight = obs.bearing if g is BearingWeight.YAW_ANGLE else math.sin(obs.bearing)
        if obs.kind == "wall":
            wall_sum += f * weight
        else:
            obstacle_sum += f * weight
    return -(params.obstacle_weight * obstacle_sum + params.wall_weight * wall_sum)


def force_profile(params: ForceParams, eta: float, approach_speed: float,
                  distances: np.ndarray, ceiling: float = FORCE_CEILING) -> np.ndarray:
    """Force-vs-distance curves at a fixed approach speed.

    Returns a structured array with the sigmoid rate force, the baseline's
    rate form, and the static baseline, one row per distance.
    """
    if approach_speed <= 0.0:
        raise ValueError("approach_speed must be positive")
    rows = np.zeros(len(distances), dtype=[("distance", "f8"), ("sigmoid_rate", "f8"),
                                           ("apf_rate", "f8"), ("apf_static", "f8")])
    for i, p in enumerate(distances):
        rows[i] = (
            p,
            rate_force_s(p, -approach_speed, params.magnitude_gain,
                         params.slope_gain, params.activation_distance),
            potential_field_rate_s(p, -approach_speed, eta,
                                   params.activation_distance, ceiling),
            potential_field_s(p, eta, params.activation_distance, ceiling),
        )
    return rows


def write_profile_csv(path, params: ForceParams, eta: float = 1.0,
                      approach_speed: float = 0.5,
                      p_max: float | None = None, n: int = 400) -> None:
    p_max = p_max if p_max is not None else 1.5 * params.activation_distance
    distances = np.linspace(0.0, p_max, n)
    rows = force_profile(params, eta, approach_speed, distances)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["distance", "sigmoid_rate", "apf_rate", "apf_static"])
        for r in rows:
            writer.writerow([repr(float(r["distance"])), repr(float(r["sigmoid_rate"])),
                             repr(float(r["apf_rate"])), repr(float(r["apf_static"]))])
