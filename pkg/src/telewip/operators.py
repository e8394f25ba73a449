"""Scripted operators that stand in for human subjects.

The policy is a gap-seeking pure pursuit: pick the nearest feasible gap in
the next obstacle column (within vision), steer the virtual CoM toward it,
slow down for turns and nearby obstacles, and back out when stuck. Human
imperfection is modeled explicitly: a reaction delay on everything the
operator perceives, low-pass Gaussian (OU) noise on the lean, and an
admittance response that yields to whatever force the interface renders.

Vision is scaled by map brightness, so dark maps shrink how far ahead the
operator can plan. All randomness comes from a seeded generator; a given
(operator seed, map, mode) reproduces the identical command tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dynamics import WipState, wrap_angle
from .sharedcontrol import (HMI_TRAVEL_LIMIT, HmiForceCommand, OperatorState,
                            VelocityMapping, piecewise_map_s)
from .worlds import MIDPOINT_RADIUS, MapSpec, MapState

NOISE_TIME_CONSTANT = 0.3   # s, lean noise low-pass


@dataclass(frozen=True)
class SyntheticOperator:
    """Parameters of the scripted operator.

    noise_std is the stationary CoM noise amplitude; the noisy policy
    applies it, the plain one does not. admittance converts rendered force
    into lean displacement. vision_radius is the bright-map value and is
    multiplied by map brightness at run time.
    """

    policy: str = "noisy_pure_pursuit"     # or "pure_pursuit"
    lookahead: float = 2.0
    vision_radius: float = 8.0
    reaction_delay: float = 0.25
    noise_std: float = 0.008
    admittance: float = 0.004
    seed: int = 0
    cruise_speed: float = 0.9
    heading_gain: float = 1.8
    speed_gain: float = 0.8                # forward-lean integrator gain
    avoid_gain: float = 0.55
    avoid_range: float = 1.6
    slow_range: float = 1.0
    replan_interval: float = 0.05
    capture_radius: float = 0.5
    stuck_time: float = 4.0
    escape_time: float = 1.5

    def __post_init__(self):
        if self.policy not in ("pure_pursuit", "noisy_pure_pursuit"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.lookahead <= 0.0:
            raise ValueError("lookahead must be positive")
        if self.reaction_delay < 0.0:
            raise ValueError("reaction_delay must be nonnegative")
        if self.admittance < 0.0 or self.noise_std < 0.0:
            raise ValueError("admittance and noise_std must be nonnegative")

    @property
    def noise_enabled(self) -> bool:
        return self.policy == "noisy_pure_pursuit" and self.noise_std > 0.0


@njit(cache=True)
def inverse_piecewise_s(out: float, deadband: float, slope_low: float,
                        slope_high: float, knee: float, out_max: float,
                        travel: float) -> float:
    """Lean displacement that the piecewise map sends to ``out`` (clamped)."""
    mag = abs(out)
    if mag > out_max:
        mag = out_max
    if mag == 0.0:
        return 0.0
    low_span = slope_low * (knee - deadband)
    if mag <= low_span:
        d = deadband + mag / slope_low
    else:
        d = knee + (mag - low_span) / slope_high
    if d > travel:
        d = travel
    return d if out > 0.0 else -d


@njit(cache=True)
def next_waypoint_s(px: float, py: float, tx: float, ty: float,
                    centers, radii, n_obs: int,
                    y_min: float, y_max: float, robot_r: float,
                    vision: float):
    """One greedy planning step toward the target point.

    Finds the nearest obstacle column ahead within vision, picks the
    feasible gap whose center best trades off lateral detour against the
    target side, and aims just before/past the column. With no visible
    column the target itself is the waypoint (targets are task knowledge,
    not sensed). An impassable visible column yields a short forward probe.

    Returns (wx, wy, kind) with kind 1 = target/gap waypoint, 0 = probe.
    """
    x_col = 1e18
    for i in range(n_obs):
        cx = centers[i, 0]
        if cx <= px + 0.3 or cx > px + vision or cx > tx + 0.5:
            continue
        dx = cx - px
        dy = centers[i, 1] - py
        if dx * dx + dy * dy > vision * vision:
            continue
        if cx < x_col:
            x_col = cx
    if x_col > 1e17:
        return tx, ty, 1

    # gather column members into a sorted y list
    ys = np.empty(n_obs)
    rs = np.empty(n_obs)
    m = 0
    for i in range(n_obs):
        cx = centers[i, 0]
        if abs(cx - x_col) < 0.8:
            dx = cx - px
            dy = centers[i, 1] - py
            if cx > px + 0.3 and dx * dx + dy * dy <= vision * vision:
                ys[m] = centers[i, 1]
                rs[m] = radii[i]
                m += 1
    order = np.argsort(ys[:m])
    lo_limit = y_min + robot_r
    hi_limit = y_max - robot_r
    best_cost = 1e18
    best_y = 0.0
    lo = lo_limit
    for k in range(m + 1):
        if k < m:
            i = order[k]
            hi = ys[i] - rs[i] - robot_r
        else:
            hi = hi_limit
        if hi - lo >= 0.3:
            c = 0.5 * (lo + hi)
            cost = abs(c - py) + 0.6 * abs(c - ty)
            if cost < best_cost:
                best_cost = cost
                best_y = c
        if k < m:
            i = order[k]
            lo_new = ys[i] + rs[i] + robot_r
            if lo_new > lo:
                lo = lo_new
    if best_cost > 1e17:
        return px + 0.6, py, 0
    if px < x_col - 0.85:
        return x_col - 0.75, best_y, 1
    return x_col + 0.8, best_y, 1


@njit(cache=True)
def avoidance_bias_s(px: float, py: float, yaw: float,
                     centers, radii, n_obs: int,
                     robot_r: float, vision: float,
                     avoid_gain: float, avoid_range: float):
    """Reactive yaw-rate bias and speed factor from nearby front obstacles.

    Obstacles in the forward cone push the command away in proportion to
    how deep inside avoid_range they are; the closest front obstacle also
    scales the speed factor down to force careful passes.
    """
    bias = 0.0
    nearest = 1e18
    for i in range(n_obs):
        dx = centers[i, 0] - px
        dy = centers[i, 1] - py
        d = math.sqrt(dx * dx + dy * dy)
        if d > vision + radii[i]:
            continue
        p = d - radii[i] - robot_r
        if p < 0.0:
            p = 0.0
        if p > avoid_range:
            continue
        bearing = wrap_angle(math.atan2(dy, dx) - yaw)
        if abs(bearing) > 1.3:
            continue
        if p < nearest:
            nearest = p
        weight = 1.0 / (p + 0.15) - 1.0 / (avoid_range + 0.15)
        bias -= avoid_gain * math.sin(bearing) * weight
    speed_factor = 1.0
    if nearest < 1e17:
        f = 0.35 + 0.65 * nearest / avoid_range
        if f < speed_factor:
            speed_factor = f
    return bias, speed_factor


def plan_waypoints(spec: MapSpec, vision_radius: float) -> list[tuple[float, float]]:
    """Greedy waypoint route from start to goal through required midpoints.

    Deterministic for a given (map, vision). Vision shrinks with map
    brightness; on an empty map the route is the single goal point.
    """
    if vision_radius <= 0.0:
        raise ValueError("vision_radius must be positive")
    vision = vision_radius * spec.brightness
    centers, _, radii = spec.obstacle_arrays()
    n_obs = len(spec.obstacles)
    _, _, y_min, y_max = spec.bounds
    from .worlds import ROBOT_RADIUS
    px, py, _ = spec.start
    waypoints: list[tuple[float, float]] = []
    targets = [(float(mx), float(my)) for mx, my in spec.midpoints]
    targets.append((spec.goal_x, None))
    for tx, ty in targets:
        for _ in range(300):
            goal_leg = ty is None
            tyy = py if goal_leg else ty
            if goal_leg:
                if px >= tx:
                    break
            elif math.hypot(px - tx, py - tyy) <= MIDPOINT_RADIUS:
                break
            wx, wy, kind = next_waypoint_s(px, py, tx, tyy, centers, radii,
                                           n_obs, y_min, y_max, ROBOT_RADIUS,
                                           vision)
            if kind == 0 and waypoints and (wx, wy) == waypoints[-1]:
                wx += 0.6
            waypoints.append((wx, wy))
            px, py = wx, wy
        if ty is not None and (not waypoints or waypoints[-1] != (tx, ty)):
            waypoints.append((tx, ty))
            px, py = tx, ty
    return waypoints


def ou_coefficients(dt: float, noise_std: float,
                    tau: float = NOISE_TIME_CONSTANT) -> tuple[float, float]:
    """Discrete Ornstein-Uhlenbeck update n' = a*n + b*z with stationary
    standard deviation noise_std."""
    a = math.exp(-dt / tau)
    b = noise_std * math.sqrt(1.0 - a * a)
    return a, b


def generate_noise(seed: int, n_ticks: int) -> tuple[np.ndarray, np.ndarray]:
    """Pre-generated randomness for one trial: per-tick lean noise draws and
    the escape-direction jitter pool. Generated up front (not on demand) so
    the compiled engine loop and the Python runtime consume identically.
    The jitter pool is drawn first: normal draws are prefix-stable in
    n_ticks, the stream position after them is not."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    jitter = rng.random(64)
    normals = rng.standard_normal((n_ticks, 2))
    return normals, jitter


class OperatorRuntime:
    """Stateful per-trial operator, mirroring the fused engine kernel.

    Keeps the perception rings (reaction delay), the OU noise state, the
    forward-lean speed integrator, and the stuck/escape machinery. The
    engine runs the same logic inside its compiled loop; this class exists
    for unit tests and for stepping the policy outside the engine.
    """

    def __init__(self, op: SyntheticOperator, spec: MapSpec,
                 mapping: VelocityMapping, dt: float = 1e-3,
                 spring_ky: float = 100.0, max_ticks: int = 200_000,
                 robot_radius: float = 0.25):
        self.op = op
        self.spec = spec
        self.mapping = mapping
        self.dt = dt
        self.robot_radius = robot_radius
        self.vision = op.vision_radius * spec.brightness
        self.delay_ticks = max(1, int(round(op.reaction_delay / dt)))
        self.pose_ring = np.zeros((self.delay_ticks, 4))
        sx, sy, syaw = spec.start
        self.pose_ring[:, 0] = sx
        self.pose_ring[:, 1] = sy
        self.pose_ring[:, 2] = syaw
        self.force_ring = np.zeros((self.delay_ticks, 2))
        centers, _, radii = spec.obstacle_arrays()
        self.snap = centers.copy()
        self.radii = radii
        self.normals, self.jitter = generate_noise(op.seed, max_ticks)
        self.escape_count = 0
        self.noise = np.zeros(2)
        self.ou_a, self.ou_b = ou_coefficients(dt, op.noise_std)
        self.targets = [(float(mx), float(my)) for mx, my in spec.midpoints]
        self.targets.append((spec.goal_x, sy))
        self.target_idx = 0
        self.wp = (spec.goal_x, sy)
        self.avoid_bias = 0.0
        self.speed_factor = 1.0
        self.replan_ticks = max(1, int(round(op.replan_interval / dt)))
        self.replan_countdown = 0
        self.lean_v = 0.0        # forward-lean integrator state
        self.best_x = sx
        self.stuck_ticks = 0
        self.stuck_limit = int(round(op.stuck_time / dt))
        self.escape_left = 0
        self.escape_dir = 1.0
        self.tick_index = 0
        # quasi-static counter-lean: the operator pushes through the spring
        # they know is there, so commands are not silently squashed
        self.spring_boost = 1.0 + op.admittance * spring_ky

    def _advance_target(self, px, py):
        while self.target_idx < len(self.targets) - 1:
            tx, ty = self.targets[self.target_idx]
            if math.sqrt((px - tx) ** 2 + (py - ty) ** 2) <= MIDPOINT_RADIUS:
                self.target_idx += 1
            else:
                break

    def tick(self, robot: WipState, hmi: HmiForceCommand,
             map_state: MapState | None = None) -> OperatorState:
        """One control tick: returns the operator lean for this instant."""
        op = self.op
        slot = self.tick_index % self.delay_ticks
        dpx, dpy, dyaw, dv = self.pose_ring[slot]
        dfx, dfy = self.force_ring[slot]
        self.pose_ring[slot] = (robot.x, robot.y, robot.yaw, robot.velocity)
        self.force_ring[slot] = (hmi.force_x, hmi.force_y)

        if self.replan_countdown <= 0:
            if map_state is not None and len(self.snap):
                self.snap[:] = map_state.centers
            self._advance_target(dpx, dpy)
            tx, ty = self.targets[self.target_idx]
            wx, wy, _ = next_waypoint_s(dpx, dpy, tx, ty, self.snap, self.radii,
                                        len(self.radii),
                                        self.spec.bounds[2], self.spec.bounds[3],
                                        self.robot_radius, self.vision)
            self.wp = (wx, wy)
            self.avoid_bias, self.speed_factor = avoidance_bias_s(
                dpx, dpy, dyaw, self.snap, self.radii, len(self.radii),
                self.robot_radius, self.vision, op.avoid_gain, op.avoid_range)
            self.replan_countdown = self.replan_ticks
        self.replan_countdown -= 1

        # stuck detection and escape
        if self.escape_left > 0:
            self.escape_left -= 1
            v_des = -0.4
            yaw_des = self.escape_dir * 0.8
            if self.escape_left == 0:
                self.stuck_ticks = 0
        else:
            if dpx > self.best_x + 0.05:
                self.best_x = dpx
                self.stuck_ticks = 0
            else:
                self.stuck_ticks += 1
            if self.stuck_ticks >= self.stuck_limit:
                self.escape_left = int(round(op.escape_time / self.dt))
                j = self.jitter[self.escape_count % len(self.jitter)]
                self.escape_dir = 1.0 if j < 0.5 else -1.0
                self.escape_count += 1
                self.stuck_ticks = 0
            heading = math.atan2(self.wp[1] - dpy, self.wp[0] - dpx)
            err = wrap_angle(heading - dyaw)
            yaw_des = op.heading_gain * err + self.avoid_bias
            v_des = op.cruise_speed * self.speed_factor / (1.0 + 1.2 * abs(err))

        m = self.mapping
        self.lean_v += op.speed_gain * (v_des - dv) * self.dt
        self.lean_v = min(max(self.lean_v, -HMI_TRAVEL_LIMIT), HMI_TRAVEL_LIMIT)
        lean_y_base = self.spring_boost * inverse_piecewise_s(
            -yaw_des, m.deadband_y, m.slope_low_y, m.slope_high_y, m.knee,
            m.yaw_rate_max, HMI_TRAVEL_LIMIT)

        if op.noise_enabled:
            z0 = self.normals[self.tick_index % len(self.normals), 0]
            z1 = self.normals[self.tick_index % len(self.normals), 1]
            self.noise[0] = self.ou_a * self.noise[0] + self.ou_b * z0
            self.noise[1] = self.ou_a * self.noise[1] + self.ou_b * z1

        lean_x = self.lean_v + op.admittance * dfx + self.noise[0]
        lean_y = lean_y_base + op.admittance * dfy + self.noise[1]
        lean_x = min(max(lean_x, -HMI_TRAVEL_LIMIT), HMI_TRAVEL_LIMIT)
        lean_y = min(max(lean_y, -HMI_TRAVEL_LIMIT), HMI_TRAVEL_LIMIT)
        self.tick_index += 1
        return OperatorState(lean_x=lean_x, lean_y=lean_y)
