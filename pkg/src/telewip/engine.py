"""Fused simulation loop: robot, force field, shared control, operator.

The whole 1 kHz tick is one compiled function over flat arrays, so headless
batches run far faster than real time on a single core. The scalar math is
imported from the per-domain modules (dynamics, forcefield, sharedcontrol,
operators, worlds) rather than duplicated, and a pure-Python composition of
those modules reproduces the kernel's trajectories exactly; a test enforces
that equivalence.

Two drive modes share the loop: the synthetic operator runs inside the
kernel, or a pre-recorded lean tape (live bridge input or a replay) is
consumed tick by tick. All randomness is pre-generated, so a trial is a
pure function of its seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import (LqrWeights, PdGains, WipParams, WipState,
                       design_balance_controller, step_scalar, wrap_angle)
from .forcefield import ForceParams, rate_force_s
from .operators import (SyntheticOperator, avoidance_bias_s, generate_noise,
                        inverse_piecewise_s, next_waypoint_s, ou_coefficients)
from .sharedcontrol import (HMI_FORCE_LIMIT, HMI_TRAVEL_LIMIT, FeedbackConfig,
                            FeedbackMode, VelocityMapping, clamp_s,
                            piecewise_map_s)
from .worlds import (MIDPOINT_RADIUS, ROBOT_RADIUS, CollisionEvent, MapSpec,
                     MapState, advance_obstacles, resolve_contacts_s)

# state-vector slots
SV_X, SV_Y, SV_YAW, SV_PITCH, SV_V, SV_PITCHRATE, SV_YAWRATE = range(7)
SV_NOISE_X, SV_NOISE_Y = 7, 8
SV_PREV_YAW_ERR = 9
SV_OP_BEST_X, SV_OP_STUCK, SV_ESCAPE_LEFT, SV_ESCAPE_DIR, SV_ESCAPE_COUNT = 10, 11, 12, 13, 14
SV_TARGET_IDX, SV_WP_X, SV_WP_Y, SV_REPLAN = 15, 16, 17, 18
SV_AVOID_BIAS, SV_SPEED_FACTOR = 19, 20
SV_LEAN_V = 21
SV_FX, SV_FY = 22, 23
SV_CMD_FIELD, SV_HAP_FIELD = 24, 25
SV_TICK = 26
SV_LEAN_X, SV_LEAN_Y = 27, 28
SV_VCMD, SV_YAWCMD = 29, 30
SV_OU_A, SV_OU_B = 31, 32
SV_RUN_BEST_X, SV_RUN_STUCK = 33, 34
SV_SIZE = 35

# counts slots
CNT_TRAJ, CNT_CMD, CNT_EVENTS, CNT_COLL_OBS, CNT_COLL_WALL = range(5)
CNT_TICKS, CNT_OUTCOME, CNT_MID_DONE = 5, 6, 7
CNT_SIZE = 8

OUTCOME_RUNNING, OUTCOME_SUCCESS, OUTCOME_TIMEOUT, OUTCOME_FELL = 0, 1, 2, 3
OUTCOME_NAMES = {OUTCOME_RUNNING: "running", OUTCOME_SUCCESS: "success",
                 OUTCOME_TIMEOUT: "timeout", OUTCOME_FELL: "fell"}

MODE_CODES = {FeedbackMode.NONE: 0, FeedbackMode.HAPTIC: 1,
              FeedbackMode.COMMAND: 2, FeedbackMode.COMBINED: 3}


@dataclass(frozen=True)
class EngineConfig:
    wip: WipParams = field(default_factory=WipParams)
    weights: LqrWeights = field(default_factory=LqrWeights)
    pd: PdGains = field(default_factory=PdGains)
    force: ForceParams = field(default_factory=ForceParams)
    mapping: VelocityMapping = field(default_factory=VelocityMapping)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    operator: SyntheticOperator = field(default_factory=SyntheticOperator)
    dt: float = 1e-3
    timeout_s: float = 180.0
    stall_timeout_s: float = 20.0
    robot_radius: float = ROBOT_RADIUS
    trajectory_stride: int = 20       # 50 Hz at the 1 ms step
    contact_hysteresis: float = 0.05

    def __post_init__(self):
        if self.dt <= 0.0 or self.timeout_s <= 0.0:
            raise ValueError("dt and timeout must be positive")
        if self.trajectory_stride < 1:
            raise ValueError("trajectory_stride must be >= 1")


@dataclass
class EngineResult:
    outcome: str
    duration: float
    ticks: int
    trajectory: np.ndarray      # rows [t, x, y, yaw, pitch, v, pitch_rate, yaw_rate]
    commands: np.ndarray        # rows [v_cmd, yaw_cmd, lean_x, lean_y, f_x, f_y, cmd_field, hap_field]
    events: list[CollisionEvent]
    obstacle_collisions: int
    wall_collisions: int
    midpoints_done: int
    final_state: WipState


@njit(cache=True)
def run_ticks(sv, centers, velocities, radii, contact, onsets, pens,
              pose_ring, force_ring, snap, normals, jitter, tape,
              traj, cmd_log, events, counts,
              par_dyn, par_ctl, par_force, par_opmap, par_op,
              par_world, par_run, n_ticks, operator_mode):
    dt = par_run[0]
    timeout_ticks = int(par_run[1])
    stall_ticks = int(par_run[2])
    stride = int(par_run[3])
    hyst = par_run[4]
    travel = par_run[5]
    f_limit = par_run[6]

    k0, k1, k3, kp, kd = par_ctl[0], par_ctl[1], par_ctl[2], par_ctl[3], par_ctl[4]
    mag, slope = par_force[0], par_force[1]
    act_cmd, act_hap = par_force[2], par_force[3]
    w1, w2 = par_force[4], par_force[5]
    lam, mu = par_force[6], par_force[7]
    kx, ky = par_force[8], par_force[9]
    mode_code = int(par_force[10])
    use_cmd = mode_code == 2 or mode_code == 3
    use_hap = mode_code == 1 or mode_code == 3

    db_x, db_y, knee = par_opmap[0], par_opmap[1], par_opmap[2]
    sl_lx, sl_hx = par_opmap[3], par_opmap[4]
    sl_ly, sl_hy = par_opmap[5], par_opmap[6]
    vmax, wmax = par_opmap[7], par_opmap[8]

    vision = par_op[0]
    adm = par_op[1]
    noise_on = par_op[2] > 0.5
    cruise = par_op[3]
    k_heading = par_op[4]
    speed_gain = par_op[5]
    k_avoid = par_op[6]
    avoid_range = par_op[7]
    replan_ticks = int(par_op[8])
    op_stuck_ticks = int(par_op[9])
    escape_ticks = int(par_op[10])
    spring_boost = par_op[11]

    x_min, x_max, y_min, y_max = par_world[0], par_world[1], par_world[2], par_world[3]
    goal_x = par_world[4]
    n_mid = int(par_world[9])
    robot_r = par_world[10]
    mid_r = par_world[11]

    n_obs = centers.shape[0]
    delay = pose_ring.shape[0]
    ou_a, ou_b = sv[SV_OU_A], sv[SV_OU_B]
    outcome = OUTCOME_RUNNING

    for _ in range(n_ticks):
        tick = int(sv[SV_TICK])
        if tick >= timeout_ticks:
            outcome = OUTCOME_TIMEOUT
            break

        x, y = sv[SV_X], sv[SV_Y]
        yaw, pitch = sv[SV_YAW], sv[SV_PITCH]
        v, pitch_rate, yaw_rate = sv[SV_V], sv[SV_PITCHRATE], sv[SV_YAWRATE]

        # ---- operator perception ring (reaction delay) ----
        slot = tick % delay
        dpx, dpy = pose_ring[slot, 0], pose_ring[slot, 1]
        dyaw, dv = pose_ring[slot, 2], pose_ring[slot, 3]
        dfx, dfy = force_ring[slot, 0], force_ring[slot, 1]
        pose_ring[slot, 0] = x
        pose_ring[slot, 1] = y
        pose_ring[slot, 2] = yaw
        pose_ring[slot, 3] = v
        force_ring[slot, 0] = sv[SV_FX]
        force_ring[slot, 1] = sv[SV_FY]

        if operator_mode == 0:
            # ---- synthetic operator ----
            if sv[SV_REPLAN] <= 0.0:
                for i in range(n_obs):
                    snap[i, 0] = centers[i, 0]
                    snap[i, 1] = centers[i, 1]
                tgt = int(sv[SV_TARGET_IDX])
                while tgt < n_mid:
                    tx = par_world[5 + 2 * tgt]
                    ty = par_world[6 + 2 * tgt]
                    if math.sqrt((dpx - tx) ** 2 + (dpy - ty) ** 2) <= mid_r:
                        tgt += 1
                    else:
                        break
                sv[SV_TARGET_IDX] = tgt
                if tgt < n_mid:
                    tx = par_world[5 + 2 * tgt]
                    ty = par_world[6 + 2 * tgt]
                else:
                    tx = goal_x
                    ty = par_world[12]
                wx, wy, _ = next_waypoint_s(dpx, dpy, tx, ty, snap, radii,
                                            n_obs, y_min, y_max, robot_r, vision)
                sv[SV_WP_X], sv[SV_WP_Y] = wx, wy
                bias, sfac = avoidance_bias_s(dpx, dpy, dyaw, snap, radii, n_obs,
                                              robot_r, vision, k_avoid, avoid_range)
                sv[SV_AVOID_BIAS], sv[SV_SPEED_FACTOR] = bias, sfac
                sv[SV_REPLAN] = replan_ticks
            sv[SV_REPLAN] -= 1.0

            if sv[SV_ESCAPE_LEFT] > 0.0:
                sv[SV_ESCAPE_LEFT] -= 1.0
                v_des = -0.4
                yaw_des = sv[SV_ESCAPE_DIR] * 0.8
                if sv[SV_ESCAPE_LEFT] == 0.0:
                    sv[SV_OP_STUCK] = 0.0
            else:
                if dpx > sv[SV_OP_BEST_X] + 0.05:
                    sv[SV_OP_BEST_X] = dpx
                    sv[SV_OP_STUCK] = 0.0
                else:
                    sv[SV_OP_STUCK] += 1.0
                if sv[SV_OP_STUCK] >= op_stuck_ticks:
                    sv[SV_ESCAPE_LEFT] = escape_ticks
                    j = jitter[int(sv[SV_ESCAPE_COUNT]) % 64]
                    sv[SV_ESCAPE_DIR] = 1.0 if j < 0.5 else -1.0
                    sv[SV_ESCAPE_COUNT] += 1.0
                    sv[SV_OP_STUCK] = 0.0
                heading = math.atan2(sv[SV_WP_Y] - dpy, sv[SV_WP_X] - dpx)
                err = wrap_angle(heading - dyaw)
                yaw_des = k_heading * err + sv[SV_AVOID_BIAS]
                v_des = cruise * sv[SV_SPEED_FACTOR] / (1.0 + 1.2 * abs(err))

            lv = sv[SV_LEAN_V] + speed_gain * (v_des - dv) * dt
            if lv > travel:
                lv = travel
            elif lv < -travel:
                lv = -travel
            sv[SV_LEAN_V] = lv
            lean_y_base = spring_boost * inverse_piecewise_s(
                -yaw_des, db_y, sl_ly, sl_hy, knee, wmax, travel)

            if noise_on:
                nrow = tick % normals.shape[0]
                sv[SV_NOISE_X] = ou_a * sv[SV_NOISE_X] + ou_b * normals[nrow, 0]
                sv[SV_NOISE_Y] = ou_a * sv[SV_NOISE_Y] + ou_b * normals[nrow, 1]

            lean_x = lv + adm * dfx + sv[SV_NOISE_X]
            lean_y = lean_y_base + adm * dfy + sv[SV_NOISE_Y]
            if lean_x > travel:
                lean_x = travel
            elif lean_x < -travel:
                lean_x = -travel
            if lean_y > travel:
                lean_y = travel
            elif lean_y < -travel:
                lean_y = -travel
        else:
            row = tick % tape.shape[0]
            lean_x = tape[row, 0]
            lean_y = tape[row, 1]

        sv[SV_LEAN_X], sv[SV_LEAN_Y] = lean_x, lean_y

        # ---- lean to command ----
        v_cmd = piecewise_map_s(lean_x, db_x, sl_lx, sl_hx, knee, vmax)
        yaw_cmd_d = -piecewise_map_s(lean_y, db_y, sl_ly, sl_hy, knee, wmax)

        # ---- force fields from the true world ----
        vx = v * math.cos(yaw)
        vy = v * math.sin(yaw)
        obs_cmd = 0.0
        wall_cmd = 0.0
        obs_hap = 0.0
        wall_hap = 0.0
        act_far = act_cmd if act_cmd > act_hap else act_hap
        if use_cmd or use_hap:
            for i in range(n_obs):
                dx = centers[i, 0] - x
                dy = centers[i, 1] - y
                if abs(dx) > act_far + radii[i] + robot_r:
                    continue
                d = math.sqrt(dx * dx + dy * dy)
                p = d - radii[i] - robot_r
                if p < 0.0:
                    p = 0.0
                if p > act_far:
                    continue
                if d > 1e-12:
                    ux, uy = dx / d, dy / d
                else:
                    ux, uy = 1.0, 0.0
                p_dot = (velocities[i, 0] - vx) * ux + (velocities[i, 1] - vy) * uy
                bearing = wrap_angle(math.atan2(dy, dx) - yaw)
                if use_cmd:
                    f = rate_force_s(p, p_dot, mag, slope, act_cmd)
                    if f != 0.0:
                        obs_cmd += f * bearing
                if use_hap:
                    f = rate_force_s(p, p_dot, mag, slope, act_hap)
                    if f != 0.0:
                        obs_hap += f * math.sin(bearing)
            for w in range(2):
                if w == 0:
                    gap = (y - y_min)
                    p_dot = vy
                    bearing = wrap_angle(-0.5 * math.pi - yaw)
                else:
                    gap = (y_max - y)
                    p_dot = -vy
                    bearing = wrap_angle(0.5 * math.pi - yaw)
                p = gap - robot_r
                if p < 0.0:
                    p = 0.0
                if p > act_far:
                    continue
                if use_cmd:
                    f = rate_force_s(p, p_dot, mag, slope, act_cmd)
                    if f != 0.0:
                        wall_cmd += f * bearing
                if use_hap:
                    f = rate_force_s(p, p_dot, mag, slope, act_hap)
                    if f != 0.0:
                        wall_hap += f * math.sin(bearing)
        cmd_field = -(w1 * obs_cmd + w2 * wall_cmd) if use_cmd else 0.0
        hap_field = -(w1 * obs_hap + w2 * wall_hap) if use_hap else 0.0
        sv[SV_CMD_FIELD], sv[SV_HAP_FIELD] = cmd_field, hap_field

        # ---- shared control ----
        yaw_star = clamp_s(lam * yaw_cmd_d + cmd_field, wmax)
        fx = clamp_s(-kx * lean_x, f_limit)
        fy = clamp_s(-ky * lean_y - mu * hap_field, f_limit)
        sv[SV_FX], sv[SV_FY] = fx, fy
        sv[SV_VCMD], sv[SV_YAWCMD] = v_cmd, yaw_star

        # ---- balance + yaw control ----
        u = -(k0 * pitch + k1 * pitch_rate + k3 * (v - v_cmd))
        yaw_err = yaw_star - yaw_rate
        tau_d = kp * yaw_err + kd * ((yaw_err - sv[SV_PREV_YAW_ERR]) / dt)
        sv[SV_PREV_YAW_ERR] = yaw_err
        lim = par_dyn[7]
        if tau_d > lim:
            tau_d = lim
        elif tau_d < -lim:
            tau_d = -lim
        tau_r = 0.5 * u + tau_d
        tau_l = 0.5 * u - tau_d

        x, y, yaw, pitch, v, pitch_rate, yaw_rate, fallen = step_scalar(
            x, y, yaw, pitch, v, pitch_rate, yaw_rate, tau_r, tau_l, par_dyn, dt)

        # ---- world update ----
        advance_obstacles(centers, velocities, radii, x_min, x_max, y_min, y_max, dt)

        # ---- contacts: positional pushout + event debounce ----
        t_now = (tick + 1) * dt
        x, y, v, n_onsets = resolve_contacts_s(
            x, y, yaw, v, centers, radii, robot_r, y_min, y_max, hyst,
            contact, onsets, pens)
        for j in range(min(n_onsets, onsets.shape[0])):
            idx = onsets[j]
            is_wall = idx >= n_obs
            if is_wall:
                counts[CNT_COLL_WALL] += 1
            else:
                counts[CNT_COLL_OBS] += 1
            k = counts[CNT_EVENTS]
            if k < events.shape[0]:
                events[k, 0] = t_now
                events[k, 1] = 1.0 if is_wall else 0.0
                events[k, 2] = idx - n_obs if is_wall else idx
                events[k, 3] = pens[j]
                counts[CNT_EVENTS] = k + 1

        sv[SV_X], sv[SV_Y] = x, y
        sv[SV_YAW], sv[SV_PITCH] = yaw, pitch
        sv[SV_V], sv[SV_PITCHRATE], sv[SV_YAWRATE] = v, pitch_rate, yaw_rate
        sv[SV_TICK] = tick + 1

        # ---- task progress ----
        done = counts[CNT_MID_DONE]
        if done < n_mid:
            tx = par_world[5 + 2 * done]
            ty = par_world[6 + 2 * done]
            if math.sqrt((x - tx) ** 2 + (y - ty) ** 2) <= mid_r:
                counts[CNT_MID_DONE] = done + 1

        # ---- logging at the trajectory stride ----
        if (tick + 1) % stride == 0:
            k = counts[CNT_TRAJ]
            if k < traj.shape[0]:
                traj[k, 0] = t_now
                traj[k, 1] = x
                traj[k, 2] = y
                traj[k, 3] = yaw
                traj[k, 4] = pitch
                traj[k, 5] = v
                traj[k, 6] = pitch_rate
                traj[k, 7] = yaw_rate
                counts[CNT_TRAJ] = k + 1
            k = counts[CNT_CMD]
            if k < cmd_log.shape[0]:
                cmd_log[k, 0] = v_cmd
                cmd_log[k, 1] = yaw_star
                cmd_log[k, 2] = lean_x
                cmd_log[k, 3] = lean_y
                cmd_log[k, 4] = fx
                cmd_log[k, 5] = fy
                cmd_log[k, 6] = cmd_field
                cmd_log[k, 7] = hap_field
                counts[CNT_CMD] = k + 1

        # ---- termination ----
        if fallen:
            outcome = OUTCOME_FELL
            break
        if x >= goal_x and counts[CNT_MID_DONE] == n_mid:
            outcome = OUTCOME_SUCCESS
            break
        if x > sv[SV_RUN_BEST_X] + 0.05:
            sv[SV_RUN_BEST_X] = x
            sv[SV_RUN_STUCK] = 0.0
        else:
            sv[SV_RUN_STUCK] += 1.0
            if sv[SV_RUN_STUCK] >= stall_ticks:
                outcome = OUTCOME_TIMEOUT
                break

    if outcome != OUTCOME_RUNNING:
        # log the terminal state even when it falls between strides, so the
        # recorded trajectory always ends at the outcome instant
        t_end = sv[SV_TICK] * dt
        k = counts[CNT_TRAJ]
        if k < traj.shape[0] and (k == 0 or traj[k - 1, 0] != t_end):
            traj[k, 0] = t_end
            traj[k, 1] = sv[SV_X]
            traj[k, 2] = sv[SV_Y]
            traj[k, 3] = sv[SV_YAW]
            traj[k, 4] = sv[SV_PITCH]
            traj[k, 5] = sv[SV_V]
            traj[k, 6] = sv[SV_PITCHRATE]
            traj[k, 7] = sv[SV_YAWRATE]
            counts[CNT_TRAJ] = k + 1
            k = counts[CNT_CMD]
            if k < cmd_log.shape[0]:
                cmd_log[k, 0] = sv[SV_VCMD]
                cmd_log[k, 1] = sv[SV_YAWCMD]
                cmd_log[k, 2] = sv[SV_LEAN_X]
                cmd_log[k, 3] = sv[SV_LEAN_Y]
                cmd_log[k, 4] = sv[SV_FX]
                cmd_log[k, 5] = sv[SV_FY]
                cmd_log[k, 6] = sv[SV_CMD_FIELD]
                cmd_log[k, 7] = sv[SV_HAP_FIELD]
                counts[CNT_CMD] = k + 1

    counts[CNT_TICKS] = int(sv[SV_TICK])
    counts[CNT_OUTCOME] = outcome
    return outcome


class Engine:
    """One simulation instance bound to a map and a configuration."""

    def __init__(self, spec: MapSpec, config: EngineConfig,
                 tape: np.ndarray | None = None):
        self.spec = spec
        self.config = config
        design = design_balance_controller(config.wip, config.weights)
        k = design.K.ravel()
        self.design = design

        self.centers, self.velocities, self.radii = spec.obstacle_arrays()
        n_obs = len(spec.obstacles)
        self.contact = np.zeros(n_obs + 2, dtype=np.int8)
        self.onsets = np.zeros(16, dtype=np.int64)
        self.pens = np.zeros(16)

        op = config.operator
        dt = config.dt
        self.timeout_ticks = int(round(config.timeout_s / dt))
        delay = max(1, int(round(op.reaction_delay / dt)))
        sx, sy, syaw = spec.start
        self.pose_ring = np.zeros((delay, 4))
        self.pose_ring[:, 0] = sx
        self.pose_ring[:, 1] = sy
        self.pose_ring[:, 2] = syaw
        self.force_ring = np.zeros((delay, 2))
        self.snap = self.centers.copy()

        self.synthetic = tape is None
        if self.synthetic:
            self.normals, self.jitter = generate_noise(op.seed, self.timeout_ticks)
            if not op.noise_enabled:
                self.normals = np.zeros((1, 2))
            self.tape = np.zeros((1, 2))
        else:
            self.normals = np.zeros((1, 2))
            self.jitter = np.zeros(64)
            self.tape = np.asarray(tape, dtype=float).reshape(-1, 2)

        max_rows = self.timeout_ticks // config.trajectory_stride + 2
        self.traj = np.zeros((max_rows, 8))
        self.cmd_log = np.zeros((max_rows, 8))
        self.events = np.zeros((512, 4))
        self.counts = np.zeros(CNT_SIZE, dtype=np.int64)
        self.traj[0, 1:4] = (sx, sy, syaw)
        self.counts[CNT_TRAJ] = 1
        self.counts[CNT_CMD] = 1

        sv = np.zeros(SV_SIZE)
        sv[SV_X], sv[SV_Y], sv[SV_YAW] = sx, sy, syaw
        sv[SV_WP_X], sv[SV_WP_Y] = spec.goal_x, sy
        sv[SV_OP_BEST_X] = sx
        sv[SV_RUN_BEST_X] = sx
        sv[SV_SPEED_FACTOR] = 1.0
        ou_a, ou_b = ou_coefficients(dt, op.noise_std)
        sv[SV_OU_A], sv[SV_OU_B] = ou_a, ou_b
        self.sv = sv

        self.par_dyn = config.wip.as_array()
        self.par_ctl = np.array([k[0], k[1], k[3], config.pd.kp, config.pd.kd])
        f = config.force
        fb = config.feedback
        self.par_force = np.array([
            f.magnitude_gain, f.slope_gain,
            fb.activation_command, fb.activation_haptic,
            f.obstacle_weight, f.wall_weight,
            f.command_sensitivity, f.haptic_gain,
            f.spring_kx, f.spring_ky,
            float(MODE_CODES[fb.mode]),
        ])
        m = config.mapping
        self.par_opmap = np.array([
            m.deadband_x, m.deadband_y, m.knee,
            m.slope_low_x, m.slope_high_x, m.slope_low_y, m.slope_high_y,
            m.v_max, m.yaw_rate_max,
        ])
        spring_boost = 1.0 + op.admittance * f.spring_ky
        self.par_op = np.array([
            op.vision_radius * spec.brightness, op.admittance,
            1.0 if (self.synthetic and op.noise_enabled) else 0.0,
            op.cruise_speed, op.heading_gain, op.speed_gain,
            op.avoid_gain, op.avoid_range,
            max(1, round(op.replan_interval / dt)),
            round(op.stuck_time / dt), round(op.escape_time / dt),
            spring_boost,
        ])
        x_min, x_max, y_min, y_max = spec.bounds
        if len(spec.midpoints) > 2:
            raise ValueError("engine supports at most two ordered midpoints")
        mids = list(spec.midpoints) + [(0.0, 0.0)] * (2 - len(spec.midpoints))
        self.par_world = np.array([
            x_min, x_max, y_min, y_max, spec.goal_x,
            mids[0][0], mids[0][1], mids[1][0], mids[1][1],
            float(len(spec.midpoints)), config.robot_radius, MIDPOINT_RADIUS,
            sy,
        ])
        self.par_run = np.array([
            dt, float(self.timeout_ticks),
            round(config.stall_timeout_s / dt),
            float(config.trajectory_stride), config.contact_hysteresis,
            HMI_TRAVEL_LIMIT, HMI_FORCE_LIMIT,
        ])

    def advance(self, n_ticks: int) -> int:
        """Run up to n_ticks; returns the outcome code (0 while running)."""
        return run_ticks(self.sv, self.centers, self.velocities, self.radii,
                         self.contact, self.onsets, self.pens,
                         self.pose_ring, self.force_ring,
                         self.snap, self.normals, self.jitter, self.tape,
                         self.traj, self.cmd_log, self.events, self.counts,
                         self.par_dyn, self.par_ctl, self.par_force,
                         self.par_opmap, self.par_op, self.par_world,
                         self.par_run, n_ticks, 0 if self.synthetic else 1)

    def run(self) -> EngineResult:
        """Run to completion (goal, fall, stall, or timeout)."""
        outcome = self.advance(self.timeout_ticks + 1)
        if outcome == OUTCOME_RUNNING:      # tape shorter than needed
            outcome = OUTCOME_TIMEOUT
        return self.result(outcome)

    def result(self, outcome_code: int | None = None) -> EngineResult:
        code = self.counts[CNT_OUTCOME] if outcome_code is None else outcome_code
        events = []
        for k in range(self.counts[CNT_EVENTS]):
            t, kind, idx, pen = self.events[k]
            target = (f"wall:{int(idx)}" if kind == 1.0
                      else f"obstacle:{self.spec.obstacles[int(idx)].id}")
            events.append(CollisionEvent(time=t, target=target, penetration=pen))
        sv = self.sv
        return EngineResult(
            outcome=OUTCOME_NAMES[int(code)],
            duration=self.counts[CNT_TICKS] * self.config.dt,
            ticks=int(self.counts[CNT_TICKS]),
            trajectory=self.traj[:self.counts[CNT_TRAJ]].copy(),
            commands=self.cmd_log[:self.counts[CNT_CMD]].copy(),
            events=events,
            obstacle_collisions=int(self.counts[CNT_COLL_OBS]),
            wall_collisions=int(self.counts[CNT_COLL_WALL]),
            midpoints_done=int(self.counts[CNT_MID_DONE]),
            final_state=WipState(
                x=sv[SV_X], y=sv[SV_Y], yaw=sv[SV_YAW], pitch=sv[SV_PITCH],
                velocity=sv[SV_V], pitch_rate=sv[SV_PITCHRATE],
                yaw_rate=sv[SV_YAWRATE], fallen=code == OUTCOME_FELL),
        )

    def map_state(self) -> MapState:
        return MapState(self.spec, self.centers.copy(),
                        self.velocities.copy(), self.radii.copy())
