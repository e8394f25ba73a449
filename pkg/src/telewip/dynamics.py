"""Planar wheeled-inverted-pendulum dynamics with LQR balance and PD yaw control.

The model is the standard two-wheeled inverted pendulum: a rigid body of mass
``body_mass`` whose centre of mass sits ``com_height`` above the wheel axle,
riding on two driven wheels. Pitch/translation dynamics are coupled through
the usual cart-pole style mass matrix; yaw is decoupled and driven by the
differential wheel torque. All state transitions are pure functions of their
inputs, so trajectories replay bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy import linalg as sla

TWO_PI = 2.0 * math.pi


class ModelConstructionError(ValueError):
    """Raised when physical parameters produce a singular mass matrix."""


class LqrDesignError(RuntimeError):
    """Raised when the Riccati iteration cannot reach the residual tolerance."""


@dataclass(frozen=True)
class WipParams:
    """Physical parameters of the robot. Units: kg, m, kg*m^2, m/s^2, N*m."""

    body_mass: float = 15.0
    wheel_mass: float = 1.5          # per wheel
    wheel_radius: float = 0.125
    com_height: float = 0.5          # axle to body CoM
    body_pitch_inertia: float = 1.2
    body_yaw_inertia: float = 0.3
    wheel_track: float = 0.4
    gravity: float = 9.81
    torque_limit: float = 20.0       # per wheel, hard clamp

    def __post_init__(self):
        for name in ("body_mass", "wheel_mass", "wheel_radius", "com_height",
                     "body_pitch_inertia", "body_yaw_inertia", "wheel_track",
                     "torque_limit"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.gravity < 0.0:
            raise ValueError("gravity must be nonnegative")
        if self.wheel_radius >= self.com_height:
            raise ValueError("wheel_radius must be smaller than com_height")

    def mass_terms(self) -> tuple[float, float, float, float]:
        """(m11, m12, m22, yaw_inertia) of the pitch/translation mass matrix."""
        wheel_spin_inertia = 0.5 * self.wheel_mass * self.wheel_radius ** 2
        m11 = self.body_mass + 2.0 * self.wheel_mass + 2.0 * wheel_spin_inertia / self.wheel_radius ** 2
        m12 = self.body_mass * self.com_height
        m22 = self.body_pitch_inertia + self.body_mass * self.com_height ** 2
        yaw_inertia = (self.body_yaw_inertia
                       + 0.5 * self.wheel_track ** 2
                       * (self.wheel_mass + wheel_spin_inertia / self.wheel_radius ** 2))
        return m11, m12, m22, yaw_inertia

    def as_array(self) -> np.ndarray:
        """Flat parameter vector consumed by the numba step kernel."""
        m11, m12, m22, yaw_inertia = self.mass_terms()
        return np.array([
            m11, m12, m22, yaw_inertia,
            self.body_mass * self.gravity * self.com_height,   # gravity torque gain
            1.0 / self.wheel_radius,
            0.5 * self.wheel_track / self.wheel_radius,        # diff torque -> yaw moment
            self.torque_limit,
        ])


@dataclass(frozen=True)
class WipState:
    """Full planar robot state. Yaw is kept in (-pi, pi]; |pitch| >= pi/2 is a fall."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    velocity: float = 0.0
    pitch_rate: float = 0.0
    yaw_rate: float = 0.0
    fallen: bool = False

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.yaw, self.pitch,
                self.velocity, self.pitch_rate, self.yaw_rate)


@dataclass(frozen=True)
class WheelTorques:
    tau_r: float = 0.0
    tau_l: float = 0.0


@dataclass(frozen=True)
class PdGains:
    kp: float = 1.0
    kd: float = 0.02

    def __post_init__(self):
        if self.kp < 0.0 or self.kd < 0.0:
            raise ValueError("PD gains must be nonnegative")


@dataclass(frozen=True)
class LqrWeights:
    """Diagonal Q over [pitch, pitch_rate, x, velocity] plus scalar R."""

    q_pitch: float = 60.0
    q_pitch_rate: float = 4.0
    q_position: float = 0.5
    q_velocity: float = 12.0
    r_torque: float = 1.0

    def q_matrix(self) -> np.ndarray:
        return np.diag([self.q_pitch, self.q_pitch_rate, self.q_position, self.q_velocity])

    def r_matrix(self) -> np.ndarray:
        return np.array([[self.r_torque]])


@dataclass(frozen=True)
class LqrDesign:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    K: np.ndarray
    riccati_residual: float


def linearize_wip(params: WipParams) -> tuple[np.ndarray, np.ndarray]:
    """Linearize about the upright equilibrium.

    State ordering is [pitch, pitch_rate, x, velocity]; the input is the total
    wheel torque tau_r + tau_l.
    """
    m11, m12, m22, _ = params.mass_terms()
    det = m11 * m22 - m12 * m12
    if det <= 0.0 or not math.isfinite(det):
        raise ModelConstructionError(f"singular mass matrix (det={det})")
    grav = params.body_mass * params.gravity * params.com_height
    inv_r = 1.0 / params.wheel_radius
    a_pitch = m11 * grav / det
    a_vel = -m12 * grav / det
    b_pitch = -(m11 + m12 * inv_r) / det
    b_vel = (m22 * inv_r + m12) / det
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [a_pitch, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [a_vel, 0.0, 0.0, 0.0],
    ])
    B = np.array([[0.0], [b_pitch], [0.0], [b_vel]])
    return A, B


def _check_stabilizable(A: np.ndarray, B: np.ndarray) -> None:
    """PBH test on the unstable eigenvalues."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < -1e-9:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B])
        smin = np.linalg.svd(pencil, compute_uv=False)[-1]
        if smin < 1e-9 * max(1.0, np.linalg.norm(A)):
            raise LqrDesignError(
                f"(A, B) not stabilizable: uncontrollable mode at eigenvalue {lam:.6g}")


def riccati_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray,
                     R: np.ndarray, P: np.ndarray) -> float:
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.abs(res).max())


def solve_lqr_full(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                   tol: float = 1e-9, max_refinements: int = 25,
                   ) -> tuple[np.ndarray, np.ndarray, float]:
    """Infinite-horizon continuous LQR: returns (K, P, residual).

    A direct Riccati solve seeds a Newton-Kleinman iteration (each step solves
    one Lyapunov equation with the current closed loop), which is run until
    the infinity-norm Riccati residual drops below ``tol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise LqrDesignError("Q must be symmetric")
    if np.any(np.linalg.eigvalsh(Q) < -1e-10):
        raise LqrDesignError("Q must be positive semidefinite")
    if np.any(np.linalg.eigvalsh(R) <= 0.0):
        raise LqrDesignError("R must be positive definite")
    _check_stabilizable(A, B)

    P = sla.solve_continuous_are(A, B, Q, R)
    residual = riccati_residual(A, B, Q, R, P)
    for _ in range(max_refinements):
        if residual < tol:
            break
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        P_next = sla.solve_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_next = 0.5 * (P_next + P_next.T)
        next_residual = riccati_residual(A, B, Q, R, P_next)
        if not math.isfinite(next_residual) or next_residual >= residual:
            break
        P, residual = P_next, next_residual
    if residual >= 1e-8:
        raise LqrDesignError(f"Riccati residual {residual:.3e} did not reach 1e-8")

    K = np.linalg.solve(R, B.T @ P)
    abscissa = float(np.max(np.linalg.eigvals(A - B @ K).real))
    if abscissa >= 0.0:
        raise LqrDesignError(f"closed loop not stable (spectral abscissa {abscissa:.3e})")
    return K, P, residual


def solve_lqr(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
              tol: float = 1e-9, max_refinements: int = 25) -> np.ndarray:
    """LQR gain only; see solve_lqr_full."""
    return solve_lqr_full(A, B, Q, R, tol, max_refinements)[0]


def design_balance_controller(params: WipParams,
                              weights: LqrWeights | None = None) -> LqrDesign:
    weights = weights or LqrWeights()
    A, B = linearize_wip(params)
    Q, R = weights.q_matrix(), weights.r_matrix()
    K, _, residual = solve_lqr_full(A, B, Q, R)
    return LqrDesign(A=A, B=B, Q=Q, R=R, K=K, riccati_residual=residual)


def balance_torque(design: LqrDesign, state: WipState, velocity_cmd: float) -> float:
    """Total wheel torque from the LQR gain in deviation coordinates.

    Velocity is tracked as a reference; absolute position is not fed back
    (its error input is held at zero), so the robot holds speed, not station.
    """
    k = design.K.ravel()
    return float(-(k[0] * state.pitch + k[1] * state.pitch_rate
                   + k[3] * (state.velocity - velocity_cmd)))


def pd_yaw(yaw_rate_cmd: float, yaw_rate: float, gains: PdGains,
           err_derivative: float = 0.0, torque_limit: float = 20.0) -> float:
    """Differential torque for yaw-rate tracking: added to the right wheel,
    subtracted from the left."""
    err = yaw_rate_cmd - yaw_rate
    tau = gains.kp * err + gains.kd * err_derivative
    return min(max(tau, -torque_limit), torque_limit)


@njit(cache=True)
def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]. Single-step form: exact identity inside the range,
    and exactly sign-antisymmetric, so mirrored yaw trajectories negate
    bitwise."""
    if a > math.pi:
        return a - TWO_PI
    if a <= -math.pi:
        return a + TWO_PI
    return a


@njit(cache=True)
def step_scalar(x, y, yaw, pitch, velocity, pitch_rate, yaw_rate,
                tau_r, tau_l, par, dt):
    """One semi-implicit Euler step of the nonlinear model.

    ``par`` is WipParams.as_array(). Returns the 7 state scalars plus a
    fallen flag. Torques are clamped to the per-wheel limit before use.
    """
    m11 = par[0]
    m12 = par[1]
    m22 = par[2]
    yaw_inertia = par[3]
    grav = par[4]
    inv_r = par[5]
    diff_gain = par[6]
    tau_max = par[7]

    if tau_r > tau_max:
        tau_r = tau_max
    elif tau_r < -tau_max:
        tau_r = -tau_max
    if tau_l > tau_max:
        tau_l = tau_max
    elif tau_l < -tau_max:
        tau_l = -tau_max

    tau_sum = tau_r + tau_l
    tau_diff = tau_r - tau_l

    c = math.cos(pitch)
    s = math.sin(pitch)
    det = m11 * m22 - (m12 * c) * (m12 * c)
    f1 = tau_sum * inv_r + m12 * s * pitch_rate * pitch_rate
    f2 = grav * s - tau_sum
    acc_v = (m22 * f1 - m12 * c * f2) / det
    acc_pitch = (m11 * f2 - m12 * c * f1) / det
    acc_yaw = diff_gain * tau_diff / yaw_inertia

    velocity = velocity + dt * acc_v
    pitch_rate = pitch_rate + dt * acc_pitch
    yaw_rate = yaw_rate + dt * acc_yaw
    pitch = pitch + dt * pitch_rate
    yaw = wrap_angle(yaw + dt * yaw_rate)
    x = x + dt * velocity * math.cos(yaw)
    y = y + dt * velocity * math.sin(yaw)

    fallen = abs(pitch) >= 0.5 * math.pi
    return x, y, yaw, pitch, velocity, pitch_rate, yaw_rate, fallen


def step(state: WipState, torques: WheelTorques, params: WipParams,
         dt: float) -> WipState:
    """Advance the nonlinear model by one fixed step. Deterministic: identical
    inputs give bit-identical outputs."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = step_scalar(state.x, state.y, state.yaw, state.pitch,
                      state.velocity, state.pitch_rate, state.yaw_rate,
                      torques.tau_r, torques.tau_l, params.as_array(), dt)
    return WipState(x=out[0], y=out[1], yaw=out[2], pitch=out[3],
                    velocity=out[4], pitch_rate=out[5], yaw_rate=out[6],
                    fallen=bool(out[7]))


def mechanical_energy(state: WipState, params: WipParams) -> float:
    """Kinetic plus gravitational potential energy of the pitch/translation
    subsystem (yaw spin included)."""
    m11, m12, m22, yaw_inertia = params.mass_terms()
    v, w = state.velocity, state.pitch_rate
    kinetic = 0.5 * m11 * v * v + 0.5 * m22 * w * w + m12 * math.cos(state.pitch) * v * w
    kinetic += 0.5 * yaw_inertia * state.yaw_rate ** 2
    potential = params.body_mass * params.gravity * params.com_height * math.cos(state.pitch)
    return kinetic + potential


def with_fall_check(state: WipState) -> WipState:
    if abs(state.pitch) >= 0.5 * math.pi and not state.fallen:
        return replace(state, fallen=True)
    return state
