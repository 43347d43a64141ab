# dynamics.py
# quadrotor rigid-body model, RK4 integrator and body-rate controller
#
# Every function accepts either single values (vectors of shape (3,), (4,))
# or stacks of them with a leading agent axis, so one call can advance
# all parallel agents at once.

import logging
import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DomainError, ThrustRangeError

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class QuadParams(BaseModel):
    """Physical parameters of the vehicle (defaults from the race quad)."""

    model_config = ConfigDict(extra="forbid")

    m: float = Field(0.85, gt=0)
    J: Tuple[float, float, float] = (1.0e-3, 1.0e-3, 1.7e-3)
    arm_length: float = Field(0.15, gt=0)
    kappa: float = Field(0.05, ge=0)
    c_f: float = Field(1.563e-6, gt=0)
    f_min: float = Field(0.0, ge=0)
    f_max: float = Field(7.0, gt=0)
    k_mot: float = Field(0.033, gt=0)
    k_v: Tuple[float, float, float] = (0.26, 0.28, 0.42)
    w_max: float = Field(15.0, gt=0)
    g: Tuple[float, float, float] = (0.0, 0.0, -9.81)
    k_w: Tuple[float, float, float] = (20.0, 20.0, 8.0)
    motor_dynamics: bool = True

    @field_validator("J")
    @classmethod
    def inertia_positive(cls, value):
        if min(value) <= 0:
            raise ValueError("all inertia components must be > 0")
        return value

    @field_validator("k_v")
    @classmethod
    def drag_nonnegative(cls, value):
        if min(value) < 0:
            raise ValueError("drag coefficients must be >= 0")
        return value

    @model_validator(mode="after")
    def thrust_range(self):
        if self.f_min >= self.f_max:
            raise ValueError(f"f_min ({self.f_min}) must be < f_max ({self.f_max})")
        return self

    @property
    def inertia(self):
        return np.asarray(self.J, dtype=float)

    @property
    def drag(self):
        return np.asarray(self.k_v, dtype=float)

    @property
    def gravity(self):
        return np.asarray(self.g, dtype=float)

    @property
    def rate_gain(self):
        return np.asarray(self.k_w, dtype=float)


@dataclass
class QuadState:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray
    omega: np.ndarray

    @classmethod
    def hover(cls, params, p=(0.0, 0.0, 0.0)):
        """At rest, level, rotors spinning at hover speed."""
        return cls(
            p=np.asarray(p, dtype=float).copy(),
            q=np.array([1.0, 0.0, 0.0, 0.0]),
            v=np.zeros(3),
            w=np.zeros(3),
            omega=np.full(4, hover_speed(params)),
        )

    def to_vector(self):
        return np.concatenate([self.p, self.q, self.v, self.w, self.omega], axis=-1)

    @classmethod
    def from_vector(cls, x):
        return cls(
            p=x[..., 0:3],
            q=x[..., 3:7],
            v=x[..., 7:10],
            w=x[..., 10:13],
            omega=x[..., 13:17],
        )

    def copy(self):
        return QuadState.from_vector(self.to_vector().copy())

    @staticmethod
    def stack(states):
        return QuadState.from_vector(np.stack([s.to_vector() for s in states]))

    def unstack(self):
        x = self.to_vector()
        return [QuadState.from_vector(row.copy()) for row in x]

    def is_finite(self):
        return bool(np.all(np.isfinite(self.to_vector())))


@dataclass
class BodyRateCommand:
    f_T: np.ndarray
    w_cmd: np.ndarray


@dataclass
class MotorCommand:
    omega_c: np.ndarray
    saturated: np.ndarray = False


# Quaternion helpers, scalar first (w, x, y, z)


def quat_multiply(q, r):
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r0, r1, r2, r3 = r[..., 0], r[..., 1], r[..., 2], r[..., 3]
    return np.stack(
        [
            q0 * r0 - q1 * r1 - q2 * r2 - q3 * r3,
            q0 * r1 + q1 * r0 + q2 * r3 - q3 * r2,
            q0 * r2 - q1 * r3 + q2 * r0 + q3 * r1,
            q0 * r3 + q1 * r2 - q2 * r1 + q3 * r0,
        ],
        axis=-1,
    )


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotation(q):
    """world <- body rotation matrix of a unit quaternion"""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


# Motors and forces


def motor_thrust(omega, params):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise DomainError(f"rotor speed must be >= 0, got {omega}")
    return params.c_f * omega**2


def motor_speed_for_thrust(f, params):
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError(f"thrust must be >= 0, got {f}")
    return np.sqrt(f / params.c_f)


def hover_speed(params):
    per_motor = params.m * np.linalg.norm(params.gravity) / 4
    return float(motor_speed_for_thrust(per_motor, params))


def rotor_speed_limits(params):
    return (
        float(motor_speed_for_thrust(params.f_min, params)),
        float(motor_speed_for_thrust(params.f_max, params)),
    )


def mixing_matrix(params):
    """Maps per-motor thrusts to (collective thrust, roll, pitch, yaw torque)."""
    a = params.arm_length / SQRT2
    k = params.kappa
    return np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [a, -a, -a, a],
            [-a, -a, a, a],
            [k, -k, k, -k],
        ]
    )


def thrust_torque(f, params):
    f = np.asarray(f, dtype=float)
    tol = 1e-9 * max(1.0, params.f_max)
    if np.any(f < params.f_min - tol) or np.any(f > params.f_max + tol):
        raise ThrustRangeError(
            f"motor thrusts {f} outside [{params.f_min}, {params.f_max}] N"
        )
    wrench = f @ mixing_matrix(params).T
    zeros = np.zeros_like(wrench[..., 0])
    f_T = np.stack([zeros, zeros, wrench[..., 0]], axis=-1)
    return f_T, wrench[..., 1:4]


def drag_force(v_body, params, k_v=None):
    k = params.drag if k_v is None else np.asarray(k_v, dtype=float)
    return -k * np.asarray(v_body, dtype=float)


def state_derivative(state, motor_thrusts, params, k_v=None):
    """Time derivative of the rigid-body part of the state.

    The rotor speed entry of the result is zero; the motor lag is added by
    `step`, which owns the commanded speeds.
    """
    R = quat_to_rotation(quat_normalize(state.q))
    v_body = np.einsum("...ji,...j->...i", R, state.v)
    f_T, tau = thrust_torque(motor_thrusts, params)
    force = f_T + drag_force(v_body, params, k_v)
    v_dot = np.einsum("...ij,...j->...i", R, force) / params.m + params.gravity

    w = state.w
    zeros = np.zeros_like(w[..., :1])
    q_dot = 0.5 * quat_multiply(state.q, np.concatenate([zeros, w], axis=-1))

    J = params.inertia
    w_dot = (tau - np.cross(w, J * w)) / J
    return QuadState(
        p=np.array(state.v, dtype=float),
        q=q_dot,
        v=v_dot,
        w=w_dot,
        omega=np.zeros_like(state.omega, dtype=float),
    )


def step(state, cmd, dt, params, k_v=None):
    """Advance the state by dt with one classic RK4 step.

    Rotor speeds are part of the integrated vector and follow the first
    order lag towards cmd.omega_c. With motor_dynamics off they jump to the
    command at the start of the step.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    omega_c = np.asarray(cmd.omega_c, dtype=float)
    lo, hi = rotor_speed_limits(params)
    if not params.motor_dynamics:
        state = replace(
            state, omega=np.broadcast_to(omega_c, np.shape(state.omega)).copy()
        )

    def derivative(y):
        s = QuadState.from_vector(y)
        # RK4 stages can overshoot the command when dt > k_mot
        omega = np.clip(s.omega, lo, hi)
        d = state_derivative(
            replace(s, omega=omega), motor_thrust(omega, params), params, k_v
        )
        if params.motor_dynamics:
            d.omega = (omega_c - s.omega) / params.k_mot
        return d.to_vector()

    y0 = state.to_vector()
    k1 = derivative(y0)
    k2 = derivative(y0 + 0.5 * dt * k1)
    k3 = derivative(y0 + 0.5 * dt * k2)
    k4 = derivative(y0 + dt * k3)
    y = y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    out = QuadState.from_vector(y)
    out.q = quat_normalize(out.q)
    out.omega = np.clip(out.omega, lo, hi)
    return out


# Low-level body-rate controller


def desired_torque(w, w_cmd, params):
    J = params.inertia
    w = np.asarray(w, dtype=float)
    return J * params.rate_gain * (np.asarray(w_cmd, dtype=float) - w) + np.cross(
        w, J * w
    )


def allocate(f_T, tau, params):
    """Solve the mixer for per-motor thrusts, keeping collective thrust first.

    When the requested torque does not fit into the thrust box around the
    collective thrust, the torque part is scaled down uniformly. Returns
    (thrusts, saturated).
    """
    f_T = np.asarray(f_T, dtype=float)
    tau = np.asarray(tau, dtype=float)
    wrench = np.concatenate([f_T[..., None], tau], axis=-1)
    f_raw = wrench @ np.linalg.inv(mixing_matrix(params)).T
    base = f_T[..., None] / 4.0
    delta = f_raw - base

    tol = 1e-12 * params.f_max
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = np.where(
            base + delta > params.f_max + tol, (params.f_max - base) / delta, 1.0
        )
        lower = np.where(
            base + delta < params.f_min - tol, (params.f_min - base) / delta, 1.0
        )
    alpha = np.clip(np.minimum(upper.min(axis=-1), lower.min(axis=-1)), 0.0, 1.0)
    f = np.clip(base + alpha[..., None] * delta, params.f_min, params.f_max)
    saturated = alpha < 1.0
    if np.any(saturated):
        logger.debug("motor allocation saturated, torque scale %s", alpha)
    return f, saturated


def low_level_control(state, cmd, params):
    f_T = np.clip(np.asarray(cmd.f_T, dtype=float), 4 * params.f_min, 4 * params.f_max)
    w_cmd = np.clip(np.asarray(cmd.w_cmd, dtype=float), -params.w_max, params.w_max)
    tau = desired_torque(state.w, w_cmd, params)
    f, saturated = allocate(f_T, tau, params)
    return MotorCommand(omega_c=motor_speed_for_thrust(f, params), saturated=saturated)
