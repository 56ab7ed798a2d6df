"""Single rigid-body flight dynamics driven by a saturated, delayed wrench.

Conventions: translational states live in the world frame (z up), rotational
states in the body frame. With that split the mass matrix is the constant
``blockdiag(m I3, I)`` and the Coriolis/centrifugal term reduces to the
gyroscopic torque ``ω × Iω``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _math as vm


class SimulationFault(RuntimeError):
    """Raised when the integrated state stops being finite."""


class FrameMismatch(ValueError):
    pass


class Frame(enum.Enum):
    WORLD = "world"
    BODY = "body"


def _vec(x, n=3) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"expected a {n}-vector, got shape {a.shape}")
    return a


@dataclass
class Wrench:
    force: np.ndarray
    torque: np.ndarray
    frame: Frame = Frame.BODY

    def __post_init__(self):
        self.force = _vec(self.force)
        self.torque = _vec(self.torque)
        self.frame = Frame(self.frame)

    @classmethod
    def zero(cls, frame: Frame = Frame.BODY) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    def expect(self, frame: Frame) -> "Wrench":
        if self.frame is not frame:
            raise FrameMismatch(f"wrench is in {self.frame.value} frame, expected {frame.value}")
        return self

    def to_frame(self, frame: Frame, orientation) -> "Wrench":
        """Re-express both parts in ``frame`` given the body attitude."""
        if frame is self.frame:
            return Wrench(self.force.copy(), self.torque.copy(), frame)
        R = rotation_matrix(orientation)
        if frame is Frame.WORLD:
            return Wrench(R @ self.force, R @ self.torque, frame)
        return Wrench(R.T @ self.force, R.T @ self.torque, frame)


@dataclass
class BodyParams:
    mass: float
    inertia: np.ndarray
    r_com: np.ndarray
    r_end: np.ndarray
    gravity: float = 9.81

    def __post_init__(self):
        self.mass = float(self.mass)
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        self.r_com = _vec(self.r_com)
        self.r_end = _vec(self.r_end)
        self.gravity = float(self.gravity)
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if np.max(np.abs(self.inertia - self.inertia.T)) >= 1e-12:
            raise ValueError("inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(self.inertia)) <= 0:
            raise ValueError("inertia must be positive definite")
        if self.lever_length <= 0:
            raise ValueError("end effector must not coincide with the center of mass")

    @property
    def lever(self) -> np.ndarray:
        """Body-frame vector from the center of mass to the end-effector tip."""
        return self.r_end - self.r_com

    @property
    def lever_length(self) -> float:
        return float(np.linalg.norm(self.lever))

    @property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia)


@dataclass
class RobotState:
    position: np.ndarray
    orientation: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray

    def __post_init__(self):
        self.position = _vec(self.position)
        self.orientation = _vec(self.orientation, 4)
        self.lin_vel = _vec(self.lin_vel)
        self.ang_vel = _vec(self.ang_vel)

    @classmethod
    def at_rest(cls, position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0, 0.0)) -> "RobotState":
        return cls(np.array(position, float), np.array(orientation, float), np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation, self.lin_vel, self.ang_vel])

    @classmethod
    def from_vector(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:7].copy(), x[7:10].copy(), x[10:13].copy())

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.orientation)


def rotation_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array(vm.quat_to_rot((q[0], q[1], q[2], q[3])))


@dataclass
class ActuatorModel:
    """Collective actuator process: componentwise clamp, then a FIFO delay."""

    force_limit: np.ndarray
    torque_limit: np.ndarray
    delay_steps: int = 0
    buffer: deque = field(default=None, repr=False)

    def __post_init__(self):
        self.force_limit = _vec(self.force_limit)
        self.torque_limit = _vec(self.torque_limit)
        self.delay_steps = int(self.delay_steps)
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be non-negative")
        if np.any(self.force_limit < 0) or np.any(self.torque_limit < 0):
            raise ValueError("limits must be non-negative")
        self.reset()

    def reset(self):
        self.buffer = deque(Wrench.zero(Frame.BODY) for _ in range(self.delay_steps))

    def saturate(self, w: Wrench) -> Wrench:
        return Wrench(
            np.clip(w.force, -self.force_limit, self.force_limit),
            np.clip(w.torque, -self.torque_limit, self.torque_limit),
            w.frame,
        )


def gravity_wrench(params: BodyParams, state: RobotState | None = None) -> Wrench:
    return Wrench(np.array([0.0, 0.0, -params.mass * params.gravity]), np.zeros(3), Frame.WORLD)


def gyroscopic_wrench(params: BodyParams, state: RobotState) -> Wrench:
    w = state.ang_vel
    return Wrench(np.zeros(3), -np.cross(w, params.inertia @ w), Frame.BODY)


def apply_actuation(model: ActuatorModel, command: Wrench) -> Wrench:
    """Enqueue the clamped command and return the one issued ``delay_steps`` ago."""
    command.expect(Frame.BODY)
    model.buffer.append(model.saturate(command))
    return model.buffer.popleft()


def step_dynamics(state: RobotState, params: BodyParams, w_act: Wrench, w_dist: Wrench, dt: float) -> RobotState:
    """One semi-implicit Euler step of ``M v̇ + C v + g = w_act + w_dist``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    R = state.rotation
    force = np.zeros(3)
    torque = np.zeros(3)
    for w in (w_act, w_dist):
        if not (np.all(np.isfinite(w.force)) and np.all(np.isfinite(w.torque))):
            raise SimulationFault("non-finite wrench")
        if w.frame is Frame.WORLD:
            force += w.force
            torque += R.T @ w.torque
        else:
            force += R @ w.force
            torque += w.torque
    x = state.as_vector()
    ok = rigid_body_step(
        x, params.mass, _tup33(params.inertia), _tup33(params.inertia_inv),
        tuple(force), tuple(torque), params.gravity, dt,
    )
    if not ok:
        raise SimulationFault("non-finite state after integration")
    return RobotState.from_vector(x)


def _tup33(m):
    return tuple(tuple(float(v) for v in row) for row in m)


# -- kernels ---------------------------------------------------------------


@njit(cache=True)
def rigid_body_step(x, mass, inertia, inertia_inv, f_world, tau_body, gravity, dt):
    """Advance the 13-vector ``[p, q, v, ω]`` in place; False on non-finite state."""
    fz = f_world[2] - mass * gravity
    inv_m = 1.0 / mass
    vx = x[7] + dt * (f_world[0] * inv_m)
    vy = x[8] + dt * (f_world[1] * inv_m)
    vz = x[9] + dt * (fz * inv_m)
    w = (x[10], x[11], x[12])
    gyro = vm.cross(w, vm.matvec(inertia, w))
    wdot = vm.matvec(inertia_inv, vm.sub(tau_body, gyro))
    w = (w[0] + dt * wdot[0], w[1] + dt * wdot[1], w[2] + dt * wdot[2])
    x[7], x[8], x[9] = vx, vy, vz
    x[10], x[11], x[12] = w[0], w[1], w[2]
    x[0] += dt * vx
    x[1] += dt * vy
    x[2] += dt * vz
    q = vm.quat_mul((x[3], x[4], x[5], x[6]), vm.quat_exp(vm.scale(w, dt)))
    q = vm.quat_normalize(q)
    x[3], x[4], x[5], x[6] = q[0], q[1], q[2], q[3]
    for i in range(13):
        if not np.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def actuate(buf, head, delay, cmd, force_limit, torque_limit):
    """Ring-buffer form of :func:`apply_actuation`; returns (output 6-tuple, new head)."""
    size = buf.shape[0]
    for j in range(3):
        lim = force_limit[j]
        buf[head, j] = min(max(cmd[j], -lim), lim)
        lim = torque_limit[j]
        buf[head, 3 + j] = min(max(cmd[3 + j], -lim), lim)
    k = (head - delay) % size
    out = (buf[k, 0], buf[k, 1], buf[k, 2], buf[k, 3], buf[k, 4], buf[k, 5])
    return out, (head + 1) % size
