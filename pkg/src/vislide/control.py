"""Impedance control with bounded, slew-limited variable stiffness.

The closed loop is shaped to ``M ė_v + 2ζ√K e_v + K e_s = w_dist`` with the
desired inertia equal to the true one, so the disturbance-feedback term of the
general impedance law drops out. Translational gains act along the task axes
(x into the surface, z along the slide), rotational gains about body axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _math as vm
from .dynamics import BodyParams, Frame, RobotState, Wrench, rotation_matrix


class ContractViolation(ValueError):
    pass


@dataclass
class Reference:
    pos_ref: np.ndarray
    vel_ref: np.ndarray
    acc_ref: np.ndarray
    att_ref: np.ndarray
    ang_vel_ref: np.ndarray

    def __post_init__(self):
        self.pos_ref = np.asarray(self.pos_ref, float)
        self.vel_ref = np.asarray(self.vel_ref, float)
        self.acc_ref = np.asarray(self.acc_ref, float)
        self.att_ref = np.asarray(self.att_ref, float)
        self.ang_vel_ref = np.asarray(self.ang_vel_ref, float)
        if abs(np.linalg.norm(self.att_ref) - 1.0) > 1e-9:
            raise ValueError("att_ref must be a unit quaternion")

    @classmethod
    def hold(cls, position, attitude=(1.0, 0.0, 0.0, 0.0)) -> "Reference":
        return cls(np.asarray(position, float), np.zeros(3), np.zeros(3), np.asarray(attitude, float), np.zeros(3))


@dataclass
class GainSchedule:
    k_min: np.ndarray
    k_max: np.ndarray
    zeta: float
    slew_rate: np.ndarray
    k_current: np.ndarray | None = None

    def __post_init__(self):
        self.k_min = np.asarray(self.k_min, float).reshape(6)
        self.k_max = np.asarray(self.k_max, float).reshape(6)
        self.slew_rate = np.broadcast_to(np.asarray(self.slew_rate, float), (6,)).copy()
        if np.any(self.k_min < 0) or np.any(self.k_max < self.k_min):
            raise ValueError("need 0 <= k_min <= k_max")
        if self.k_current is not None:
            self.k_current = np.asarray(self.k_current, float).reshape(6)

    def stiffness(self, action) -> np.ndarray:
        """Affine map from an action in (0, 1) to diagonal stiffness, clipped to the bounds."""
        return np.clip(self.k_min + (self.k_max - self.k_min) * np.asarray(action, float), self.k_min, self.k_max)


@dataclass
class LowPass:
    alpha: float
    state: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        self.state = np.asarray(self.state, float).copy()

    @classmethod
    def from_cutoff(cls, cutoff_hz: float, dt: float, n: int = 1) -> "LowPass":
        return cls(cutoff_alpha(cutoff_hz, dt), np.zeros(n))


def cutoff_alpha(cutoff_hz: float, dt: float) -> float:
    """Per-step blend of a first-order filter with the given -3 dB corner."""
    if cutoff_hz <= 0:
        return 1.0
    return 1.0 - math.exp(-2.0 * math.pi * cutoff_hz * dt)


def lowpass_step(f: LowPass, x) -> np.ndarray:
    x = np.asarray(x, float)
    f.state = f.state + f.alpha * (x - f.state)
    return f.state


def tracking_errors(state: RobotState, ref: Reference):
    """Pose and velocity errors: world-frame translation, body-frame rotation."""
    R = _tup33(rotation_matrix(state.orientation))
    R_ref = _tup33(rotation_matrix(ref.att_ref))
    e_s, e_v = errors_kernel(
        tuple(state.position), R, tuple(state.lin_vel), tuple(state.ang_vel),
        tuple(ref.pos_ref), tuple(ref.vel_ref), R_ref, tuple(ref.ang_vel_ref),
    )
    return np.array(e_s), np.array(e_v)


def adaptive_stiffness(action, sched: GainSchedule, dt: float) -> np.ndarray:
    """Map an action in (0, 1)^6 to stiffness, slew-limited against the current gains."""
    a = np.asarray(action, float).reshape(6)
    if not (np.all(a > 0.0) and np.all(a < 1.0)):
        raise ContractViolation("actions must lie strictly inside (0, 1)")
    k_des = sched.stiffness(a)
    if sched.k_current is None:
        sched.k_current = k_des.copy()
        return sched.k_current.copy()
    k = sched.k_current.copy()
    slew_limit(k, k_des, sched.slew_rate * dt)
    sched.k_current = k
    return k.copy()


def damping_from_stiffness(k, zeta: float) -> np.ndarray:
    k = np.asarray(k, float)
    if np.any(k < 0):
        raise ContractViolation("stiffness must be non-negative")
    return 2.0 * zeta * np.sqrt(k)


def impedance_command(state: RobotState, ref: Reference, k, d, params: BodyParams,
                      task_rotation=None) -> Wrench:
    """Impedance wrench command, expressed in the body frame for the actuator.

    With ``k`` held fixed this is the constant-gain baseline.
    """
    Rt = np.eye(3) if task_rotation is None else np.asarray(task_rotation, float)
    f_body, tau_body = impedance_kernel(
        tuple(state.position), _tup33(state.rotation), tuple(state.lin_vel), tuple(state.ang_vel),
        tuple(ref.pos_ref), tuple(ref.vel_ref), tuple(ref.acc_ref), _tup33(rotation_matrix(ref.att_ref)),
        tuple(ref.ang_vel_ref), np.asarray(k, float), np.asarray(d, float),
        params.mass, _tup33(params.inertia), params.gravity, _tup33(Rt),
    )
    return Wrench(np.array(f_body), np.array(tau_body), Frame.BODY)


def _tup33(m):
    return tuple(tuple(float(v) for v in row) for row in m)


# -- kernels ---------------------------------------------------------------


@njit(cache=True)
def errors_kernel(p, R, v, w, p_ref, v_ref, R_ref, w_ref):
    e_p = vm.sub(p, p_ref)
    e_R = vm.attitude_error(R, R_ref)
    e_vp = vm.sub(v, v_ref)
    e_w = vm.sub(w, vm.matTvec(R, vm.matvec(R_ref, w_ref)))
    return (e_p[0], e_p[1], e_p[2], e_R[0], e_R[1], e_R[2]), (e_vp[0], e_vp[1], e_vp[2], e_w[0], e_w[1], e_w[2])


@njit(cache=True)
def impedance_kernel(p, R, v, w, p_ref, v_ref, a_ref, R_ref, w_ref, k, d, mass, inertia, gravity, R_task):
    e_s, e_v = errors_kernel(p, R, v, w, p_ref, v_ref, R_ref, w_ref)
    ep_t = vm.matTvec(R_task, (e_s[0], e_s[1], e_s[2]))
    ev_t = vm.matTvec(R_task, (e_v[0], e_v[1], e_v[2]))
    f_task = (-k[0] * ep_t[0] - d[0] * ev_t[0],
              -k[1] * ep_t[1] - d[1] * ev_t[1],
              -k[2] * ep_t[2] - d[2] * ev_t[2])
    fb = vm.matvec(R_task, f_task)
    f_world = (mass * a_ref[0] + fb[0], mass * a_ref[1] + fb[1], mass * a_ref[2] + fb[2] + mass * gravity)
    gyro = vm.cross(w, vm.matvec(inertia, w))
    tau = (-k[3] * e_s[3] - d[3] * e_v[3] + gyro[0],
           -k[4] * e_s[4] - d[4] * e_v[4] + gyro[1],
           -k[5] * e_s[5] - d[5] * e_v[5] + gyro[2])
    return vm.matTvec(R, f_world), tau


@njit(cache=True)
def slew_limit(k, k_des, max_step):
    for j in range(k.shape[0]):
        delta = k_des[j] - k[j]
        if delta > max_step[j]:
            k[j] += max_step[j]
        elif delta < -max_step[j]:
            k[j] -= max_step[j]
        else:
            # exact assignment keeps k inside [k_min, k_max] without rounding drift
            k[j] = k_des[j]
