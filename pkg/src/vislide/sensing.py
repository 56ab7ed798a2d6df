"""Measurement channel between simulated truth and the controller/policy.

The simulator reads the truth and hands out perturbed copies; nothing here
ever writes back into the integrated state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _math as vm
from .dynamics import Frame, RobotState, Wrench
from .terrain import ContactResult


def _nonneg(x, n):
    a = np.broadcast_to(np.asarray(x, float), (n,)).copy()
    if np.any(a < 0):
        raise ValueError("noise standard deviations must be non-negative")
    return a


@dataclass
class SensorModel:
    """White noise plus random-walk bias on the wrench; Gaussian state estimate.

    ``estimate_noise_std`` is ordered (position x3, attitude small-angle x3,
    linear velocity x3, angular velocity x3).
    """

    wrench_noise_std: np.ndarray = field(default_factory=lambda: np.zeros(6))
    wrench_bias_walk_std: np.ndarray = field(default_factory=lambda: np.zeros(6))
    estimate_noise_std: np.ndarray = field(default_factory=lambda: np.zeros(12))
    enable_wrench_noise: bool = False
    enable_state_noise: bool = False
    bias: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.wrench_noise_std = _nonneg(self.wrench_noise_std, 6)
        self.wrench_bias_walk_std = _nonneg(self.wrench_bias_walk_std, 6)
        self.estimate_noise_std = _nonneg(self.estimate_noise_std, 12)
        self.bias = np.asarray(self.bias, float).reshape(6).copy()

    def reset(self):
        self.bias[:] = 0.0


def measure_wrench(true_contact: ContactResult | Wrench, model: SensorModel, rng, dt: float = 0.01) -> Wrench:
    """Body-frame wrench as the force-torque sensor reports it."""
    w = true_contact.wrench_body if isinstance(true_contact, ContactResult) else true_contact
    w = w.expect(Frame.BODY).as_array()
    if not model.enable_wrench_noise:
        return Wrench(w[:3].copy(), w[3:].copy(), Frame.BODY)
    model.bias += rng.standard_normal(6) * model.wrench_bias_walk_std * math.sqrt(dt)
    out = w + rng.standard_normal(6) * model.wrench_noise_std + model.bias
    return Wrench(out[:3], out[3:], Frame.BODY)


def measure_state(true_state: RobotState, model: SensorModel, rng) -> RobotState:
    """Pose and velocity estimate; the attitude is perturbed on the manifold."""
    if not model.enable_state_noise:
        return RobotState.from_vector(true_state.as_vector())
    n = rng.standard_normal(12) * model.estimate_noise_std
    q = tuple(true_state.orientation)
    q = vm.quat_normalize(vm.quat_mul(q, vm.quat_exp((n[3], n[4], n[5]))))
    return RobotState(true_state.position + n[0:3], np.array(q), true_state.lin_vel + n[6:9],
                      true_state.ang_vel + n[9:12])
