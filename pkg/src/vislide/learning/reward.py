"""Tracking/contact/smoothness reward for the gain-adaptation MDP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

TERMS = ("attitude", "position", "contact", "rate", "smoothness")
ACTION_EPS = 1e-6


@dataclass
class RewardWeights:
    l_eR: float = 10.0
    l_p: float = 10.0
    l_d: float = 100.0
    l_omega: float = 0.1
    l_a: float = 1.0

    def __post_init__(self):
        if min(self.as_array()) < 0:
            raise ValueError("reward weights must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.l_eR, self.l_p, self.l_d, self.l_omega, self.l_a], float)

    @classmethod
    def from_array(cls, a) -> "RewardWeights":
        return cls(*[float(v) for v in a])


def _unit(a, fallback):
    n = float(np.linalg.norm(a))
    if n < ACTION_EPS:
        return fallback
    return a / n


def compute_reward(e_R, e_p, d, omega, a_t, a_prev, w: RewardWeights):
    """Return (total, per-term penalties); every term is <= 0.

    ``d`` is the tip-surface separation, taken as 0 while in contact. An
    action with norm below 1e-6 reuses the other direction so the smoothness
    term stays defined.
    """
    a_t = np.asarray(a_t, float)
    a_prev = np.asarray(a_prev, float)
    d = max(float(d), 0.0)
    u_prev = _unit(a_prev, None)
    u_t = _unit(a_t, u_prev)
    if u_prev is None:
        u_prev = u_t
    if u_t is None:
        smooth = 0.0
    else:
        smooth = float(np.sum((u_t - u_prev) ** 2))
    terms = -np.array([
        w.l_eR * float(np.dot(e_R, e_R)),
        w.l_p * float(np.dot(e_p, e_p)),
        w.l_d * d * d,
        w.l_omega * float(np.dot(omega, omega)),
        w.l_a * smooth,
    ])
    return float(terms.sum()), terms


@njit(cache=True)
def reward_rows(info, a_t, a_prev, weights, active, out_terms, out_total):
    """Row-wise reward from the simulator's info block [e_p, e_R, omega, sep, ...]."""
    m = a_t.shape[1]
    for r in range(info.shape[0]):
        if not active[r]:
            continue
        eR = info[r, 3] * info[r, 3] + info[r, 4] * info[r, 4] + info[r, 5] * info[r, 5]
        ep = info[r, 0] * info[r, 0] + info[r, 1] * info[r, 1] + info[r, 2] * info[r, 2]
        d = max(info[r, 9], 0.0)
        if not math.isfinite(d):
            d = 0.0
        om = info[r, 6] * info[r, 6] + info[r, 7] * info[r, 7] + info[r, 8] * info[r, 8]
        n_t = 0.0
        n_p = 0.0
        for j in range(m):
            n_t += a_t[r, j] * a_t[r, j]
            n_p += a_prev[r, j] * a_prev[r, j]
        n_t = math.sqrt(n_t)
        n_p = math.sqrt(n_p)
        smooth = 0.0
        if n_t >= 1e-6 and n_p >= 1e-6:
            for j in range(m):
                diff = a_t[r, j] / n_t - a_prev[r, j] / n_p
                smooth += diff * diff
        out_terms[r, 0] = -weights[0] * eR
        out_terms[r, 1] = -weights[1] * ep
        out_terms[r, 2] = -weights[2] * d * d
        out_terms[r, 3] = -weights[3] * om
        out_terms[r, 4] = -weights[4] * smooth
        out_total[r] = (out_terms[r, 0] + out_terms[r, 1] + out_terms[r, 2] + out_terms[r, 3]
                        + out_terms[r, 4])


def rebalance(weights: RewardWeights, term_means, target_ratio: float = 3.0, floor: float = 1e-9) -> RewardWeights:
    """Rescale weights once so the active per-term means agree within ``target_ratio``.

    Terms whose baseline mean is (near) zero are left untouched; the others
    are pulled to the geometric mean of their magnitudes.
    """
    w = weights.as_array()
    m = np.abs(np.asarray(term_means, float))
    active = (m > floor) & (w > 0)
    if active.sum() < 2:
        return RewardWeights.from_array(w)
    target = math.exp(float(np.mean(np.log(m[active]))))
    out = w.copy()
    for i in np.flatnonzero(active):
        ratio = m[i] / target
        if ratio > math.sqrt(target_ratio) or ratio < 1.0 / math.sqrt(target_ratio):
            out[i] = w[i] / ratio
    return RewardWeights.from_array(out)
