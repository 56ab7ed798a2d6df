"""Teachers with access to simulation ground truth.

Privileged observations are laid out as
``[z (6), mu, in_contact, heights (K), normals (3K)]`` where heights and
normals are sampled at fixed offsets along the slide around the tip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..policy import PolicyNet, infer_actions

N_FEATURES = 6
MU_INDEX = N_FEATURES
CONTACT_INDEX = N_FEATURES + 1
HEIGHTS_INDEX = N_FEATURES + 2


def privileged_dim(n_offsets: int) -> int:
    return N_FEATURES + 2 + 4 * n_offsets


@dataclass
class TeacherSpec:
    """Handcrafted: affine-in-mu gains with a compliance pull near height jumps.

    ``angular_range`` and ``translational_range`` are action ranges in (0, 1);
    ``axis_roles`` names each adapted axis ('translational' or 'angular').
    """

    kind: str = "handcrafted"
    mu_lo: float = 0.05
    mu_hi: float = 0.62
    angular_range: tuple = (0.1, 0.9)
    translational_range: tuple = (0.1, 0.9)
    step_threshold: float = 0.005
    compliant_blend: float = 0.8
    axis_roles: tuple = ("translational", "angular")
    n_offsets: int = 5
    net: PolicyNet | None = field(default=None, repr=False)
    normalizer: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("handcrafted", "learned"):
            raise ValueError("teacher kind must be 'handcrafted' or 'learned'")
        if not self.mu_hi > self.mu_lo:
            raise ValueError("need mu_hi > mu_lo")
        for lo, hi in (self.angular_range, self.translational_range):
            if not 0.0 < lo <= hi < 1.0:
                raise ValueError("action ranges must satisfy 0 < lo <= hi < 1")
        if self.kind == "learned" and self.net is None:
            raise ValueError("a learned teacher needs a network")


def handcrafted_teacher(priv, spec: TeacherSpec) -> np.ndarray:
    """Teacher action(s) for one privileged vector or a batch of rows."""
    priv = np.asarray(priv, float)
    single = priv.ndim == 1
    P = np.atleast_2d(priv)
    mu = P[:, MU_INDEX]
    contact = P[:, CONTACT_INDEX] > 0.5
    heights = P[:, HEIGHTS_INDEX:HEIGHTS_INDEX + spec.n_offsets]

    frac = np.clip((mu - spec.mu_lo) / (spec.mu_hi - spec.mu_lo), 0.0, 1.0)
    a_lo, a_hi = spec.angular_range
    t_lo, t_hi = spec.translational_range
    ang = a_lo + frac * (a_hi - a_lo)
    trans = t_hi - frac * (t_hi - t_lo)
    # without contact mu says nothing: hold the middle of both ranges
    ang = np.where(contact, ang, 0.5 * (a_lo + a_hi))
    trans = np.where(contact, trans, 0.5 * (t_lo + t_hi))

    if spec.n_offsets > 1:
        jump = np.max(np.abs(np.diff(heights, axis=1)), axis=1)
        near = jump > spec.step_threshold
        ang = np.where(near, ang + spec.compliant_blend * (a_lo - ang), ang)
        trans = np.where(near, trans + spec.compliant_blend * (t_lo - trans), trans)

    cols = [trans if role == "translational" else ang for role in spec.axis_roles]
    out = np.stack(cols, axis=1)
    return out[0] if single else out


def teacher_actions(priv, spec: TeacherSpec) -> np.ndarray:
    if spec.kind == "handcrafted":
        return handcrafted_teacher(priv, spec)
    X = np.atleast_2d(np.asarray(priv, float))
    if spec.normalizer is not None:
        X = spec.normalizer(X)
    out = infer_actions(spec.net, X)
    return out[0] if np.asarray(priv).ndim == 1 else out
