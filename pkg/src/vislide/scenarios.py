"""Evaluation and training worlds plus the straight-line sliding reference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import Reference
from .terrain import Heightmap, Plane, Terrain

FLAT6_FRICTION = (0.05, 0.15, 0.25, 0.45, 0.55, 0.62)
ROCK_FRICTION = (0.1, 0.15, 0.45, 0.6, 0.75, 0.9)
WHITEBOARD_MU = 0.15
SANDPAPER_MU = 0.6
KINDS = ("flat", "whiteboard_sandpaper", "step", "step_train", "rock")


@dataclass
class TrajectorySpec:
    """Straight slide along the plane tangent with the tip ``delta`` behind the plane.

    The approach lasts ``approach_time``: the tip moves from ``standoff`` in
    front of the plane to ``-delta`` with a trapezoidal velocity profile while
    the tangential speed ramps up linearly over ``ramp_time``. Sliding then
    continues at ``speed`` for ``slide_time`` seconds.
    """

    delta: float = 0.07
    speed: float = 0.2
    slide_time: float = 15.0
    approach_time: float = 3.0
    ramp_time: float = 1.5
    standoff: float = 0.25
    start_s: float = -0.3
    lateral: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if not (self.approach_time > 0 and 0 < self.ramp_time <= self.approach_time):
            raise ValueError("need 0 < ramp_time <= approach_time")

    @property
    def length(self) -> float:
        """Path covered during the sliding phase."""
        return self.speed * self.slide_time

    @property
    def duration(self) -> float:
        return self.approach_time + self.slide_time

    @property
    def end_s(self) -> float:
        return self.start_s + self.speed * (self.approach_time - 0.5 * self.ramp_time) + self.length


@dataclass
class ScenarioSpec:
    kind: str = "flat"
    friction_set: tuple = FLAT6_FRICTION
    patch_length: float = 0.5
    span: tuple = (-0.5, 4.0)
    step_height: float = 0.0
    step_s: float = 1.5
    step_mu: float = WHITEBOARD_MU
    sandpaper: tuple = (1.2, 2.2)
    seed: int = 0
    resample_period: float = 4.0
    amplitude: float = 0.02
    cell_size: float = 0.1
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        self.friction_set = tuple(float(m) for m in self.friction_set)
        if not self.friction_set or min(self.friction_set) < 0:
            raise ValueError("friction set must be non-empty with mu >= 0")
        self.span = (float(self.span[0]), float(self.span[1]))
        if isinstance(self.trajectory, dict):
            self.trajectory = TrajectorySpec(**self.trajectory)


# -- terrain constructors ----------------------------------------------------


def _patch_count(span, length):
    return max(1, int(math.ceil((span[1] - span[0]) / length - 1e-9)))


def make_flat_heterogeneous(friction_set, rng, patch_length=0.5, span=(-0.5, 4.0), plane=Plane()) -> Terrain:
    """Equal-length flat patches with mu drawn uniformly from ``friction_set``."""
    friction_set = np.asarray(friction_set, float)
    if friction_set.size == 0:
        raise ValueError("friction set must be non-empty")
    n = _patch_count(span, patch_length)
    mus = rng.choice(friction_set, size=n)
    return Terrain.from_triples([(patch_length, 0.0, float(m)) for m in mus], span[0], plane)


def make_whiteboard_sandpaper(mu_low=WHITEBOARD_MU, mu_high=SANDPAPER_MU, sandpaper=(1.2, 2.2),
                              span=(-0.5, 4.0), plane=Plane()) -> Terrain:
    """Low-friction board with one high-friction strip."""
    a, b = sandpaper
    triples = [(a - span[0], 0.0, mu_low), (b - a, 0.0, mu_high), (span[1] - b, 0.0, mu_low)]
    return Terrain.from_triples(triples, span[0], plane)


def make_step_terrain(step_height, step_s=1.5, mu=WHITEBOARD_MU, span=(-0.5, 4.0), plane=Plane()) -> Terrain:
    """Flat run, then a raised patch whose leading face blocks the tip."""
    if step_height < 0:
        raise ValueError("step_height must be non-negative")
    if step_height == 0:
        return Terrain.from_triples([(span[1] - span[0], 0.0, mu)], span[0], plane)
    triples = [(step_s - span[0], 0.0, mu), (span[1] - step_s, float(step_height), mu)]
    return Terrain.from_triples(triples, span[0], plane)


def make_step_training(step_height, friction_set, rng, patch_length=0.5, span=(-0.5, 4.0), plane=Plane()) -> Terrain:
    """Neighbouring patches alternate by ``step_height``; mu from ``friction_set``."""
    n = _patch_count(span, patch_length)
    mus = rng.choice(np.asarray(friction_set, float), size=n)
    # first patch flat so contact is made on the nominal plane
    triples = [(patch_length, float(step_height) * (i % 2), float(m)) for i, m in enumerate(mus)]
    return Terrain.from_triples(triples, span[0], plane)


def make_rocklike(seed, friction_set, period, speed=0.2, amplitude=0.02, cell_size=0.1,
                  span=(-0.5, 4.0), plane=Plane()) -> Terrain:
    """Procedural heightmap with mu resampled every ``speed * period`` metres."""
    if not period > 0:
        raise ValueError("period must be positive")
    rng = np.random.default_rng([int(seed), 1])
    length = speed * period if speed > 0 else span[1] - span[0]
    n = _patch_count(span, length)
    mus = rng.choice(np.asarray(friction_set, float), size=n)
    hm = Heightmap.generate(int(seed), cell_size, amplitude, span, (-1.0, 1.0))
    return Terrain.from_triples([(length, 0.0, float(m)) for m in mus], span[0], plane, hm)


def make_terrain(spec: ScenarioSpec, rng=None, plane=Plane()) -> Terrain:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.kind == "flat":
        return make_flat_heterogeneous(spec.friction_set, rng, spec.patch_length, spec.span, plane)
    if spec.kind == "whiteboard_sandpaper":
        lo, hi = min(spec.friction_set), max(spec.friction_set)
        return make_whiteboard_sandpaper(lo, hi, spec.sandpaper, spec.span, plane)
    if spec.kind == "step":
        return make_step_terrain(spec.step_height, spec.step_s, spec.step_mu, spec.span, plane)
    if spec.kind == "step_train":
        return make_step_training(spec.step_height, spec.friction_set, rng, spec.patch_length, spec.span, plane)
    seed = int(rng.integers(2**31)) if spec.seed is None else spec.seed
    return make_rocklike(seed, spec.friction_set, spec.resample_period, spec.trajectory.speed,
                         spec.amplitude, spec.cell_size, spec.span, plane)


# -- reference trajectory ----------------------------------------------------


def rotation_to_quat(R) -> np.ndarray:
    R = np.asarray(R, float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * math.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = [0.0, 0.0, 0.0, 0.0]
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.array(q)
    return q / np.linalg.norm(q)


def _trapezoid(t, T, x0, x1):
    """Position, velocity, acceleration of a 1/3-1/3-1/3 trapezoidal move."""
    D = x1 - x0
    if t <= 0:
        return x0, 0.0, 0.0
    if t >= T:
        return x1, 0.0, 0.0
    ta = T / 3.0
    vmax = D / (T - ta)
    a = vmax / ta
    if t < ta:
        return x0 + 0.5 * a * t * t, a * t, a
    if t < T - ta:
        return x0 + 0.5 * a * ta * ta + vmax * (t - ta), vmax, 0.0
    r = T - t
    return x1 - 0.5 * a * r * r, a * r, -a


class Trajectory:
    """Time-indexed reference computed from the nominal plane only."""

    def __init__(self, spec: TrajectorySpec, plane: Plane = Plane(), lever=(0.5, 0.0, 0.0)):
        self.spec = spec
        self.plane = plane
        self.lever = np.asarray(lever, float)
        self.attitude_matrix = np.asarray(plane.task_rotation, float)
        self.attitude = rotation_to_quat(self.attitude_matrix)
        self._n = np.asarray(plane.normal)
        self._t = np.asarray(plane.tangent)
        self._b = np.asarray(plane.binormal)
        self._o = np.asarray(plane.origin)
        self._offset = self.attitude_matrix @ self.lever

    @property
    def approach_time(self) -> float:
        return self.spec.approach_time

    @property
    def duration(self) -> float:
        return self.spec.duration

    def tangential(self, t):
        sp = self.spec
        v, T = sp.speed, sp.ramp_time
        if t <= 0:
            return sp.start_s, 0.0, 0.0
        if t < T:
            return sp.start_s + 0.5 * v / T * t * t, v * t / T, v / T
        return sp.start_s + 0.5 * v * T + v * (t - T), v, 0.0

    def normal(self, t):
        sp = self.spec
        return _trapezoid(t, sp.approach_time, sp.standoff, -sp.delta)

    def tip(self, t):
        s, ds, dds = self.tangential(t)
        h, dh, ddh = self.normal(t)
        p = self._o + s * self._t + self.spec.lateral * self._b + h * self._n
        v = ds * self._t + dh * self._n
        a = dds * self._t + ddh * self._n
        return p, v, a

    def at(self, t) -> Reference:
        p, v, a = self.tip(t)
        return Reference(p - self._offset, v, a, self.attitude, np.zeros(3))

    def n_control(self, dt: float) -> int:
        return int(round(self.duration / dt))

    def control_arrays(self, dt: float):
        """COM position/velocity/acceleration references at ``k * dt``, k = 0..n."""
        n = self.n_control(dt)
        P = np.empty((n + 1, 3))
        V = np.empty((n + 1, 3))
        A = np.empty((n + 1, 3))
        for k in range(n + 1):
            p, v, a = self.tip(k * dt)
            P[k] = p - self._offset
            V[k] = v
            A[k] = a
        return P, V, A


def make_reference(spec: TrajectorySpec, plane: Plane = Plane(), lever=(0.5, 0.0, 0.0)) -> Trajectory:
    return Trajectory(spec, plane, lever)


# -- presets -----------------------------------------------------------------


def preset(name: str) -> ScenarioSpec:
    """Training scenarios by name; evaluation variants carry an ``_eval`` suffix."""
    table = {
        "flat6": dict(kind="flat", friction_set=FLAT6_FRICTION),
        "flat6_eval": dict(kind="whiteboard_sandpaper", friction_set=(WHITEBOARD_MU, SANDPAPER_MU)),
        "step1cm": dict(kind="step_train", step_height=0.01, friction_set=FLAT6_FRICTION),
        "step1cm_eval": dict(kind="step", step_height=0.01),
        "step2cm": dict(kind="step_train", step_height=0.02, friction_set=FLAT6_FRICTION),
        "step2cm_eval": dict(kind="step", step_height=0.02),
        "rock": dict(kind="rock", friction_set=ROCK_FRICTION, seed=None),
        "rock_eval": dict(kind="rock", friction_set=ROCK_FRICTION, seed=1000),
    }
    if name not in table:
        raise KeyError(f"unknown scenario preset {name!r}")
    return ScenarioSpec(**table[name])
