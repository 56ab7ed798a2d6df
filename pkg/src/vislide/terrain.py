"""Piecewise surfaces with spatially varying friction and height, and the
single-point penalty contact model acting at the end-effector tip.

Surface coordinates are taken relative to a nominal wall plane: ``s`` runs
along the sliding direction ``tangent``, ``y`` along ``binormal`` and the
height is measured along ``normal``, which points out of the wall towards
the robot. Material occupies ``dn < height(s, y)`` where ``dn`` is the signed
distance of a point from the plane along ``normal``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _math as vm
from .dynamics import BodyParams, Frame, RobotState, Wrench, rotation_matrix


class TerrainOutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class Patch:
    start_s: float
    end_s: float
    height: float
    mu: float

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValueError("patch must have positive length")
        if self.mu < 0:
            raise ValueError("friction coefficient must be non-negative")


@dataclass(frozen=True)
class Plane:
    origin: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (-1.0, 0.0, 0.0)
    tangent: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        t = np.asarray(self.tangent, float)
        if abs(np.linalg.norm(n) - 1) > 1e-12 or abs(np.linalg.norm(t) - 1) > 1e-12 or abs(n @ t) > 1e-12:
            raise ValueError("plane normal and tangent must be orthonormal")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        object.__setattr__(self, "tangent", tuple(float(v) for v in t))

    @property
    def binormal(self) -> tuple:
        return tuple(float(v) for v in np.cross(self.normal, self.tangent))

    @property
    def task_rotation(self) -> np.ndarray:
        """World←task rotation; task x points into the wall, z along the slide."""
        return np.column_stack([-np.asarray(self.normal), self.binormal, self.tangent])


@dataclass(frozen=True)
class Heightmap:
    """Seeded value noise on a square lattice, smoothstep-interpolated."""

    seed: int
    cell_size: float
    amplitude: float
    s_range: tuple
    y_range: tuple
    values: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def generate(cls, seed, cell_size, amplitude, s_range, y_range=(-1.0, 1.0)) -> "Heightmap":
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        ns = int(math.ceil((s_range[1] - s_range[0]) / cell_size)) + 2
        ny = int(math.ceil((y_range[1] - y_range[0]) / cell_size)) + 2
        rng = np.random.default_rng(seed)
        values = amplitude * rng.uniform(-1.0, 1.0, size=(ns, ny))
        return cls(int(seed), float(cell_size), float(amplitude),
                   (float(s_range[0]), float(s_range[1])), (float(y_range[0]), float(y_range[1])), values)


@dataclass(frozen=True)
class Terrain:
    patches: tuple
    plane: Plane = Plane()
    heightmap: Heightmap | None = None

    def __post_init__(self):
        patches = tuple(self.patches)
        if not patches:
            raise ValueError("terrain needs at least one patch")
        for a, b in zip(patches, patches[1:]):
            if a.end_s != b.start_s:
                raise ValueError("patches must be contiguous")
        object.__setattr__(self, "patches", patches)

    @property
    def mode(self) -> str:
        return "heightmap" if self.heightmap is not None else "patches"

    @property
    def span(self) -> tuple:
        return self.patches[0].start_s, self.patches[-1].end_s

    @classmethod
    def from_triples(cls, triples, start_s=0.0, plane: Plane = Plane(), heightmap=None) -> "Terrain":
        """Build from ``(length_m, height_m, mu)`` triples laid end to end."""
        patches = []
        s = float(start_s)
        for length, height, mu in triples:
            patches.append(Patch(s, s + float(length), float(height), float(mu)))
            s += float(length)
        return cls(tuple(patches), plane, heightmap)

    def to_config(self) -> dict:
        cfg = {
            "start_s": self.patches[0].start_s,
            "patches": [[p.end_s - p.start_s, p.height, p.mu] for p in self.patches],
            "plane": {"origin": list(self.plane.origin), "normal": list(self.plane.normal),
                      "tangent": list(self.plane.tangent)},
        }
        if self.heightmap is not None:
            hm = self.heightmap
            cfg["heightmap"] = {"seed": hm.seed, "cell_size": hm.cell_size, "amplitude": hm.amplitude,
                                "s_range": list(hm.s_range), "y_range": list(hm.y_range)}
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "Terrain":
        plane = Plane(**cfg["plane"]) if "plane" in cfg else Plane()
        hm = None
        if cfg.get("heightmap"):
            h = cfg["heightmap"]
            hm = Heightmap.generate(h["seed"], h["cell_size"], h["amplitude"], h["s_range"], h["y_range"])
        return cls.from_triples(cfg["patches"], cfg.get("start_s", 0.0), plane, hm)

    def kernel_args(self) -> tuple:
        """Flat arrays consumed by the contact kernels."""
        edges = np.array([p.start_s for p in self.patches] + [self.patches[-1].end_s])
        heights = np.array([p.height for p in self.patches])
        mus = np.array([p.mu for p in self.patches])
        if self.heightmap is None:
            hm_values, hm_meta = np.zeros((1, 1)), np.array([0.0, 0.0, 0.0])
        else:
            hm = self.heightmap
            hm_values, hm_meta = hm.values, np.array([hm.s_range[0], hm.y_range[0], hm.cell_size])
        pl = self.plane
        frame = np.array([pl.origin, pl.normal, pl.tangent, pl.binormal])
        return edges, heights, mus, hm_values, hm_meta, frame


@dataclass
class ContactParams:
    k_n: float = 5000.0
    c_n: float = 50.0
    v_reg: float = 0.01

    def __post_init__(self):
        if not (self.k_n > 0 and self.c_n >= 0 and self.v_reg > 0):
            raise ValueError("need k_n > 0, c_n >= 0, v_reg > 0")


@dataclass
class ContactResult:
    in_contact: bool
    p_C: np.ndarray
    n_perp: np.ndarray
    penetration: float
    F_perp: float
    F_par: float
    friction: np.ndarray
    tip_velocity: np.ndarray
    wrench_body: Wrench
    separation: float
    mu: float


def query_surface(terrain: Terrain, s: float, y: float = 0.0):
    """Surface height, friction coefficient and outward unit normal at ``s``."""
    lo, hi = terrain.span
    if not lo <= s < hi:
        raise TerrainOutOfBounds(f"s={s} outside terrain span [{lo}, {hi})")
    edges, heights, mus, hm_values, hm_meta, frame = terrain.kernel_args()
    i = patch_index(edges, s)
    h_hm, h_s, h_y = heightmap_eval(hm_values, hm_meta, s, y)
    n, t, b = frame[1], frame[2], frame[3]
    normal = n - h_s * t - h_y * b
    return heights[i] + h_hm, mus[i], normal / np.linalg.norm(normal)


def compute_contact(state: RobotState, params: BodyParams, terrain: Terrain, cp: ContactParams) -> ContactResult:
    R = rotation_matrix(state.orientation)
    out = contact_kernel(
        tuple(state.position), _tup33(R), tuple(state.lin_vel), tuple(state.ang_vel), tuple(params.lever),
        *terrain.kernel_args(), cp.k_n, cp.c_n, cp.v_reg,
    )
    (in_contact, pen, f_perp, f_par, f_world, f_body, tau_body, normal, tip, v_tip, s, mu, sep) = out
    return ContactResult(
        in_contact=bool(in_contact),
        p_C=np.array(tip),
        n_perp=np.array(normal),
        penetration=pen,
        F_perp=f_perp,
        F_par=f_par,
        friction=np.array(f_world) - f_perp * np.array(normal),
        tip_velocity=np.array(v_tip),
        wrench_body=Wrench(np.array(f_body), np.array(tau_body), Frame.BODY),
        separation=sep,
        mu=mu,
    )


def contact_batch(position, rotation, lin_vel, ang_vel, lever, terrain: Terrain, k_n, c_n, v_reg) -> dict:
    """Evaluate many contact queries at once.

    ``position``/``lin_vel``/``ang_vel`` are (N, 3), ``rotation`` (N, 3, 3);
    contact parameters may be scalars or length-N arrays. Returns a dict of
    arrays: in_contact, penetration, F_perp, F_par, force (world), normal,
    tip_velocity, mu.
    """
    P = np.ascontiguousarray(position, float)
    N = P.shape[0]
    args = [np.ascontiguousarray(np.broadcast_to(np.asarray(x, float), (N,))) for x in (k_n, c_n, v_reg)]
    out = {
        "in_contact": np.zeros(N, np.bool_),
        "penetration": np.zeros(N), "F_perp": np.zeros(N), "F_par": np.zeros(N), "mu": np.zeros(N),
        "force": np.zeros((N, 3)), "normal": np.zeros((N, 3)), "tip_velocity": np.zeros((N, 3)),
    }
    _contact_rows(P, np.ascontiguousarray(rotation, float), np.ascontiguousarray(lin_vel, float),
                  np.ascontiguousarray(ang_vel, float), np.asarray(lever, float), *terrain.kernel_args(), *args,
                  out["in_contact"], out["penetration"], out["F_perp"], out["F_par"], out["mu"], out["force"],
                  out["normal"], out["tip_velocity"])
    return out


def _tup33(m):
    return tuple(tuple(float(v) for v in row) for row in m)


# -- kernels ---------------------------------------------------------------


@njit(cache=True)
def patch_index(edges, s):
    lo, hi = 0, edges.shape[0] - 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if edges[mid] <= s:
            lo = mid
        else:
            hi = mid - 1
    return lo


@njit(cache=True)
def _smooth(f):
    return f * f * (3.0 - 2.0 * f), 6.0 * f * (1.0 - f)


@njit(cache=True)
def heightmap_eval(values, meta, s, y):
    """Height offset and its partial derivatives (d/ds, d/dy)."""
    cell = meta[2]
    if cell <= 0.0:
        return 0.0, 0.0, 0.0
    ns, ny = values.shape
    u = min(max((s - meta[0]) / cell, 0.0), ns - 1.000001)
    v = min(max((y - meta[1]) / cell, 0.0), ny - 1.000001)
    i, j = int(u), int(v)
    i1, j1 = min(i + 1, ns - 1), min(j + 1, ny - 1)
    wu, dwu = _smooth(u - i)
    wv, dwv = _smooth(v - j)
    a, b, c, d = values[i, j], values[i1, j], values[i, j1], values[i1, j1]
    h0 = a + (b - a) * wu
    h1 = c + (d - c) * wu
    h = h0 + (h1 - h0) * wv
    dh_du = ((b - a) + ((d - c) - (b - a)) * wv) * dwu
    dh_dv = (h1 - h0) * dwv
    return h, dh_du / cell, dh_dv / cell


@njit(cache=True)
def surface_point(edges, heights, mus, hm_values, hm_meta, s, y):
    """(height, mu, d/ds, d/dy) at (s, y), clamping s into the span."""
    s = min(max(s, edges[0]), edges[-1] - 1e-12)
    i = patch_index(edges, s)
    h, h_s, h_y = heightmap_eval(hm_values, hm_meta, s, y)
    return heights[i] + h, mus[i], h_s, h_y


@njit(cache=True)
def contact_kernel(p, R, v, w, lever, edges, heights, mus, hm_values, hm_meta, frame, k_n, c_n, v_reg):
    origin = (frame[0, 0], frame[0, 1], frame[0, 2])
    n = (frame[1, 0], frame[1, 1], frame[1, 2])
    t = (frame[2, 0], frame[2, 1], frame[2, 2])
    b = (frame[3, 0], frame[3, 1], frame[3, 2])
    tip = vm.add(p, vm.matvec(R, lever))
    v_tip = vm.add(v, vm.matvec(R, vm.cross(w, lever)))
    rel = vm.sub(tip, origin)
    s = vm.dot(rel, t)
    y = vm.dot(rel, b)
    dn = vm.dot(rel, n)
    zero = (0.0, 0.0, 0.0)
    if s < edges[0] or s >= edges[-1]:
        return False, 0.0, 0.0, 0.0, zero, zero, zero, n, tip, v_tip, s, 0.0, math.inf

    i = patch_index(edges, s)
    mu = mus[i]
    h_hm, h_s, h_y = heightmap_eval(hm_values, hm_meta, s, y)
    g = math.sqrt(1.0 + h_s * h_s + h_y * h_y)
    normal = ((n[0] - h_s * t[0] - h_y * b[0]) / g,
              (n[1] - h_s * t[1] - h_y * b[1]) / g,
              (n[2] - h_s * t[2] - h_y * b[2]) / g)
    pen = (heights[i] + h_hm - dn) / g

    # Raised patches expose vertical faces towards lower neighbours. A tip
    # below the top that is still moving into a face is blocked by it (the
    # nearer face wins); once it stops, the top surface pushes it back out.
    nsides = edges.shape[0] - 1
    for side in range(2):
        j = i - 1 if side == 0 else i + 1
        if j < 0 or j >= nsides or heights[j] >= heights[i]:
            continue
        h_nb = heights[j] + h_hm
        ds = s - edges[i] if side == 0 else edges[i + 1] - s
        sgn = -1.0 if side == 0 else 1.0
        if dn >= h_nb:
            dist, a_t, a_n = ds, sgn, 0.0
        else:
            dist = math.sqrt(ds * ds + (h_nb - dn) ** 2)
            a_t, a_n = sgn * ds / dist, (h_nb - dn) / dist
        f_t = a_t * t[0] + a_n * n[0], a_t * t[1] + a_n * n[1], a_t * t[2] + a_n * n[2]
        if dist < pen and vm.dot(v_tip, f_t) < 0.0:
            pen = dist
            normal = f_t

    if pen <= 0.0:
        return False, 0.0, 0.0, 0.0, zero, zero, zero, normal, tip, v_tip, s, mu, -pen

    rate = -vm.dot(v_tip, normal)
    f_perp = max(0.0, k_n * pen + c_n * rate)
    vn = vm.dot(v_tip, normal)
    vt = vm.sub(v_tip, vm.scale(normal, vn))
    speed = vm.norm(vt)
    f_par = 0.0
    f_world = vm.scale(normal, f_perp)
    if speed > 0.0:
        f_par = mu * f_perp * math.tanh(speed / v_reg)
        f_world = vm.sub(f_world, vm.scale(vt, f_par / speed))
    f_body = vm.matTvec(R, f_world)
    tau = vm.cross(lever, f_body)
    return True, pen, f_perp, f_par, f_world, f_body, tau, normal, tip, v_tip, s, mu, 0.0


@njit(cache=True)
def _contact_rows(P, R, V, W, lever, edges, heights, mus, hm_values, hm_meta, frame, k_n, c_n, v_reg,
                  o_in, o_pen, o_fperp, o_fpar, o_mu, o_force, o_normal, o_vtip):
    lv = (lever[0], lever[1], lever[2])
    for r in range(P.shape[0]):
        Rr = ((R[r, 0, 0], R[r, 0, 1], R[r, 0, 2]), (R[r, 1, 0], R[r, 1, 1], R[r, 1, 2]),
              (R[r, 2, 0], R[r, 2, 1], R[r, 2, 2]))
        res = contact_kernel((P[r, 0], P[r, 1], P[r, 2]), Rr, (V[r, 0], V[r, 1], V[r, 2]),
                             (W[r, 0], W[r, 1], W[r, 2]), lv, edges, heights, mus, hm_values, hm_meta, frame,
                             k_n[r], c_n[r], v_reg[r])
        o_in[r] = res[0]
        o_pen[r] = res[1]
        o_fperp[r] = res[2]
        o_fpar[r] = res[3]
        o_mu[r] = res[11]
        for j in range(3):
            o_force[r, j] = res[4][j]
            o_normal[r, j] = res[7][j]
            o_vtip[r, j] = res[9][j]
