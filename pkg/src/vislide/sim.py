"""Batched closed-loop simulation of independent sliding instances.

A :class:`BatchSim` owns the flat state of N instances and advances them in
lock-step at the control rate through one numba kernel. Every instance is
integrated by its own scalar loop, so its trajectory never depends on how
many other instances share the batch; that is what makes sequential and
process-parallel rollouts bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _math as vm
from .control import cutoff_alpha, errors_kernel, impedance_kernel, slew_limit
from .dynamics import BodyParams, actuate, rigid_body_step
from .sensing import SensorModel
from .terrain import ContactParams, Terrain, contact_kernel, surface_point

LOG_COLUMNS = (
    ["t_s", "px_m", "py_m", "pz_m", "qw", "qx", "qy", "qz", "vx_m_per_s", "vy_m_per_s", "vz_m_per_s",
     "wx_rad_per_s", "wy_rad_per_s", "wz_rad_per_s", "px_ref_m", "py_ref_m", "pz_ref_m",
     "ex_m", "ey_m", "ez_m", "eRx_rad", "eRy_rad", "eRz_rad",
     "kx_N_per_m", "ky_N_per_m", "kz_N_per_m", "kroll_Nm_per_rad", "kpitch_Nm_per_rad", "kyaw_Nm_per_rad",
     "in_contact", "penetration_m", "F_perp_N", "F_par_N",
     "fx_true_N", "fy_true_N", "fz_true_N", "tx_true_Nm", "ty_true_Nm", "tz_true_Nm",
     "fx_meas_N", "fy_meas_N", "fz_meas_N", "tx_meas_Nm", "ty_meas_Nm", "tz_meas_Nm",
     "tip_s_m", "mu", "separation_m", "tilt_rad", "pitch_rate_filt_rad_per_s",
     "friction_filt_N", "normal_filt_N", "fault"]
)
COL = {name: i for i, name in enumerate(LOG_COLUMNS)}

FEATURE_NAMES = ("pitch_rate_filt", "pitch_error", "normal_position_error", "sliding_velocity",
                 "friction_force_filt", "normal_force_filt")

# fault codes
NON_FINITE, TILT, ARENA = 1, 2, 3


@dataclass
class SimRates:
    physics_dt: float = 0.0025
    control_decimation: int = 4
    policy_decimation: int = 5

    @property
    def control_dt(self) -> float:
        return self.physics_dt * self.control_decimation

    @property
    def policy_dt(self) -> float:
        return self.control_dt * self.policy_decimation


@dataclass
class Instance:
    """One simulated world: true vehicle, actuator, contact and terrain."""

    body: BodyParams
    force_limit: np.ndarray
    torque_limit: np.ndarray
    delay_steps: int
    contact: ContactParams
    terrain: Terrain
    seed: int = 0


@dataclass
class FeatureFilters:
    pitch_rate_hz: float = 10.0
    force_hz: float = 20.0


@dataclass
class GainBounds:
    """Gain limits shared by every controller in a batch."""

    k_min: np.ndarray
    k_max: np.ndarray
    zeta: float
    slew_rate: np.ndarray
    adapted_axes: tuple = (0, 4)
    fixed_action: np.ndarray = field(default_factory=lambda: np.full(6, 0.5))

    def __post_init__(self):
        self.k_min = np.asarray(self.k_min, float).reshape(6)
        self.k_max = np.asarray(self.k_max, float).reshape(6)
        self.slew_rate = np.broadcast_to(np.asarray(self.slew_rate, float), (6,)).copy()
        self.fixed_action = np.broadcast_to(np.asarray(self.fixed_action, float), (6,)).copy()
        self.adapted_axes = tuple(int(a) for a in self.adapted_axes)

    @property
    def action_dim(self) -> int:
        return len(self.adapted_axes)

    def expand(self, action) -> np.ndarray:
        """Embed adapted-axis actions (N, out) into full 6-axis actions."""
        action = np.atleast_2d(np.asarray(action, float))
        if action.shape[1] != self.action_dim:
            raise ValueError(f"expected {self.action_dim} action components, got {action.shape[1]}")
        full = np.tile(self.fixed_action, (action.shape[0], 1))
        full[:, list(self.adapted_axes)] = action
        return full

    def stiffness(self, action) -> np.ndarray:
        k = self.k_min + (self.k_max - self.k_min) * self.expand(action)
        return np.clip(k, self.k_min, self.k_max)


class BatchSim:
    """N instances sharing a reference trajectory and controller structure."""

    def __init__(self, instances, trajectory, gains: GainBounds, rates: SimRates = SimRates(),
                 sensor: SensorModel | None = None, filters: FeatureFilters = FeatureFilters(),
                 model: BodyParams | None = None, priv_offsets=(-0.02, 0.0, 0.02, 0.04, 0.06),
                 max_tilt_deg: float = 60.0, arena_depth: float = 1.0, noise_seed: int = 0):
        self.instances = list(instances)
        self.N = len(self.instances)
        self.trajectory = trajectory
        self.gains = gains
        self.rates = rates
        self.sensor = sensor or SensorModel()
        self.model = model or self.instances[0].body
        self.priv_offsets = np.asarray(priv_offsets, float)
        self.max_tilt_cos = math.cos(math.radians(max_tilt_deg))
        self.arena_depth = float(arena_depth)
        self.noise_seed = noise_seed
        self.ref_p, self.ref_v, self.ref_a = trajectory.control_arrays(rates.control_dt)
        self.n_control = self.ref_p.shape[0] - 1
        self.R_ref = np.asarray(trajectory.attitude_matrix, float)
        self.R_task = np.asarray(trajectory.plane.task_rotation, float)
        self.alpha = np.array([cutoff_alpha(filters.pitch_rate_hz, rates.control_dt),
                               cutoff_alpha(filters.force_hz, rates.control_dt),
                               cutoff_alpha(filters.force_hz, rates.control_dt)])
        self._pack_instances()
        self.reset()

    # -- setup --------------------------------------------------------------

    def _pack_instances(self):
        N = self.N
        insts = self.instances
        self.mass = np.array([i.body.mass for i in insts])
        self.inertia = np.array([i.body.inertia for i in insts])
        self.inertia_inv = np.array([i.body.inertia_inv for i in insts])
        self.lever = np.array([i.body.lever for i in insts])
        self.gravity = self.model.gravity
        self.delay = np.array([i.delay_steps for i in insts], dtype=np.int64)
        self.flim = np.array([i.force_limit for i in insts], float)
        self.tlim = np.array([i.torque_limit for i in insts], float)
        self.kn = np.array([i.contact.k_n for i in insts])
        self.cn = np.array([i.contact.c_n for i in insts])
        self.vreg = np.array([i.contact.v_reg for i in insts])
        targs = [i.terrain.kernel_args() for i in insts]
        pmax = max(len(a[1]) for a in targs)
        self.n_patch = np.array([len(a[1]) for a in targs], dtype=np.int64)
        self.edges = np.full((N, pmax + 1), np.inf)
        self.heights = np.zeros((N, pmax))
        self.mus = np.zeros((N, pmax))
        hs = np.array([a[3].shape for a in targs], dtype=np.int64)
        self.hm_shape = hs
        self.hm_values = np.zeros((N, hs[:, 0].max(), hs[:, 1].max()))
        self.hm_meta = np.zeros((N, 3))
        self.frame = np.zeros((N, 4, 3))
        for j, (edges, heights, mus, hmv, hmm, frame) in enumerate(targs):
            p = len(heights)
            self.edges[j, :p + 1] = edges
            self.heights[j, :p] = heights
            self.mus[j, :p] = mus
            self.hm_values[j, :hmv.shape[0], :hmv.shape[1]] = hmv
            self.hm_meta[j] = hmm
            self.frame[j] = frame

    def reset(self):
        N = self.N
        x0 = np.zeros(13)
        x0[0:3] = self.ref_p[0]
        x0[3:7] = self.trajectory.attitude
        self.x = np.tile(x0, (N, 1))
        self.act_buf = np.zeros((N, int(self.delay.max()) + 1, 6))
        self.act_head = np.zeros(N, dtype=np.int64)
        self.k_cur = np.zeros((N, 6))
        self.k_des = np.zeros((N, 6))
        self.filt = np.zeros((N, 3))
        self.bias = np.zeros((N, 6))
        self.fault = np.zeros(N, dtype=np.int64)
        self.features = np.zeros((N, 6))
        self.priv = np.zeros((N, 2 + 4 * len(self.priv_offsets)))
        self.info = np.zeros((N, 11))
        self.log = np.zeros((N, self.n_control, len(LOG_COLUMNS)))
        self.k_index = 0
        self._gains_set = False
        self._draw_noise()

    def _draw_noise(self):
        N, T = self.N, self.n_control
        s = self.sensor
        self.noise_on = np.array([s.enable_wrench_noise, s.enable_state_noise])
        if not (s.enable_wrench_noise or s.enable_state_noise):
            self.wrench_noise = np.zeros((N, 1, 6))
            self.bias_inc = np.zeros((N, 1, 6))
            self.state_noise = np.zeros((N, 1, 12))
            return
        sq = math.sqrt(self.rates.control_dt)
        self.wrench_noise = np.zeros((N, T, 6))
        self.bias_inc = np.zeros((N, T, 6))
        self.state_noise = np.zeros((N, T, 12))
        for j, inst in enumerate(self.instances):
            rng = np.random.default_rng([self.noise_seed, inst.seed, 7])
            if s.enable_wrench_noise:
                self.wrench_noise[j] = rng.standard_normal((T, 6)) * s.wrench_noise_std
                self.bias_inc[j] = rng.standard_normal((T, 6)) * s.wrench_bias_walk_std * sq
            if s.enable_state_noise:
                self.state_noise[j] = rng.standard_normal((T, 12)) * s.estimate_noise_std

    # -- stepping -----------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.k_index >= self.n_control

    def set_stiffness(self, k_des):
        """Target gains for the next control ticks; the first call also seeds k_current."""
        self.k_des[:] = k_des
        if not self._gains_set:
            self.k_cur[:] = k_des
            self._gains_set = True

    def advance(self, n_steps: int):
        n_steps = min(int(n_steps), self.n_control - self.k_index)
        if n_steps <= 0:
            return
        advance_kernel(
            n_steps, self.k_index, self.rates.physics_dt, self.rates.control_decimation, self.gravity,
            self.x, self.mass, self.inertia, self.inertia_inv, self.lever,
            self.act_buf, self.act_head, self.delay, self.flim, self.tlim,
            self.kn, self.cn, self.vreg,
            self.edges, self.heights, self.mus, self.n_patch, self.hm_values, self.hm_meta, self.hm_shape,
            self.frame, self.ref_p, self.ref_v, self.ref_a, self.R_ref, self.R_task,
            self.model.mass, self.model.inertia,
            self.k_cur, self.k_des, self.gains.zeta, self.gains.slew_rate * self.rates.control_dt,
            self.filt, self.alpha,
            self.noise_on, self.wrench_noise, self.bias, self.bias_inc, self.state_noise,
            self.max_tilt_cos, self.arena_depth, self.priv_offsets,
            self.fault, self.features, self.priv, self.info, self.log,
        )
        self.k_index += n_steps

    def time(self) -> float:
        return self.k_index * self.rates.control_dt

    def privileged_observation(self) -> np.ndarray:
        return np.concatenate([self.features, self.priv], axis=1)


# -- kernel ----------------------------------------------------------------


@njit(cache=True)
def _t33(a):
    return ((a[0, 0], a[0, 1], a[0, 2]), (a[1, 0], a[1, 1], a[1, 2]), (a[2, 0], a[2, 1], a[2, 2]))


@njit(cache=True)
def advance_kernel(n_steps, k0, dt, n_sub, gravity,
                   X, mass, inertia, inertia_inv, lever,
                   act_buf, act_head, delay, flim, tlim,
                   kn, cn, vreg,
                   edges, heights, mus, n_patch, hm_values, hm_meta, hm_shape, frame,
                   ref_p, ref_v, ref_a, R_ref_a, R_task_a,
                   c_mass, c_inertia_a,
                   k_cur, k_des, zeta, slew_step,
                   filt, alpha,
                   noise_on, wrench_noise, bias, bias_inc, state_noise,
                   max_tilt_cos, arena_depth, priv_offsets,
                   fault, features, priv, info, log):
    R_ref = _t33(R_ref_a)
    R_task = _t33(R_task_a)
    c_inertia = _t33(c_inertia_a)
    w_ref = (0.0, 0.0, 0.0)
    z_ref = (R_ref[0][2], R_ref[1][2], R_ref[2][2])
    x_task = (R_task[0][0], R_task[1][0], R_task[2][0])
    d = np.empty(6)
    N = X.shape[0]
    for i in range(N):
        if fault[i] != 0:
            continue
        x = X[i]
        I_i = _t33(inertia[i])
        Iinv_i = _t33(inertia_inv[i])
        lev = (lever[i, 0], lever[i, 1], lever[i, 2])
        np_i = n_patch[i]
        e_i = edges[i, :np_i + 1]
        h_i = heights[i, :np_i]
        m_i = mus[i, :np_i]
        hmv = hm_values[i, :hm_shape[i, 0], :hm_shape[i, 1]]
        hmm = hm_meta[i]
        fr = frame[i]
        nrm = (fr[1, 0], fr[1, 1], fr[1, 2])
        tan = (fr[2, 0], fr[2, 1], fr[2, 2])
        head = act_head[i]
        for c in range(n_steps):
            kc = k0 + c
            # measurement of the pose/velocity estimate
            p = (x[0], x[1], x[2])
            q = (x[3], x[4], x[5], x[6])
            v = (x[7], x[8], x[9])
            w = (x[10], x[11], x[12])
            if noise_on[1]:
                sn = state_noise[i, kc]
                p = (p[0] + sn[0], p[1] + sn[1], p[2] + sn[2])
                q = vm.quat_normalize(vm.quat_mul(q, vm.quat_exp((sn[3], sn[4], sn[5]))))
                v = (v[0] + sn[6], v[1] + sn[7], v[2] + sn[8])
                w = (w[0] + sn[9], w[1] + sn[10], w[2] + sn[11])
            R_m = vm.quat_to_rot(q)
            pr = (ref_p[kc, 0], ref_p[kc, 1], ref_p[kc, 2])
            vr = (ref_v[kc, 0], ref_v[kc, 1], ref_v[kc, 2])
            ar = (ref_a[kc, 0], ref_a[kc, 1], ref_a[kc, 2])

            slew_limit(k_cur[i], k_des[i], slew_step)
            for j in range(6):
                d[j] = 2.0 * zeta * math.sqrt(k_cur[i, j])
            f_cmd, tau_cmd = impedance_kernel(p, R_m, v, w, pr, vr, ar, R_ref, w_ref, k_cur[i], d,
                                              c_mass, c_inertia, gravity, R_task)
            cmd = (f_cmd[0], f_cmd[1], f_cmd[2], tau_cmd[0], tau_cmd[1], tau_cmd[2])

            ok = True
            for _ in range(n_sub):
                out, head = actuate(act_buf[i], head, delay[i], cmd, flim[i], tlim[i])
                R = vm.quat_to_rot((x[3], x[4], x[5], x[6]))
                ct = contact_kernel((x[0], x[1], x[2]), R, (x[7], x[8], x[9]), (x[10], x[11], x[12]), lev,
                                    e_i, h_i, m_i, hmv, hmm, fr, kn[i], cn[i], vreg[i])
                f_act = vm.matvec(R, (out[0], out[1], out[2]))
                f_world = vm.add(f_act, ct[4])
                tau = vm.add((out[3], out[4], out[5]), ct[6])
                ok = rigid_body_step(x, mass[i], I_i, Iinv_i, f_world, tau, gravity, dt)
                if not ok:
                    break

            # post-step truth
            R = vm.quat_to_rot((x[3], x[4], x[5], x[6]))
            ct = contact_kernel((x[0], x[1], x[2]), R, (x[7], x[8], x[9]), (x[10], x[11], x[12]), lev,
                                e_i, h_i, m_i, hmv, hmm, fr, kn[i], cn[i], vreg[i])
            in_contact, pen, f_perp, f_par = ct[0], ct[1], ct[2], ct[3]
            f_body, tau_body, tip, s_tip, mu_tip, sep = ct[5], ct[6], ct[8], ct[10], ct[11], ct[12]

            # wrench sensor
            fm = f_body
            tm = tau_body
            if noise_on[0]:
                for j in range(6):
                    bias[i, j] += bias_inc[i, kc, j]
                wn = wrench_noise[i, kc]
                fm = (fm[0] + wn[0] + bias[i, 0], fm[1] + wn[1] + bias[i, 1], fm[2] + wn[2] + bias[i, 2])
                tm = (tm[0] + wn[3] + bias[i, 3], tm[1] + wn[4] + bias[i, 4], tm[2] + wn[5] + bias[i, 5])

            # features from measured quantities, decomposed in the nominal frame
            pm = (x[0], x[1], x[2])
            qm = (x[3], x[4], x[5], x[6])
            vmeas = (x[7], x[8], x[9])
            wm = (x[10], x[11], x[12])
            if noise_on[1] and kc + 1 < state_noise.shape[1]:
                sn = state_noise[i, kc + 1]
                pm = (pm[0] + sn[0], pm[1] + sn[1], pm[2] + sn[2])
                qm = vm.quat_normalize(vm.quat_mul(qm, vm.quat_exp((sn[3], sn[4], sn[5]))))
                vmeas = (vmeas[0] + sn[6], vmeas[1] + sn[7], vmeas[2] + sn[8])
                wm = (wm[0] + sn[9], wm[1] + sn[10], wm[2] + sn[11])
            R_meas = vm.quat_to_rot(qm)
            fw = vm.matvec(R_meas, fm)
            normal_force = vm.dot(fw, nrm)
            friction_force = -vm.dot(fw, tan)
            filt[i, 0] += alpha[0] * (wm[1] - filt[i, 0])
            filt[i, 1] += alpha[1] * (friction_force - filt[i, 1])
            filt[i, 2] += alpha[2] * (normal_force - filt[i, 2])
            kn1 = min(kc + 1, ref_p.shape[0] - 1)
            pr1 = (ref_p[kn1, 0], ref_p[kn1, 1], ref_p[kn1, 2])
            vr1 = (ref_v[kn1, 0], ref_v[kn1, 1], ref_v[kn1, 2])
            es_m, ev_m = errors_kernel(pm, R_meas, vmeas, wm, pr1, vr1, R_ref, w_ref)
            features[i, 0] = filt[i, 0]
            features[i, 1] = es_m[4]
            features[i, 2] = -vm.dot((es_m[0], es_m[1], es_m[2]), x_task)
            features[i, 3] = vm.dot(vmeas, tan)
            features[i, 4] = filt[i, 1]
            features[i, 5] = filt[i, 2]

            # ground-truth errors for reward and logs
            p = (x[0], x[1], x[2])
            v = (x[7], x[8], x[9])
            w = (x[10], x[11], x[12])
            es, ev = errors_kernel(p, R, v, w, pr1, vr1, R_ref, w_ref)
            z_body = (R[0][2], R[1][2], R[2][2])
            cos_tilt = min(1.0, max(-1.0, vm.dot(z_body, z_ref)))
            tilt = math.acos(cos_tilt)

            code = 0
            if not ok:
                code = 1
            elif cos_tilt < max_tilt_cos:
                code = 2
            else:
                rel = vm.sub(tip, (fr[0, 0], fr[0, 1], fr[0, 2]))
                dn = vm.dot(rel, nrm)
                if s_tip < e_i[0] or s_tip >= e_i[np_i] or dn > arena_depth or dn < -arena_depth:
                    code = 3

            row = log[i, kc]
            row[0] = (kc + 1) * dt * n_sub
            for j in range(13):
                row[1 + j] = x[j]
            for j in range(3):
                row[14 + j] = pr1[j]
                row[17 + j] = es[j]
                row[20 + j] = es[3 + j]
                row[33 + j] = f_body[j]
                row[36 + j] = tau_body[j]
                row[39 + j] = fm[j]
                row[42 + j] = tm[j]
            for j in range(6):
                row[23 + j] = k_cur[i, j]
            row[29] = 1.0 if in_contact else 0.0
            row[30] = pen
            row[31] = f_perp
            row[32] = f_par
            row[45] = s_tip
            row[46] = mu_tip
            row[47] = sep
            row[48] = tilt
            row[49] = filt[i, 0]
            row[50] = filt[i, 1]
            row[51] = filt[i, 2]
            row[52] = code

            info[i, 0] = es[0]
            info[i, 1] = es[1]
            info[i, 2] = es[2]
            info[i, 3] = es[3]
            info[i, 4] = es[4]
            info[i, 5] = es[5]
            info[i, 6] = w[0]
            info[i, 7] = w[1]
            info[i, 8] = w[2]
            info[i, 9] = sep
            info[i, 10] = tilt

            if code != 0:
                fault[i] = code
                break

        act_head[i] = head

        # privileged surface samples around the tip
        R = vm.quat_to_rot((x[3], x[4], x[5], x[6]))
        tip = vm.add((x[0], x[1], x[2]), vm.matvec(R, lev))
        rel = vm.sub(tip, (fr[0, 0], fr[0, 1], fr[0, 2]))
        s = vm.dot(rel, tan)
        y = vm.dot(rel, (fr[3, 0], fr[3, 1], fr[3, 2]))
        hc, mu_c, _, _ = surface_point(e_i, h_i, m_i, hmv, hmm, s, y)
        inside = s >= e_i[0] and s < e_i[np_i]
        priv[i, 0] = mu_c if inside else 0.0
        priv[i, 1] = 1.0 if info[i, 9] == 0.0 and inside else 0.0
        K = priv_offsets.shape[0]
        for j in range(K):
            hj, _, hs, hy = surface_point(e_i, h_i, m_i, hmv, hmm, s + priv_offsets[j], y)
            g = math.sqrt(1.0 + hs * hs + hy * hy)
            priv[i, 2 + j] = hj
            priv[i, 2 + K + 3 * j] = -1.0 / g
            priv[i, 2 + K + 3 * j + 1] = -hy / g
            priv[i, 2 + K + 3 * j + 2] = -hs / g
