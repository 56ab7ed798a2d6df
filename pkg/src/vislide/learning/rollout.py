"""Vectorized episodes over perturbed instances, sequential or process-parallel.

Every random draw belongs to one instance and is keyed by
``(seed, epoch, instance index)``, and the simulator, network inference and
reward are evaluated row by row. Splitting the instances over worker
processes therefore reproduces the sequential results bit for bit.
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..control import cutoff_alpha
from ..dynamics import BodyParams
from ..policy import Normalizer, PolicyNet, ValueNet, infer_logits, sigmoid_rows
from ..scenarios import ScenarioSpec, Trajectory, make_reference, make_terrain
from ..sensing import SensorModel
from ..sim import LOG_COLUMNS, BatchSim, FeatureFilters, GainBounds, Instance, SimRates
from ..terrain import ContactParams, Plane
from .reward import TERMS, RewardWeights, reward_rows
from .teacher import TeacherSpec, teacher_actions


class TrainingError(RuntimeError):
    pass


@dataclass
class PerturbRanges:
    """Relative half-widths of the per-instance property jitter."""

    mass: float = 0.1
    inertia: float = 0.1
    r_end: float = 0.1
    k_n: float = 0.1
    delay: float = 0.1

    def is_zero(self) -> bool:
        return not any((self.mass, self.inertia, self.r_end, self.k_n, self.delay))


@dataclass
class EnvConfig:
    body: BodyParams
    force_limit: np.ndarray
    torque_limit: np.ndarray
    delay_steps: int
    contact: ContactParams
    gains: GainBounds
    scenario: ScenarioSpec
    rates: SimRates = field(default_factory=SimRates)
    filters: FeatureFilters = field(default_factory=FeatureFilters)
    sensor: SensorModel = field(default_factory=SensorModel)
    perturb: PerturbRanges = field(default_factory=PerturbRanges)
    approach_action: np.ndarray | None = None
    output_cutoff_hz: float = 2.0
    priv_offsets: tuple = (-0.06, -0.03, 0.0, 0.03, 0.06)
    max_tilt_deg: float = 60.0
    arena_depth: float = 1.0
    fault_penalty: float = 10.0
    reward: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        self.force_limit = np.asarray(self.force_limit, float)
        self.torque_limit = np.asarray(self.torque_limit, float)
        if self.approach_action is None:
            self.approach_action = np.full(self.gains.action_dim, 0.5)
        self.approach_action = np.asarray(self.approach_action, float).reshape(self.gains.action_dim)

    @property
    def n_approach_ticks(self) -> int:
        return int(round(self.scenario.trajectory.approach_time / self.rates.policy_dt))

    @property
    def n_slide_ticks(self) -> int:
        return int(round(self.scenario.trajectory.slide_time / self.rates.policy_dt))

    def trajectory(self) -> Trajectory:
        return make_reference(self.scenario.trajectory, Plane(), self.body.lever)


def instance_rng(seed: int, epoch: int, index: int, stream: int = 0):
    return np.random.default_rng([int(seed), int(epoch), int(index), int(stream)])


def perturb_instance(cfg: EnvConfig, rng, seed_tag: int = 0) -> Instance:
    """Jitter vehicle and contact properties within the configured ranges and draw a terrain."""
    p = cfg.perturb
    b = cfg.body

    def jitter(scale):
        return 1.0 + rng.uniform(-scale, scale) if scale > 0 else 1.0

    mass = b.mass * jitter(p.mass)
    diag = np.diag(b.inertia) * np.array([jitter(p.inertia) for _ in range(3)])
    inertia = b.inertia.copy()
    inertia[np.diag_indices(3)] = diag
    r_end = b.r_end * np.array([jitter(p.r_end) for _ in range(3)])
    body = BodyParams(mass, inertia, b.r_com.copy(), r_end, b.gravity)
    contact = ContactParams(cfg.contact.k_n * jitter(p.k_n), cfg.contact.c_n, cfg.contact.v_reg)
    delay = int(round(cfg.delay_steps * jitter(p.delay)))
    terrain = make_terrain(cfg.scenario, rng)
    return Instance(body, cfg.force_limit.copy(), cfg.torque_limit.copy(), max(delay, 0), contact, terrain,
                    seed=seed_tag)


# -- controllers ---------------------------------------------------------------


@dataclass
class ConstantController:
    """Fixed action; with it the variable controller reduces to the baseline."""

    action: np.ndarray

    def act(self, z, priv, k):
        return np.tile(np.asarray(self.action, float), (z.shape[0], 1)), None


@dataclass
class TeacherController:
    spec: TeacherSpec

    def act(self, z, priv, k):
        return np.atleast_2d(teacher_actions(priv, self.spec)), None


@dataclass
class PolicyController:
    """Neural policy on student (``z``) or privileged observations.

    With ``noise`` (N, T, out) standard normals the action is sampled in logit
    space; without it the mean path is used.
    """

    net: PolicyNet
    normalizer: Normalizer | None = None
    privileged: bool = False
    noise: np.ndarray | None = None

    def observe(self, z, priv):
        x = priv if self.privileged else z
        return self.normalizer(x) if self.normalizer is not None else np.asarray(x, float)

    def act(self, z, priv, k):
        x = np.ascontiguousarray(self.observe(z, priv))
        mean = infer_logits(self.net, x)
        u = mean
        if self.noise is not None:
            u = mean + np.exp(self.net.log_std) * self.noise[:, k, :]
        a = np.empty_like(u)
        sigmoid_rows(np.ascontiguousarray(u), a)
        return a, (x, u, mean)


# -- episodes ------------------------------------------------------------------


@dataclass
class EpisodeResult:
    """Policy-rate arrays (N, T, ...) over the sliding phase plus the control-rate logs."""

    obs_student: np.ndarray
    obs_priv: np.ndarray
    obs_policy: np.ndarray | None
    actions: np.ndarray
    actions_filtered: np.ndarray
    logits: np.ndarray | None
    rewards: np.ndarray
    reward_terms: np.ndarray
    active: np.ndarray
    done: np.ndarray
    fault: np.ndarray
    fault_code: np.ndarray
    final_obs_policy: np.ndarray | None
    logs: np.ndarray
    control_actions: np.ndarray
    control_rewards: np.ndarray
    approach_ticks: int
    k_index_end: np.ndarray

    @property
    def n_instances(self) -> int:
        return self.actions.shape[0]


def build_instances(cfg: EnvConfig, seed: int, epoch: int, indices):
    return [perturb_instance(cfg, instance_rng(seed, epoch, i), seed_tag=i) for i in indices]


def run_batch_episode(cfg: EnvConfig, controller, instances, noise_seed: int = 0,
                      record_policy_obs: bool = False) -> EpisodeResult:
    """Approach with a fixed action, then let ``controller`` set gains at the policy rate."""
    traj = cfg.trajectory()
    sim = BatchSim(instances, traj, cfg.gains, cfg.rates, copy.deepcopy(cfg.sensor), cfg.filters,
                   model=cfg.body, priv_offsets=cfg.priv_offsets, max_tilt_deg=cfg.max_tilt_deg,
                   arena_depth=cfg.arena_depth, noise_seed=noise_seed)
    N = len(instances)
    m = cfg.gains.action_dim
    dec = cfg.rates.policy_decimation
    n_app = cfg.n_approach_ticks
    T = min(cfg.n_slide_ticks, (sim.n_control // dec) - n_app)
    alpha = cutoff_alpha(cfg.output_cutoff_hz, cfg.rates.policy_dt)
    weights = cfg.reward.as_array()

    a_app = np.tile(cfg.approach_action, (N, 1))
    sim.set_stiffness(cfg.gains.stiffness(a_app))
    for _ in range(n_app):
        sim.advance(dec)

    P = sim.privileged_observation().shape[1]
    obs_student = np.zeros((N, T, 6))
    obs_priv = np.zeros((N, T, P))
    obs_policy = None
    logits = None
    actions = np.zeros((N, T, m))
    actions_f = np.zeros((N, T, m))
    rewards = np.zeros((N, T))
    terms = np.zeros((N, T, len(TERMS)))
    active = np.zeros((N, T), dtype=bool)
    done = np.zeros((N, T), dtype=bool)
    fault = np.zeros((N, T), dtype=bool)
    fault_code = np.zeros(N, dtype=np.int64)
    k_end = np.full(N, sim.n_control, dtype=np.int64)
    # an instance that faulted during the approach never acts
    alive = sim.fault == 0
    for i in np.flatnonzero(~alive):
        fault_code[i] = sim.fault[i]
        k_end[i] = _fault_index(sim, i)

    filt = a_app.copy()
    a_prev = None
    step_terms = np.zeros((N, len(TERMS)))
    step_total = np.zeros(N)
    final_obs = None
    for k in range(T):
        z = sim.features.copy()
        priv = sim.privileged_observation()
        a, extra = controller.act(z, priv, k)
        a = np.asarray(a, float)
        if extra is not None and record_policy_obs:
            if obs_policy is None:
                obs_policy = np.zeros((N, T, extra[0].shape[1]))
                logits = np.zeros((N, T, m))
            obs_policy[:, k] = extra[0]
            logits[:, k] = extra[1]
        filt = filt + alpha * (a - filt)
        sim.set_stiffness(cfg.gains.stiffness(filt))
        sim.advance(dec)
        if a_prev is None:
            a_prev = a
        step_terms[:] = 0.0
        step_total[:] = 0.0
        reward_rows(sim.info, np.ascontiguousarray(a), np.ascontiguousarray(a_prev), weights, alive,
                    step_terms, step_total)
        obs_student[:, k] = z
        obs_priv[:, k] = priv
        actions[:, k] = a
        actions_f[:, k] = filt
        rewards[:, k] = step_total
        terms[:, k] = step_terms
        active[:, k] = alive
        newly = alive & (sim.fault != 0)
        for i in np.flatnonzero(newly):
            rewards[i, k] -= cfg.fault_penalty
            fault[i, k] = True
            done[i, k] = True
            fault_code[i] = sim.fault[i]
            k_end[i] = _fault_index(sim, i)
        alive = alive & ~newly
        a_prev = a
    done[:, T - 1] |= active[:, T - 1]

    if record_policy_obs and hasattr(controller, "observe"):
        final_obs = controller.observe(sim.features.copy(), sim.privileged_observation())

    ctrl_a, ctrl_r = _control_rate_traces(actions, actions_f, rewards, terms, active, n_app, dec,
                                          sim.n_control, a_app)
    return EpisodeResult(obs_student, obs_priv, obs_policy, actions, actions_f, logits, rewards, terms, active,
                         done, fault, fault_code, final_obs, sim.log, ctrl_a, ctrl_r, n_app, k_end)


def _fault_index(sim: BatchSim, i: int) -> int:
    codes = sim.log[i, :, -1]
    idx = np.flatnonzero(codes != 0)
    return int(idx[0]) + 1 if idx.size else sim.k_index


def _control_rate_traces(actions, actions_f, rewards, terms, active, n_app, dec, n_control, a_app):
    """Forward-fill policy-rate signals onto control ticks: [raw (m), filtered (m)] and [terms, total]."""
    N, T, m = actions.shape
    A = np.zeros((N, n_control, 2 * m))
    Rw = np.zeros((N, n_control, terms.shape[2] + 1))
    A[:, :, :m] = a_app[:, None, :]
    A[:, :, m:] = a_app[:, None, :]
    for k in range(T):
        sl = slice((n_app + k) * dec, (n_app + k + 1) * dec)
        A[:, sl, :m] = actions[:, k, None, :]
        A[:, sl, m:] = actions_f[:, k, None, :]
        Rw[:, sl, :-1] = terms[:, k, None, :]
        Rw[:, sl, -1] = rewards[:, k, None]
    return A, Rw


# -- parallel dispatch ---------------------------------------------------------


def _chunk_job(args):
    cfg, controller_factory, seed, epoch, indices, noise_seed, record = args
    instances = build_instances(cfg, seed, epoch, indices)
    controller = controller_factory(indices)
    return run_batch_episode(cfg, controller, instances, noise_seed, record)


def run_episodes(cfg: EnvConfig, controller_factory, seed: int, epoch: int, n_instances: int,
                 parallel: int = 0, noise_seed: int | None = None, record_policy_obs: bool = False) -> EpisodeResult:
    """Run ``n_instances`` instances, optionally spread over ``parallel`` processes.

    ``controller_factory(indices)`` builds the controller for a subset of
    instance indices; it must be picklable for parallel use.
    """
    noise_seed = seed if noise_seed is None else noise_seed
    indices = list(range(n_instances))
    if parallel and parallel > 1 and n_instances > 1:
        n_chunks = min(parallel, n_instances)
        chunks = [list(c) for c in np.array_split(indices, n_chunks)]
        jobs = [(cfg, controller_factory, seed, epoch, c, noise_seed, record_policy_obs) for c in chunks]
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            parts = list(ex.map(_chunk_job, jobs))
        return merge_results(parts)
    return _chunk_job((cfg, controller_factory, seed, epoch, indices, noise_seed, record_policy_obs))


def merge_results(parts) -> EpisodeResult:
    def cat(name):
        vals = [getattr(p, name) for p in parts]
        if any(v is None for v in vals):
            return None
        return np.concatenate(vals, axis=0)

    first = parts[0]
    kw = {}
    for name in EpisodeResult.__dataclass_fields__:
        if name == "approach_ticks":
            kw[name] = first.approach_ticks
        elif name == "logs":
            T = max(p.logs.shape[1] for p in parts)
            kw[name] = np.concatenate([p.logs for p in parts], axis=0) if T else first.logs
        else:
            kw[name] = cat(name)
    return EpisodeResult(**kw)


# -- controller factories (top-level so they pickle) ---------------------------


@dataclass
class ConstantFactory:
    action: np.ndarray

    def __call__(self, indices):
        return ConstantController(np.asarray(self.action, float))


@dataclass
class TeacherFactory:
    spec: TeacherSpec

    def __call__(self, indices):
        return TeacherController(self.spec)


@dataclass
class PolicyFactory:
    """Deterministic policy, or stochastic with noise keyed per instance."""

    dims: list
    params: np.ndarray
    leaky_slope: float
    normalizer: Normalizer | None
    privileged: bool = False
    stochastic: bool = False
    seed: int = 0
    epoch: int = 0
    horizon: int = 0

    @classmethod
    def from_net(cls, net: PolicyNet, normalizer=None, privileged=False, stochastic=False, seed=0, epoch=0,
                 horizon=0) -> "PolicyFactory":
        return cls(list(net.dims), net.params.copy(), net.leaky_slope, normalizer, privileged, stochastic, seed,
                   epoch, horizon)

    def net(self) -> PolicyNet:
        return PolicyNet(self.dims, self.leaky_slope, params=self.params)

    def __call__(self, indices):
        noise = None
        if self.stochastic:
            m = self.dims[-1]
            noise = np.stack([instance_rng(self.seed, self.epoch, i, 1).standard_normal((self.horizon, m))
                              for i in indices])
        return PolicyController(self.net(), self.normalizer, self.privileged, noise)


# -- training batches ------------------------------------------------------------


@dataclass
class RolloutBatch:
    """Flattened transitions in (instance, time) order with episode boundaries."""

    obs: np.ndarray
    actions: np.ndarray
    logits: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    dones: np.ndarray
    faults: np.ndarray
    terms: np.ndarray
    episode_returns: np.ndarray
    fault_rate: float
    gain_excess: float = 0.0

    def __len__(self):
        return self.obs.shape[0]


def gaussian_log_prob(u, mean, log_std):
    """Log density of logit-space samples; the squashing Jacobian cancels in PPO ratios."""
    var = np.exp(2.0 * log_std)
    return -0.5 * np.sum((u - mean) ** 2 / var + 2.0 * log_std + math.log(2.0 * math.pi), axis=-1)


def collect_rollouts(cfg: EnvConfig, actor: PolicyNet, critic: ValueNet, normalizer: Normalizer | None,
                     n_instances: int, seed: int, epoch: int, privileged: bool = False, parallel: int = 0,
                     horizon: int | None = None, instance_epoch: int | None = None) -> RolloutBatch:
    """Sample the stochastic actor on freshly perturbed instances and package transitions."""
    T = cfg.n_slide_ticks if horizon is None else int(horizon)
    run_cfg = cfg
    if T != cfg.n_slide_ticks:
        run_cfg = copy.deepcopy(cfg)
        traj = run_cfg.scenario.trajectory
        traj.slide_time = T * cfg.rates.policy_dt
    factory = PolicyFactory.from_net(actor, normalizer, privileged, True, seed, epoch, T)
    inst_epoch = epoch if instance_epoch is None else instance_epoch
    res = run_episodes_keyed(run_cfg, factory, seed, inst_epoch, n_instances, parallel, epoch)
    if (res.fault_code != 0).all():
        raise TrainingError(f"every instance faulted (codes {res.fault_code.tolist()})")
    mask = res.active.reshape(-1)
    obs = res.obs_policy.reshape(-1, res.obs_policy.shape[-1])[mask]
    u = res.logits.reshape(-1, res.logits.shape[-1])[mask]
    mean = infer_logits(actor, np.ascontiguousarray(obs))
    logp = gaussian_log_prob(u, mean, actor.log_std)
    values = critic.value(obs)
    # bootstrap from the next observation; the last step uses the post-episode observation
    N, Tn = res.active.shape
    next_obs = np.concatenate([res.obs_policy[:, 1:], res.final_obs_policy[:, None, :]], axis=1)
    next_values = critic.value(next_obs.reshape(-1, next_obs.shape[-1])[mask])
    rewards = res.rewards.reshape(-1)[mask]
    dones = res.done.reshape(-1)[mask]
    faults = res.fault.reshape(-1)[mask]
    terms = res.reward_terms.reshape(-1, res.reward_terms.shape[-1])[mask]
    ep_ret = np.array([res.rewards[i][res.active[i]].sum() for i in range(N)])
    return RolloutBatch(obs, res.actions.reshape(-1, res.actions.shape[-1])[mask], u, logp, rewards, values,
                        next_values, dones, faults, terms, ep_ret, float(res.fault.any(axis=1).mean()),
                        gain_excess(res, cfg.gains, cfg.rates.control_dt))


def gain_excess(res: EpisodeResult, gains, control_dt: float) -> float:
    """Largest violation of the gain bounds or the per-tick slew limit over
    all logged control ticks (<= 0 when both hold)."""
    k0 = LOG_COLUMNS.index("kx_N_per_m")
    worst = -math.inf
    step = gains.slew_rate * control_dt
    for i in range(res.logs.shape[0]):
        k = res.logs[i, :res.k_index_end[i], k0:k0 + 6]
        if len(k) == 0:
            continue
        worst = max(worst, float(np.max(gains.k_min - k)), float(np.max(k - gains.k_max)))
        if len(k) > 1:
            worst = max(worst, float(np.max(np.abs(np.diff(k, axis=0)) - step * (1 + 1e-12))))
    return worst


def run_episodes_keyed(cfg, factory, seed, instance_epoch, n_instances, parallel, noise_epoch):
    """Like :func:`run_episodes` but with instance draws keyed by ``instance_epoch``."""
    factory.epoch = noise_epoch
    return run_episodes(cfg, factory, seed, instance_epoch, n_instances, parallel, noise_seed=seed,
                        record_policy_obs=True)
