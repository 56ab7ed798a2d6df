"""Training pipelines and evaluation runs built from a :class:`RunConfig`."""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..learning.distill import DistillStats, distill_student
from ..learning.ppo import TrainLog, train_ppo
from ..learning.reward import RewardWeights, rebalance
from ..learning.rollout import (ConstantFactory, EnvConfig, EpisodeResult, PolicyFactory, TeacherFactory,
                                run_episodes)
from ..learning.teacher import TeacherSpec, teacher_actions
from ..policy import Normalizer, PolicyNet, ValueNet, policy_dims
from ..scenarios import TrajectorySpec
from .config import RunConfig
from .io import load_checkpoint
from .metrics import EpisodeLog, Metrics, compute_metrics, detachment_window, episode_columns, window_mask


@dataclass
class Trained:
    actor: PolicyNet
    critic: ValueNet | None
    normalizer: Normalizer | None
    weights: RewardWeights
    privileged: bool
    logs: list = field(default_factory=list)  # (stage name, TrainLog)
    distill: DistillStats | None = None

    def meta(self, role: str, rc: RunConfig, seed: int) -> dict:
        return {"role": role, "privileged": self.privileged, "reward_weights": self.weights.as_array().tolist(),
                "adapted_axes": list(rc["gains"]["adapted_axes"]), "seed": int(seed)}

    def factory(self, stochastic: bool = False) -> PolicyFactory:
        return PolicyFactory.from_net(self.actor, self.normalizer, self.privileged, stochastic)


def load_trained(path) -> Trained:
    actor, critic, norm, meta = load_checkpoint(path)
    w = meta.get("reward_weights")
    weights = RewardWeights.from_array(w) if w is not None else RewardWeights()
    return Trained(actor, critic, norm, weights, bool(meta.get("privileged", False)))


# -- reward calibration -----------------------------------------------------------


def baseline_rollout(rc: RunConfig, env: EnvConfig, seed: int, parallel: int = 0, n_instances: int = 4):
    return run_episodes(env, ConstantFactory(rc.baseline_action), seed, 0, n_instances, parallel)


def calibrate_reward(rc: RunConfig, env: EnvConfig, res: EpisodeResult) -> RewardWeights:
    """Weights rescaled once so every term has the same baseline mean magnitude."""
    if not rc["reward"].get("rebalance", True):
        return env.reward
    return rebalance(env.reward, res.reward_terms[res.active].mean(axis=0))


def _nets(rc: RunConfig, in_dim: int, rng):
    p = rc["policy"]
    m = len(rc["gains"]["adapted_axes"])
    actor = PolicyNet(policy_dims(in_dim, m, p["hidden"]), p["leaky_slope"], rng=rng, log_std_init=p["log_std_init"])
    critic = ValueNet(policy_dims(in_dim, 1, p["hidden"]), p["leaky_slope"], rng=rng)
    return actor, critic


def _frozen_normalizer(X) -> Normalizer:
    norm = Normalizer(X.shape[1])
    norm.update(X)
    norm.frozen = True
    return norm


# -- training ----------------------------------------------------------------------


def train_teacher(rc: RunConfig, seed: int, parallel: int = 0, epochs: int | None = None, on_epoch=None) -> Trained:
    """PPO on privileged observations over the training scenario."""
    L = rc["learning"]
    env = rc.env()
    base = baseline_rollout(rc, env, seed, parallel)
    env.reward = calibrate_reward(rc, env, base)
    norm = _frozen_normalizer(base.obs_priv[base.active])
    actor, critic = _nets(rc, norm.dim, np.random.default_rng([seed, 3]))
    log = train_ppo(env, actor, critic, norm, rc.ppo(), int(L["n_instances"]),
                    int(L["teacher_epochs"] if epochs is None else epochs), seed, privileged=True,
                    parallel=parallel, fixed_instances=bool(L["fixed_instances"]), patience=int(L["patience"]),
                    on_epoch=on_epoch)
    return Trained(actor, critic, norm, env.reward, True, [(rc["scenario"]["preset"], log)])


def teacher_spec_from(rc: RunConfig, teacher: Trained | None = None) -> TeacherSpec:
    spec = rc.teacher()
    if teacher is None:
        return spec
    return TeacherSpec(kind="learned", mu_lo=spec.mu_lo, mu_hi=spec.mu_hi, axis_roles=spec.axis_roles,
                       net=teacher.actor, normalizer=teacher.normalizer)


def teacher_dataset(rc: RunConfig, spec: TeacherSpec, seed: int, parallel: int = 0):
    """(student features, teacher actions) from rollouts driven by the teacher."""
    L = rc["learning"]
    env = rc.env()
    Z, A = [], []
    for r in range(int(L["distill_rollouts"])):
        res = run_episodes(env, TeacherFactory(spec), seed, r, int(L["n_instances"]), parallel)
        m = res.active
        Z.append(res.obs_student[m])
        A.append(teacher_actions(res.obs_priv[m], spec))
    return np.concatenate(Z), np.concatenate(A)


def distill(rc: RunConfig, seed: int, teacher: Trained | None = None, parallel: int = 0) -> Trained:
    """Student on deployable features, fit to the handcrafted (or given learned) teacher."""
    spec = teacher_spec_from(rc, teacher)
    Z, A = teacher_dataset(rc, spec, seed, parallel)
    norm = _frozen_normalizer(Z)
    actor, _ = _nets(rc, Z.shape[1], np.random.default_rng([seed, 5]))
    stats = distill_student(actor, Z, A, rc.distill(), np.random.default_rng([seed, 6]), norm)
    if teacher is not None:
        weights = teacher.weights
    else:
        env = rc.env()
        weights = calibrate_reward(rc, env, baseline_rollout(rc, env, seed, parallel))
    return Trained(actor, None, norm, weights, False, distill=stats)


def curriculum(rc: RunConfig) -> list:
    L = rc["learning"]
    stages = L.get("curriculum") or [{"preset": rc["scenario"]["preset"], "epochs": L["finetune_epochs"]}]
    return [(str(s["preset"]), int(s["epochs"])) for s in stages]


def finetune(rc: RunConfig, student: Trained, seed: int, parallel: int = 0, stages=None, on_epoch=None) -> Trained:
    """PPO refinement of a distilled student through the curriculum stages."""
    L = rc["learning"]
    actor = copy.deepcopy(student.actor)
    if L.get("finetune_log_std") is not None:
        actor.params[actor.n_net:] = float(L["finetune_log_std"])
    _, critic = _nets(rc, actor.in_dim, np.random.default_rng([seed, 4]))
    logs = []
    start = 0
    for k, (name, n_epochs) in enumerate(stages or curriculum(rc)):
        env = rc.env(rc.scenario(name))
        env.reward = student.weights
        log = train_ppo(env, actor, critic, student.normalizer, rc.ppo(finetune=True), int(L["n_instances"]),
                        n_epochs, seed,
                        privileged=False, parallel=parallel, start_epoch=start,
                        fixed_instances=bool(L["fixed_instances"]), patience=int(L["patience"]),
                        on_epoch=on_epoch, critic_warmup=int(L["critic_warmup"]) if k == 0 else 0)
        logs.append((name, log))
        start += n_epochs
    return Trained(actor, critic, student.normalizer, student.weights, False, logs)


# -- evaluation ------------------------------------------------------------------------


def controller_factory(rc: RunConfig, kind: str, checkpoint=None, action=None):
    if kind == "baseline":
        return ConstantFactory(rc.baseline_action)
    if kind == "constant":
        return ConstantFactory(np.asarray(action, float))
    if kind == "teacher":
        return TeacherFactory(rc.teacher())
    if kind == "policy":
        if checkpoint is None:
            raise ValueError("the policy controller needs a checkpoint")
        trained = checkpoint if isinstance(checkpoint, Trained) else load_trained(checkpoint)
        return trained.factory()
    raise ValueError(f"unknown controller kind {kind!r}")


def episode_logs(res: EpisodeResult, env: EnvConfig) -> list:
    cols = episode_columns(env.gains.adapted_axes)
    n_app = res.approach_ticks * env.rates.policy_decimation
    out = []
    for i in range(res.n_instances):
        n = int(res.k_index_end[i])
        phase = (np.arange(n) >= n_app).astype(float)[:, None]
        data = np.hstack([phase, res.logs[i, :n], res.control_actions[i, :n], res.control_rewards[i, :n]])
        out.append(EpisodeLog(cols, data, int(res.fault_code[i])))
    return out


def run_episode(rc: RunConfig, factory, seed: int, scenario=None, evaluation: bool = True,
                n_instances: int | None = None, parallel: int = 0) -> list:
    """Closed-loop runs of one controller; one :class:`EpisodeLog` per instance."""
    env = rc.env(scenario, evaluation)
    n = int(rc["eval"]["n_instances"] if n_instances is None else n_instances)
    res = run_episodes(env, factory, seed, 0, n, parallel)
    return episode_logs(res, env)


def eval_windows(rc: RunConfig, scenario) -> dict:
    """Named metric windows for a scenario: the whole slide plus configured ones."""
    E = rc["eval"]
    wins = {"slide": None}
    if E.get("tilt_window"):
        wins["window"] = dict(E["tilt_window"])
    if scenario.kind == "step" and scenario.step_height > 0:
        wins["detachment"] = ("detachment", float(scenario.step_s), float(E["detach_window_s"]))
    return wins


def window_metrics(log: EpisodeLog, win) -> Metrics:
    """Metrics over a named window; NaN entries when the run never reaches it."""
    if isinstance(win, tuple) and win and win[0] == "detachment":
        win = detachment_window(log, win[1], win[2])
    if win is not None and not window_mask(log, win).any():
        nan = float("nan")
        return Metrics(nan, nan, nan, nan, nan, log.fault_code != 0)
    return compute_metrics(log, win)


def _map(fn, jobs, parallel):
    if parallel and parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _sweep_job(args):
    rc, factory, seed, scenario, repeats = args
    logs = run_episode(rc, factory, seed, scenario, True, repeats)
    return Metrics.mean(compute_metrics(lg) for lg in logs), [lg.fault_code for lg in logs]


SWEEP_COLUMNS = ["label", "trajectory", "a_trans", "a_ang", *Metrics.FIELDS, "n_faults"]


def gain_sweep(rc: RunConfig, seed: int, policy=None, levels=None, repeats=None, offsets=None,
               parallel: int = 0) -> list:
    """Constant-gain grid (translational x angular) plus an optional policy row
    per trajectory; each entry averages ``repeats`` runs.

    Returns rows matching :data:`SWEEP_COLUMNS`.
    """
    E = rc["eval"]
    levels = list(E["sweep_levels"] if levels is None else levels)
    repeats = int(E["repeats"] if repeats is None else repeats)
    offsets = list(E["lateral_offsets"] if offsets is None else offsets)
    base = rc.scenario(evaluation=True)
    jobs, keys = [], []
    for j, off in enumerate(offsets):
        sc = copy.deepcopy(base)
        sc.trajectory = TrajectorySpec(**{**base.trajectory.__dict__, "lateral": float(off)})
        for at in levels:
            for aa in levels:
                jobs.append((rc, ConstantFactory(np.array([at, aa])), seed, sc, repeats))
                keys.append((f"k_{at:g}_{aa:g}", j, at, aa))
        if policy is not None:
            jobs.append((rc, policy, seed, sc, repeats))
            keys.append(("policy", j, float("nan"), float("nan")))
    results = _map(_sweep_job, jobs, parallel)
    rows = []
    for (label, j, at, aa), (m, codes) in zip(keys, results):
        rows.append([label, j, at, aa, *m.as_row(), int(sum(c != 0 for c in codes))])
    return rows
