"""Proximal policy optimization with hand-written gradients.

The actor is Gaussian in logit space (the sigmoid squash is applied outside
the density), so the probability ratio only involves the Gaussian part.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..policy import LOGIT_LIMIT, Normalizer, PolicyNet, ValueNet
from .reward import TERMS
from .rollout import EnvConfig, RolloutBatch, TrainingError, collect_rollouts, gaussian_log_prob


class DivergenceError(TrainingError):
    pass


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 1024
    lr: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 0.5


class Adam:
    def __init__(self, n: int, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1 ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mh / (np.sqrt(vh) + self.eps)


def gae_advantages(rewards, values, next_values, dones, gamma: float, lam: float, terminals=None,
                   normalize: bool = True):
    """Generalized advantage estimates over flattened episodes.

    ``dones`` marks the last transition of each episode; ``terminals`` the
    subset where the episode really ended (no bootstrap). Time-limit ends
    bootstrap from ``next_values``. Returns (advantages, returns), where the
    returns use the unnormalized advantages.
    """
    r = np.asarray(rewards, float)
    v = np.asarray(values, float)
    nv = np.asarray(next_values, float)
    d = np.asarray(dones, bool)
    term = d.copy() if terminals is None else np.asarray(terminals, bool)
    adv = np.zeros_like(r)
    last = 0.0
    for t in range(len(r) - 1, -1, -1):
        if d[t]:
            last = 0.0
        boot = 0.0 if term[t] else nv[t]
        delta = r[t] + gamma * boot - v[t]
        last = delta + gamma * lam * last
        adv[t] = last
    returns = adv + v
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def surrogate(actor: PolicyNet, obs, u, logp_old, adv, clip_eps: float, entropy_coef: float = 0.0,
              params=None):
    """Clipped surrogate (to maximize) and the gradient of its negation.

    Returns (surrogate mean, ratios, loss gradient, stats).
    """
    p = actor.params if params is None else params
    n_net = actor.n_net
    raw, _ = actor.pre_head(obs, p)
    # rollouts sample around the clipped mean; no gradient flows where it clips
    mean = np.clip(raw, -LOGIT_LIMIT, LOGIT_LIMIT)
    inside = np.abs(raw) < LOGIT_LIMIT
    log_std = p[n_net:]
    logp = gaussian_log_prob(u, mean, log_std)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    s1 = ratio * adv
    s2 = clipped * adv
    surr = np.minimum(s1, s2)
    n = len(adv)
    # gradient flows through the unclipped branch only where it is the minimum
    use = s1 <= s2
    dl_dlogp = np.where(use, -ratio * adv, 0.0) / n
    var = np.exp(2.0 * log_std)
    diff = u - mean
    g_mean = np.where(inside, dl_dlogp[:, None] * diff / var, 0.0)
    g_logstd = np.sum(dl_dlogp[:, None] * (diff * diff / var - 1.0), axis=0)
    g_logstd -= entropy_coef * np.ones_like(log_std)
    grad = actor.backward(obs, g_mean, p, wrt="pre_head", upstream_log_std=g_logstd)
    entropy = float(np.sum(log_std + 0.5 * math.log(2.0 * math.pi * math.e)))
    stats = {
        "approx_kl": float(np.mean(logp_old - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "entropy": entropy,
    }
    return float(surr.mean()), ratio, grad, stats


def value_loss(critic: ValueNet, obs, returns, params=None):
    v = critic.value(obs, params)
    err = v - returns
    grad = critic.backward(obs, (err / len(returns))[:, None], params)
    return float(0.5 * np.mean(err * err)), grad


def _clip_norm(g, max_norm):
    n = float(np.linalg.norm(g))
    if max_norm and n > max_norm:
        g = g * (max_norm / n)
    return g


@dataclass
class PPOState:
    actor_opt: Adam
    critic_opt: Adam

    @classmethod
    def create(cls, actor: PolicyNet, critic: ValueNet, lr: float) -> "PPOState":
        return cls(Adam(actor.n_params, lr), Adam(critic.n_params, lr))


def ppo_update(actor: PolicyNet, critic: ValueNet, batch: RolloutBatch, cfg: PPOConfig, state: PPOState, rng,
               advantages=None, returns=None, update_actor: bool = True) -> dict:
    """Several epochs of minibatch steps on one batch; parameters change in place.

    With ``update_actor`` False only the critic moves (value warm-up).
    """
    if advantages is None:
        advantages, returns = gae_advantages(batch.rewards, batch.values, batch.next_values, batch.dones,
                                             cfg.gamma, cfg.lam, terminals=batch.faults)
    n = len(batch)
    mb = min(cfg.minibatch, n)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "approx_kl": 0.0, "clip_frac": 0.0, "entropy": 0.0}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            if len(idx) < 2:
                continue
            surr, _, g_actor, st = surrogate(actor, batch.obs[idx], batch.logits[idx], batch.log_probs[idx],
                                             advantages[idx], cfg.clip_eps, cfg.entropy_coef)
            vl, g_critic = value_loss(critic, batch.obs[idx], returns[idx])
            g_critic = g_critic * cfg.value_coef
            if not (math.isfinite(surr) and math.isfinite(vl) and np.all(np.isfinite(g_actor))
                    and np.all(np.isfinite(g_critic))):
                raise DivergenceError("non-finite PPO loss")
            if update_actor:
                actor.params = state.actor_opt.step(actor.params, _clip_norm(g_actor, cfg.max_grad_norm))
            critic.params = state.critic_opt.step(critic.params, _clip_norm(g_critic, cfg.max_grad_norm))
            stats["policy_loss"] += -surr
            stats["value_loss"] += vl
            for k in ("approx_kl", "clip_frac", "entropy"):
                stats[k] += st[k]
            count += 1
    return {k: v / max(count, 1) for k, v in stats.items()}


# -- training loop ---------------------------------------------------------------


EPOCH_COLUMNS = ["epoch", "mean_return", *[f"mean_{t}" for t in TERMS], "approx_kl", "clip_frac",
                 "fault_rate", "policy_loss", "value_loss", "entropy", "gain_excess"]


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, row: dict):
        self.rows.append([row[c] for c in EPOCH_COLUMNS])

    @property
    def returns(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def train_ppo(cfg: EnvConfig, actor: PolicyNet, critic: ValueNet, normalizer: Normalizer | None,
              ppo: PPOConfig, n_instances: int, epochs: int, seed: int, privileged: bool = False,
              parallel: int = 0, start_epoch: int = 0, fixed_instances: bool = False, patience: int = 0,
              on_epoch=None, critic_warmup: int = 0) -> TrainLog:
    """Alternate rollout collection and PPO updates.

    With ``fixed_instances`` every epoch reuses the same perturbed worlds
    (common random numbers), so return changes reflect the policy rather than
    the draw. ``patience`` > 0 stops once the best return is that many epochs
    old. A non-finite update restores the last good parameters and stops.
    The first ``critic_warmup`` epochs fit only the critic.
    """
    state = PPOState.create(actor, critic, ppo.lr)
    rng = np.random.default_rng([seed, 99])
    log = TrainLog()
    best, best_epoch = -math.inf, start_epoch
    for e in range(start_epoch, start_epoch + epochs):
        batch = collect_rollouts(cfg, actor, critic, normalizer, n_instances, seed, e, privileged, parallel,
                                 instance_epoch=0 if fixed_instances else e)
        good = (actor.params.copy(), critic.params.copy())
        try:
            st = ppo_update(actor, critic, batch, ppo, state, rng,
                            update_actor=e - start_epoch >= critic_warmup)
        except DivergenceError:
            actor.params, critic.params = good
            break
        mean_ret = float(batch.episode_returns.mean())
        row = {"epoch": e, "mean_return": mean_ret, "fault_rate": batch.fault_rate,
               "gain_excess": batch.gain_excess, **st}
        tm = batch.terms.mean(axis=0)
        for i, t in enumerate(TERMS):
            row[f"mean_{t}"] = float(tm[i])
        log.add(row)
        if on_epoch is not None:
            on_epoch(e, row, actor, critic)
        if mean_ret > best:
            best, best_epoch = mean_ret, e
        elif patience and e - best_epoch >= patience:
            break
    return log


# -- bandit toy ---------------------------------------------------------------------


def train_bandit(target: float = 0.8, epochs: int = 200, batch: int = 256, seed: int = 0,
                 cfg: PPOConfig | None = None, hidden=(16,)) -> np.ndarray:
    """One-step problem with reward -(a - target)^2; returns the mean action per epoch."""
    cfg = cfg or PPOConfig(lr=3e-3, minibatch=64, entropy_coef=0.0)
    rng = np.random.default_rng(seed)
    actor = PolicyNet([1, *hidden, 1], rng=rng)
    critic = ValueNet([1, *hidden, 1], rng=rng)
    state = PPOState.create(actor, critic, cfg.lr)
    obs = np.ones((batch, 1))
    history = []
    for _ in range(epochs):
        mean = actor.logits(obs)
        u = mean + np.exp(actor.log_std) * rng.standard_normal((batch, 1))
        a = 0.5 * (1.0 + np.tanh(0.5 * u[:, 0]))
        rewards = -(a - target) ** 2
        values = critic.value(obs)
        rb = RolloutBatch(obs, a[:, None], u, gaussian_log_prob(u, mean, actor.log_std), rewards, values,
                          np.zeros(batch), np.ones(batch, bool), np.ones(batch, bool),
                          np.zeros((batch, len(TERMS))), rewards, 0.0)
        ppo_update(actor, critic, rb, cfg, state, rng)
        history.append(float(actor.forward(obs[:1])[0, 0]))
    return np.array(history)


def clone(net):
    return copy.deepcopy(net)
