"""Supervised distillation of a privileged teacher into the deployable student."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..policy import Normalizer, PolicyNet, infer_actions
from .ppo import Adam


@dataclass
class DistillConfig:
    epochs: int = 300
    minibatch: int = 256
    lr: float = 1e-3
    lr_final: float = 1e-4
    holdout: float = 0.2


@dataclass
class DistillStats:
    train_mse: float
    heldout_mse: float
    history: list


def distill_student(student: PolicyNet, obs, targets, cfg: DistillConfig = DistillConfig(), rng=None,
                    normalizer: Normalizer | None = None) -> DistillStats:
    """Fit ``student`` to teacher actions by minibatch gradient descent on the MSE.

    ``obs`` are raw student features; when a normalizer is given it is
    applied first. A random ``holdout`` fraction is kept out of training for
    the reported held-out error. The step size decays geometrically from
    ``lr`` to ``lr_final``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.asarray(obs, float)
    Y = np.asarray(targets, float)
    if normalizer is not None:
        X = normalizer(X)
    n = X.shape[0]
    perm = rng.permutation(n)
    n_hold = int(round(cfg.holdout * n)) if n > 1 else 0
    hold, train = perm[:n_hold], perm[n_hold:]
    opt = Adam(student.n_params, cfg.lr)
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.epochs - 1, 1))
    history = []
    mb = min(cfg.minibatch, len(train))
    for ep in range(cfg.epochs):
        order = train[rng.permutation(len(train))]
        for s in range(0, len(order), mb):
            idx = order[s:s + mb]
            pred = student.forward(X[idx])
            err = pred - Y[idx]
            g = student.backward(X[idx], 2.0 * err / err.size)
            student.params = opt.step(student.params, g)
        opt.lr *= decay
        history.append(mse(student, X[train], Y[train]))
    train_mse = mse(student, X[train], Y[train])
    held = mse(student, X[hold], Y[hold]) if n_hold else float("nan")
    return DistillStats(train_mse, held, history)


def mse(net: PolicyNet, X, Y) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean((infer_actions(net, X) - Y) ** 2))
