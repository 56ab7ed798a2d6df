"""Gain-adaptation network: features, a small MLP and its exact gradients.

Parameters live in one flat float64 vector so optimizers, checkpoints and the
numba inference path all share a single layout: for each layer the weight
matrix (out x in, row-major) followed by its bias; the stochastic actor
appends ``log_std``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .control import ContractViolation, LowPass, lowpass_step
from .dynamics import Frame, RobotState, Wrench

LOGIT_LIMIT = 30.0  # keeps sigmoid(.) strictly inside (0, 1) in float64


class MLP:
    """Fully connected net, leaky-ReLU hidden layers, identity or sigmoid head."""

    def __init__(self, dims, leaky_slope=0.01, head="linear", params=None, rng=None):
        self.dims = [int(d) for d in dims]
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError("dims must list at least input and output sizes")
        if head not in ("linear", "sigmoid"):
            raise ValueError("head must be 'linear' or 'sigmoid'")
        self.leaky_slope = float(leaky_slope)
        self.head = head
        self.slices = []
        off = 0
        for a, b in zip(self.dims[:-1], self.dims[1:]):
            self.slices.append((off, off + a * b, off + a * b + b))
            off += (a + 1) * b
        self.n_net = off
        if params is None:
            params = self.init_params(rng if rng is not None else np.random.default_rng(0))
        self.params = np.asarray(params, float).copy()
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return self.n_net

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def init_params(self, rng) -> np.ndarray:
        p = np.zeros(self.n_net)
        for (a, b), (w0, w1, _) in zip(zip(self.dims[:-1], self.dims[1:]), self.slices):
            lim = 1.0 / math.sqrt(a)
            p[w0:w1] = rng.uniform(-lim, lim, size=a * b)
        return p

    def layers(self, params=None):
        params = self.params if params is None else params
        out = []
        for (a, b), (w0, w1, b1) in zip(zip(self.dims[:-1], self.dims[1:]), self.slices):
            out.append((params[w0:w1].reshape(b, a), params[w1:b1]))
        return out

    def _check(self, z):
        z = np.asarray(z, float)
        single = z.ndim == 1
        z2 = z.reshape(1, -1) if single else z
        if z2.ndim != 2 or z2.shape[1] != self.in_dim:
            raise ContractViolation(f"input dimension {z.shape[-1] if z.ndim else 0} != {self.in_dim}")
        return z2, single

    def pre_head(self, z, params=None):
        """Last-layer pre-activation and the cache needed by :meth:`backward`."""
        x, single = self._check(z)
        cache = [x]
        h = x
        layers = self.layers(params)
        for i, (W, b) in enumerate(layers):
            a = h @ W.T + b
            if i < len(layers) - 1:
                cache.append(a)
                h = np.where(a > 0, a, self.leaky_slope * a)
                cache.append(h)
            else:
                h = a
        return h, (cache, single)

    def forward(self, z, params=None):
        y, (_, single) = self.pre_head(z, params)
        if self.head == "sigmoid":
            y = _sigmoid(np.clip(y, -LOGIT_LIMIT, LOGIT_LIMIT))
        return y[0] if single else y

    def backward(self, z, upstream, params=None, wrt="output") -> np.ndarray:
        """Gradient of ``sum(upstream * y)`` w.r.t. the flat parameters.

        ``wrt='output'`` differentiates the head output, ``wrt='pre_head'`` the
        last pre-activation (logits). Batch rows are summed.
        """
        params = self.params if params is None else params
        y, (cache, single) = self.pre_head(z, params)
        g = np.asarray(upstream, float).reshape(y.shape)
        if wrt == "output" and self.head == "sigmoid":
            yc = np.clip(y, -LOGIT_LIMIT, LOGIT_LIMIT)
            s = _sigmoid(yc)
            g = g * s * (1.0 - s) * (np.abs(y) <= LOGIT_LIMIT)
        grad = np.zeros(self.n_net)
        layers = self.layers(params)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            w0, w1, b1 = self.slices[i]
            h_in = cache[2 * i] if i > 0 else cache[0]
            grad[w0:w1] = (g.T @ h_in).reshape(-1)
            grad[w1:b1] = g.sum(axis=0)
            if i > 0:
                a = cache[2 * i - 1]
                g = (g @ W) * np.where(a > 0, 1.0, self.leaky_slope)
        return grad


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class PolicyNet(MLP):
    """Sigmoid-headed actor with a trainable per-output ``log_std`` in logit space."""

    def __init__(self, dims, leaky_slope=0.01, params=None, rng=None, log_std_init=math.log(0.2)):
        self.log_std_init = float(log_std_init)
        super().__init__(dims, leaky_slope, "sigmoid", params, rng)

    @property
    def n_params(self) -> int:
        return self.n_net + self.out_dim

    def init_params(self, rng) -> np.ndarray:
        return np.concatenate([super().init_params(rng), np.full(self.out_dim, self.log_std_init)])

    @property
    def log_std(self) -> np.ndarray:
        return self.params[self.n_net:]

    def logits(self, z, params=None):
        y, (_, single) = self.pre_head(z, params)
        y = np.clip(y, -LOGIT_LIMIT, LOGIT_LIMIT)
        return y[0] if single else y

    def backward(self, z, upstream, params=None, wrt="output", upstream_log_std=None) -> np.ndarray:
        p = self.params if params is None else params
        g = np.zeros(self.n_params)
        g[:self.n_net] = super().backward(z, upstream, p[:self.n_net], wrt)
        if upstream_log_std is not None:
            g[self.n_net:] = upstream_log_std
        return g

    def pre_head(self, z, params=None):
        p = self.params if params is None else params
        return super().pre_head(z, p[:self.n_net])

    def layers(self, params=None):
        p = self.params if params is None else params
        return super().layers(p[:self.n_net])


class ValueNet(MLP):
    def __init__(self, dims, leaky_slope=0.01, params=None, rng=None):
        if int(dims[-1]) != 1:
            raise ValueError("value net must have a scalar output")
        super().__init__(dims, leaky_slope, "linear", params, rng)

    def value(self, z, params=None):
        y = self.forward(z, params)
        return y[..., 0]


def policy_dims(in_dim: int, out_dim: int, hidden=(32, 32, 32)) -> list:
    return [int(in_dim), *[int(h) for h in hidden], int(out_dim)]


@dataclass
class Normalizer:
    """Running mean/variance standardization, frozen once data collection ends."""

    dim: int
    count: float = 0.0
    mean: np.ndarray = None
    m2: np.ndarray = None
    frozen: bool = False
    eps: float = 1e-6
    clip: float = 10.0

    def __post_init__(self):
        self.mean = np.zeros(self.dim) if self.mean is None else np.asarray(self.mean, float).copy()
        self.m2 = np.zeros(self.dim) if self.m2 is None else np.asarray(self.m2, float).copy()

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(self.m2 / self.count) + self.eps

    def update(self, x):
        if self.frozen:
            return
        x = np.atleast_2d(np.asarray(x, float))
        n = x.shape[0]
        if n == 0:
            return
        bm = x.mean(axis=0)
        bm2 = ((x - bm) ** 2).sum(axis=0)
        tot = self.count + n
        delta = bm - self.mean
        self.mean = self.mean + delta * n / tot
        self.m2 = self.m2 + bm2 + delta ** 2 * self.count * n / tot
        self.count = tot

    def __call__(self, x):
        return np.clip((np.asarray(x, float) - self.mean) / self.std, -self.clip, self.clip)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist(),
                "frozen": self.frozen, "eps": self.eps, "clip": self.clip}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(int(d["dim"]), float(d["count"]), np.array(d["mean"], float), np.array(d["m2"], float),
                   bool(d["frozen"]), float(d["eps"]), float(d["clip"]))


def action_output_dim(adapted_axes=(0, 4)) -> int:
    """Number of gain axes driven by the policy; the rest stay constant."""
    axes = tuple(int(a) for a in adapted_axes)
    if len(set(axes)) != len(axes) or any(a < 0 or a > 5 for a in axes):
        raise ValueError("adapted axes must be distinct indices in 0..5")
    return len(axes)


# -- features ----------------------------------------------------------------


@dataclass
class FeatureFilterSet:
    pitch_rate: LowPass
    friction: LowPass
    normal: LowPass

    @classmethod
    def from_cutoffs(cls, dt: float, pitch_rate_hz=10.0, force_hz=20.0) -> "FeatureFilterSet":
        return cls(LowPass.from_cutoff(pitch_rate_hz, dt), LowPass.from_cutoff(force_hz, dt),
                   LowPass.from_cutoff(force_hz, dt))


def build_features(state: RobotState, errors, wrench_meas: Wrench, filters: FeatureFilterSet,
                   traj_frame) -> np.ndarray:
    """Assemble z = [pitch rate, pitch error, normal position error, sliding speed, friction, normal force].

    ``errors`` is the (e_s, e_v) pair of the measured state; ``traj_frame`` is
    the nominal plane. The wrench is rotated into the world with the measured
    attitude and split along the plane normal and tangent.
    """
    e_s = np.asarray(errors[0], float)
    n = np.asarray(traj_frame.normal, float)
    t = np.asarray(traj_frame.tangent, float)
    f_world = wrench_meas.to_frame(Frame.WORLD, state.orientation).force
    pitch_rate = lowpass_step(filters.pitch_rate, [state.ang_vel[1]])[0]
    friction = lowpass_step(filters.friction, [-(f_world @ t)])[0]
    normal = lowpass_step(filters.normal, [f_world @ n])[0]
    return np.array([pitch_rate, e_s[4], e_s[:3] @ n, state.lin_vel @ t, friction, normal])


# -- numba inference -----------------------------------------------------------


@njit(cache=True)
def forward_rows(params, dims, slope, sigmoid_head, X, out):
    """Row-by-row forward pass; results never depend on the batch size."""
    nl = dims.shape[0] - 1
    wmax = 0
    for i in range(dims.shape[0]):
        wmax = max(wmax, dims[i])
    h = np.empty(wmax)
    h2 = np.empty(wmax)
    for r in range(X.shape[0]):
        for j in range(dims[0]):
            h[j] = X[r, j]
        off = 0
        for layer in range(nl):
            a, b = dims[layer], dims[layer + 1]
            boff = off + a * b
            for o in range(b):
                acc = params[boff + o]
                row = off + o * a
                for k in range(a):
                    acc += params[row + k] * h[k]
                if layer < nl - 1:
                    h2[o] = acc if acc > 0.0 else slope * acc
                else:
                    h2[o] = acc
            off = boff + b
            for o in range(b):
                h[o] = h2[o]
        for o in range(dims[nl]):
            y = h[o]
            if sigmoid_head:
                y = min(max(y, -LOGIT_LIMIT), LOGIT_LIMIT)
            out[r, o] = y


@njit(cache=True)
def sigmoid_rows(U, out):
    for r in range(U.shape[0]):
        for o in range(U.shape[1]):
            u = min(max(U[r, o], -LOGIT_LIMIT), LOGIT_LIMIT)
            out[r, o] = 0.5 * (1.0 + math.tanh(0.5 * u))


def infer_logits(net: MLP, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, float)))
    if X.shape[1] != net.in_dim:
        raise ContractViolation(f"input dimension {X.shape[1]} != {net.in_dim}")
    out = np.empty((X.shape[0], net.out_dim))
    forward_rows(np.ascontiguousarray(net.params[:net.n_net]), np.asarray(net.dims, np.int64),
                 net.leaky_slope, net.head == "sigmoid", X, out)
    return out


def infer_actions(net: PolicyNet, X) -> np.ndarray:
    U = infer_logits(net, X)
    out = np.empty_like(U)
    sigmoid_rows(U, out)
    return out
