"""Run configuration: a YAML tree with preset inheritance.

A config file may name a built-in preset (``flat6``, ``step1cm``, ``step2cm``,
``rock``) or another file under ``inherit``; its own keys are merged on top,
recursively for nested mappings.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..dynamics import BodyParams
from ..learning.distill import DistillConfig
from ..learning.ppo import PPOConfig
from ..learning.reward import RewardWeights
from ..learning.rollout import EnvConfig, PerturbRanges
from ..learning.teacher import TeacherSpec
from ..scenarios import ScenarioSpec, TrajectorySpec, preset as scenario_preset
from ..sensing import SensorModel
from ..sim import FeatureFilters, GainBounds, SimRates
from ..terrain import ContactParams


class ConfigError(ValueError):
    pass


BASE = {
    "seed": 0,
    "out": "runs",
    "scenario": {"preset": "flat6", "eval_preset": "flat6_eval", "overrides": {}, "trajectory": {}},
    "rates": {"physics_dt": 0.0025, "control_decimation": 4, "policy_decimation": 5},
    "body": {"mass": 4.5, "inertia": [0.15, 0.15, 0.18], "r_com": [0.0, 0.0, 0.0], "r_end": [0.5, 0.0, 0.0],
             "gravity": 9.81},
    "actuator": {"force_margin": 20.0, "torque_limit": 5.0, "delay_steps": 8},
    "contact": {"k_n": 5000.0, "c_n": 50.0, "v_reg": 0.01},
    "gains": {
        "k_min": [20.0, 20.0, 20.0, 2.0, 2.0, 2.0],
        "k_max": [200.0, 200.0, 200.0, 20.0, 20.0, 20.0],
        "zeta": 0.7,
        "slew_time": 0.5,
        "adapted_axes": [0, 4],
        "fixed_action": 0.5,
        "approach_action": [0.5, 0.5],
        "baseline_action": [0.8, 0.8],
        "output_cutoff_hz": 2.0,
        "pitch_rate_cutoff_hz": 10.0,
        "force_cutoff_hz": 20.0,
    },
    "policy": {"hidden": [32, 32, 32], "leaky_slope": 0.01, "log_std_init": math.log(0.2)},
    "teacher": {"kind": "handcrafted", "mu_lo": 0.05, "mu_hi": 0.62, "angular_range": [0.1, 0.9],
                "translational_range": [0.1, 0.9], "step_threshold": 0.008, "compliant_blend": 0.8},
    "sensor": {"wrench_noise_std": 0.0, "wrench_bias_walk_std": 0.0, "estimate_noise_std": 0.0,
               "enable_wrench_noise": False, "enable_state_noise": False},
    "perturb": {"mass": 0.1, "inertia": 0.1, "r_end": 0.1, "k_n": 0.1, "delay": 0.1},
    "reward": {"l_eR": 10.0, "l_p": 10.0, "l_d": 100.0, "l_omega": 0.1, "l_a": 1.0, "rebalance": True},
    "learning": {
        "n_instances": 16,
        "fault_penalty": 10.0,
        "max_tilt_deg": 60.0,
        "arena_depth": 1.0,
        "teacher_epochs": 300,
        "distill_rollouts": 4,
        "finetune_epochs": 100,
        "fixed_instances": True,
        "patience": 300,
        "critic_warmup": 10,
        "finetune_log_std": math.log(0.6),
        "finetune_ppo": {"lr": 1e-3, "entropy_coef": 1e-3},
        "curriculum": [],
        "ppo": {"gamma": 0.99, "lam": 0.95, "clip_eps": 0.2, "epochs": 4, "minibatch": 1024, "lr": 3e-4,
                "entropy_coef": 0.0, "value_coef": 0.5, "max_grad_norm": 0.5},
        "distill": {"epochs": 300, "minibatch": 256, "lr": 1e-3, "lr_final": 1e-4, "holdout": 0.2},
    },
    "eval": {"n_instances": 1, "perturb": False, "tilt_window": {"s_m": [1.2, 2.2]}, "detach_window_s": 2.0,
             "sweep_levels": [0.1, 0.5, 0.9], "repeats": 3, "lateral_offsets": [0.0, 0.3]},
}

PRESETS = {
    "flat6": {},
    "step1cm": {"scenario": {"preset": "step1cm", "eval_preset": "step1cm_eval"}, "eval": {"tilt_window": None}},
    "step2cm": {"scenario": {"preset": "step2cm", "eval_preset": "step2cm_eval"}, "eval": {"tilt_window": None},
                "learning": {"curriculum": [{"preset": "step1cm", "epochs": 400}, {"preset": "step2cm", "epochs": 400}]}},
    "rock": {"scenario": {"preset": "rock", "eval_preset": "rock_eval"}, "eval": {"tilt_window": None},
             "teacher": {"mu_lo": 0.3, "mu_hi": 0.7, "translational_range": [0.1, 0.3], "angular_range": [0.5, 0.9]},
             "learning": {"fault_penalty": 100.0}},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(tree: dict, base_dir: Path | None = None, _seen=()) -> dict:
    """Expand ``inherit`` chains (preset names or relative file paths)."""
    parent = tree.get("inherit")
    body = {k: v for k, v in tree.items() if k != "inherit"}
    if parent is None:
        return deep_merge(BASE, body)
    if parent in _seen:
        raise ConfigError(f"inheritance cycle through {parent!r}")
    if parent in PRESETS:
        return deep_merge(deep_merge(BASE, PRESETS[parent]), body)
    path = Path(parent) if base_dir is None else (base_dir / parent)
    if not path.exists():
        raise ConfigError(f"unknown preset or config file {parent!r}")
    return deep_merge(resolve(load_yaml(path), path.parent, (*_seen, parent)), body)


def load_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


@dataclass
class RunConfig:
    tree: dict

    @classmethod
    def load(cls, path=None, preset: str | None = None, overrides: dict | None = None) -> "RunConfig":
        tree = {}
        base_dir = None
        if path is not None:
            tree = load_yaml(path)
            base_dir = Path(path).parent
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
            if "inherit" not in tree:
                tree["inherit"] = preset
        cfg = cls(deep_merge(resolve(tree, base_dir), overrides or {}))
        cfg.validate()
        return cfg

    @classmethod
    def default(cls, preset: str = "flat6", **overrides) -> "RunConfig":
        return cls.load(preset=preset, overrides=overrides)

    def __getitem__(self, key):
        return self.tree[key]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=True)

    # -- validation ----------------------------------------------------------

    def validate(self):
        r = self.tree["rates"]
        for k in ("control_decimation", "policy_decimation"):
            if int(r[k]) != r[k] or r[k] < 1:
                raise ConfigError(f"rates.{k} must be a positive integer")
        if not r["physics_dt"] > 0:
            raise ConfigError("rates.physics_dt must be positive")
        for key in ("preset", "eval_preset"):
            try:
                scenario_preset(self.tree["scenario"][key])
            except KeyError as exc:
                raise ConfigError(str(exc)) from exc
        for stage in self.tree["learning"]["curriculum"]:
            scenario_preset(stage["preset"])
        g = self.tree["gains"]
        axes = g["adapted_axes"]
        for key in ("approach_action", "baseline_action"):
            if len(g[key]) != len(axes):
                raise ConfigError(f"gains.{key} needs {len(axes)} entries (one per adapted axis)")

    # -- builders --------------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def rates(self) -> SimRates:
        r = self.tree["rates"]
        return SimRates(float(r["physics_dt"]), int(r["control_decimation"]), int(r["policy_decimation"]))

    def body(self) -> BodyParams:
        b = self.tree["body"]
        inertia = np.asarray(b["inertia"], float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        return BodyParams(b["mass"], inertia, b["r_com"], b["r_end"], b["gravity"])

    def gains(self) -> GainBounds:
        g = self.tree["gains"]
        k_min = np.asarray(g["k_min"], float)
        k_max = np.asarray(g["k_max"], float)
        slew = (k_max - k_min) / float(g["slew_time"])
        return GainBounds(k_min, k_max, float(g["zeta"]), slew, tuple(g["adapted_axes"]), g["fixed_action"])

    def scenario(self, name: str | None = None, evaluation: bool = False) -> ScenarioSpec:
        s = self.tree["scenario"]
        name = name or (s["eval_preset"] if evaluation else s["preset"])
        spec = scenario_preset(name)
        for k, v in (s.get("overrides") or {}).items():
            setattr(spec, k, tuple(v) if isinstance(v, list) else v)
        traj = dict(s.get("trajectory") or {})
        if traj:
            spec.trajectory = TrajectorySpec(**{**spec.trajectory.__dict__, **traj})
        spec.__post_init__()
        return spec

    def sensor(self) -> SensorModel:
        s = self.tree["sensor"]
        return SensorModel(s["wrench_noise_std"], s["wrench_bias_walk_std"], s["estimate_noise_std"],
                           bool(s["enable_wrench_noise"]), bool(s["enable_state_noise"]))

    def reward_weights(self) -> RewardWeights:
        r = self.tree["reward"]
        return RewardWeights(r["l_eR"], r["l_p"], r["l_d"], r["l_omega"], r["l_a"])

    def env(self, scenario: ScenarioSpec | None = None, evaluation: bool = False, perturb: bool | None = None) -> EnvConfig:
        body = self.body()
        a = self.tree["actuator"]
        g = self.tree["gains"]
        L = self.tree["learning"]
        margin = float(a["force_margin"])
        if perturb is None:
            perturb = not evaluation or bool(self.tree["eval"]["perturb"])
        ranges = PerturbRanges(**self.tree["perturb"]) if perturb else PerturbRanges(0, 0, 0, 0, 0)
        return EnvConfig(
            body=body,
            force_limit=np.array([margin, margin, margin + body.mass * body.gravity]),
            torque_limit=np.full(3, float(a["torque_limit"])),
            delay_steps=int(a["delay_steps"]),
            contact=ContactParams(**self.tree["contact"]),
            gains=self.gains(),
            scenario=scenario or self.scenario(evaluation=evaluation),
            rates=self.rates(),
            filters=FeatureFilters(float(g["pitch_rate_cutoff_hz"]), float(g["force_cutoff_hz"])),
            sensor=self.sensor(),
            perturb=ranges,
            approach_action=np.asarray(g["approach_action"], float),
            output_cutoff_hz=float(g["output_cutoff_hz"]),
            max_tilt_deg=float(L["max_tilt_deg"]),
            arena_depth=float(L["arena_depth"]),
            fault_penalty=float(L["fault_penalty"]),
            reward=self.reward_weights(),
        )

    def teacher(self) -> TeacherSpec:
        t = dict(self.tree["teacher"])
        roles = tuple("angular" if ax >= 3 else "translational" for ax in self.tree["gains"]["adapted_axes"])
        return TeacherSpec(kind="handcrafted", mu_lo=t["mu_lo"], mu_hi=t["mu_hi"],
                           angular_range=tuple(t["angular_range"]), translational_range=tuple(t["translational_range"]),
                           step_threshold=t["step_threshold"], compliant_blend=t["compliant_blend"], axis_roles=roles)

    def ppo(self, finetune: bool = False) -> PPOConfig:
        L = self.tree["learning"]
        over = (L.get("finetune_ppo") or {}) if finetune else {}
        return PPOConfig(**{**L["ppo"], **over})

    def distill(self) -> DistillConfig:
        return DistillConfig(**self.tree["learning"]["distill"])

    @property
    def baseline_action(self) -> np.ndarray:
        return np.asarray(self.tree["gains"]["baseline_action"], float)
