"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Training-based criteria are marked ``slow`` but are part of the default run.
Runtime limits are checked alongside the numerical tolerances.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from vislide import _math as vm
from vislide.control import (GainSchedule, Reference, adaptive_stiffness, damping_from_stiffness,
                             impedance_command, tracking_errors)
from vislide.dynamics import RobotState, Wrench, step_dynamics
from vislide.harness import experiments as X
from vislide.harness.config import RunConfig
from vislide.learning.ppo import train_bandit
from vislide.learning.rollout import PolicyFactory, run_episodes
from vislide.learning.teacher import teacher_actions
from vislide.control import cutoff_alpha
from vislide.scenarios import make_rocklike, make_step_terrain, make_whiteboard_sandpaper
from vislide.terrain import contact_batch

import gradcheck
from conftest import record

SEEDS = range(5)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# -- 1. closed-loop shaping --------------------------------------------------------


def second_order(m, k, d, x0, t):
    """Free response of m x'' + d x' + k x = 0 from rest at x0."""
    wn = math.sqrt(k / m)
    z = d / (2.0 * math.sqrt(k * m))
    if z < 1.0:
        wd = wn * math.sqrt(1.0 - z * z)
        return np.exp(-z * wn * t) * (x0 * np.cos(wd * t) + z * wn * x0 / wd * np.sin(wd * t))
    if z == 1.0:
        return x0 * np.exp(-wn * t) * (1.0 + wn * t)
    s = math.sqrt(z * z - 1.0)
    r1, r2 = -wn * (z - s), -wn * (z + s)
    c2 = -r1 * x0 / (r2 - r1)
    return (x0 - c2) * np.exp(r1 * t) + c2 * np.exp(r2 * t)


def test_criterion_01_closed_loop_shaping():
    rc = RunConfig.default()
    body = rc.body()
    g = rc["gains"]
    dt = rc.rates().physics_dt
    n = int(round(5.0 / dt))
    t = np.arange(n + 1) * dt
    m6 = np.r_[[body.mass] * 3, np.diag(body.inertia)]
    rng = np.random.default_rng(1)

    def run():
        worst = 0.0
        for _ in range(10):
            k = rng.uniform(g["k_min"], g["k_max"])
            d = damping_from_stiffness(k, g["zeta"])
            e0 = rng.uniform(-0.05, 0.05, 6)
            s = RobotState(e0[:3].copy(), np.array(vm.quat_exp(tuple(e0[3:]))), np.zeros(3), np.zeros(3))
            ref = Reference.hold(np.zeros(3))
            E = np.empty((n + 1, 6))
            for i in range(n + 1):
                E[i] = tracking_errors(s, ref)[0]
                if i < n:
                    # no delay, no saturation: the command goes straight to the body
                    s = step_dynamics(s, body, impedance_command(s, ref, k, d, body), Wrench.zero(), dt)
            A = np.stack([second_order(m6[j], k[j], d[j], E[0, j], t) for j in range(6)], axis=1)
            # deviation of each error vector (translation, rotation) relative to its peak norm
            for b in (slice(0, 3), slice(3, 6)):
                dev = np.max(np.linalg.norm(E[:, b] - A[:, b], axis=1)) / np.max(np.linalg.norm(A[:, b], axis=1))
                worst = max(worst, float(dev))
        return worst

    worst, secs = _timed(run)
    ok = worst < 0.02 and secs < 10.0
    record(1, ok, f"max relative deviation {worst:.4f} (< 0.02), {secs:.1f} s (< 10 s)")
    assert ok


# -- 2. steady-state force law -------------------------------------------------------


def test_criterion_02_force_law():
    def run():
        rc = RunConfig.default("flat6", scenario={"overrides": {"friction_set": [0.3]}})
        sc = rc.scenario()
        worst, faults = 0.0, 0
        for a in ([0.5, 0.5], [0.2, 0.8], [0.8, 0.8]):
            log = X.run_episode(rc, X.controller_factory(rc, "constant", action=a), 0, sc)[0]
            faults += log.fault_code != 0
            settled = log.sliding & (log.col("t_s") > sc.trajectory.approach_time + 5.0)
            F = log.col("F_perp_N")[settled]
            # effective penetration: normal offset of the body from its impedance target
            d_eff = -log.col("ex_m")[settled]
            k = log.col("kx_N_per_m")[settled]
            worst = max(worst, float(np.max(np.abs(k * d_eff - F) / F)))
        return worst, faults

    (worst, faults), secs = _timed(run)
    ok = worst < 0.05 and faults == 0 and secs < 5.0
    record(2, ok, f"max |k d_eff - F|/F {worst:.2e} (< 0.05), {faults} faults, {secs:.1f} s (< 5 s)")
    assert ok


# -- 3. contact properties -------------------------------------------------------------


def _random_rotations(rng, n):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], 1)


def test_criterion_03_contact_properties():
    terrains = [make_whiteboard_sandpaper(), make_step_terrain(0.02), make_rocklike(3, (0.1, 0.5, 0.9), 4.0)]
    lever = np.array([0.5, 0.0, 0.0])

    def run():
        rng = np.random.default_rng(3)
        n_total, bad, touching = 0, 0, 0
        for i, terrain in enumerate(terrains):
            n = 100_000 // len(terrains) + (1 if i < 100_000 % len(terrains) else 0)
            R = _random_rotations(rng, n)
            tip = np.c_[rng.uniform(-0.03, 0.06, n), rng.uniform(-0.3, 0.3, n), rng.uniform(-0.45, 3.95, n)]
            p = tip - R @ lever
            o = contact_batch(p, R, rng.normal(0, 0.5, (n, 3)), rng.normal(0, 1.0, (n, 3)), lever, terrain,
                              rng.uniform(100, 1e4, n), rng.uniform(0, 100, n), rng.uniform(1e-3, 0.1, n))
            nrm = o["normal"]
            f_par_vec = o["force"] - o["F_perp"][:, None] * nrm
            v = o["tip_velocity"]
            v_t = v - np.sum(v * nrm, axis=1, keepdims=True) * nrm
            viol = ((o["F_perp"] < 0)
                    | (np.linalg.norm(f_par_vec, axis=1) > o["mu"] * o["F_perp"] * (1 + 1e-12) + 1e-12)
                    | (np.sum(f_par_vec * v_t, axis=1) > 1e-12))
            bad += int(viol.sum())
            touching += int(o["in_contact"].sum())
            n_total += n
        return n_total, bad, touching

    (n, bad, touching), secs = _timed(run)
    ok = n == 100_000 and bad == 0 and secs < 5.0
    record(3, ok, f"{bad} violations in {n} queries ({touching} in contact), {secs:.2f} s (< 5 s)")
    assert ok


# -- 4. gradient oracle -------------------------------------------------------------------


def test_criterion_04_gradient_oracle():
    def run():
        rng = np.random.default_rng(4)
        a = max(gradcheck.actor_draw(rng) for _ in range(100))
        c = max(gradcheck.critic_draw(rng) for _ in range(100))
        return a, c

    (a, c), secs = _timed(run)
    ok = a < 1e-4 and c < 1e-4 and secs < 30.0
    record(4, ok, f"max relative error actor {a:.2e}, critic {c:.2e} over 100 draws each (< 1e-4), "
                  f"{secs:.1f} s (< 30 s)")
    assert ok


# -- 10 (runs shared with 5). PPO sanity ------------------------------------------------------


@pytest.fixture(scope="module")
def teacher_runs():
    """Privileged PPO on flat6, 500 epochs per seed, no early stopping."""
    rc = RunConfig.default("flat6", learning={"patience": 0})
    out = {}
    t0 = time.perf_counter()
    for seed in SEEDS:
        out[seed] = X.train_teacher(rc, seed, epochs=500)
    return out, time.perf_counter() - t0


def _moving_average(x, w=50):
    return np.convolve(x, np.ones(w) / w, mode="valid")


@pytest.mark.slow
def test_criterion_10_ppo_sanity(teacher_runs):
    hist = train_bandit(target=0.8, epochs=200, seed=0)
    bandit_err = abs(hist[-1] - 0.8)
    runs, secs = teacher_runs
    good, notes = 0, []
    for seed, tr in runs.items():
        ret = tr.logs[0][1].returns[:500]
        ma = _moving_average(ret)
        drops = int(np.sum(np.diff(ma) < 0))
        good += len(ret) == 500 and drops == 0
        notes.append(f"s{seed}:{drops}")
    ok = bandit_err <= 0.05 and good >= 4 and secs < 3600
    record(10, ok, f"bandit |a - a*| {bandit_err:.3f} (<= 0.05); moving-average decreases per seed "
                   f"[{' '.join(notes)}], {good}/5 non-decreasing (>= 4); {secs / 60:.1f} min (< 60)")
    assert ok


# -- 5. gain-law exactness ------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_05_gain_law(teacher_runs):
    rc = RunConfig.default()
    g = rc.gains()
    rng = np.random.default_rng(5)
    A = rng.uniform(0, 1, (10_000, 6))
    A = np.clip(A, 1e-12, 1 - 1e-12)
    worst_bound, worst_affine, worst_damp = 0.0, 0.0, 0.0
    sched = GainSchedule(g.k_min, g.k_max, g.zeta, np.inf)
    for a in A:
        sched.k_current = None
        k = adaptive_stiffness(a, sched, rc.rates().control_dt)
        worst_bound = max(worst_bound, float(np.max(np.maximum(g.k_min - k, k - g.k_max))))
        affine = g.k_min + (g.k_max - g.k_min) * a
        worst_affine = max(worst_affine, float(np.max(np.abs(k - affine) / affine)))
        d = damping_from_stiffness(k, g.zeta)
        worst_damp = max(worst_damp, float(np.max(np.abs(d - 2 * g.zeta * np.sqrt(k)) / d)))
    runs, _ = teacher_runs
    excess = max(max(r[-1] for r in tr.logs[0][1].rows) for tr in runs.values())
    n_rows = sum(len(tr.logs[0][1].rows) for tr in runs.values())
    eps = np.finfo(float).eps
    ok = worst_bound <= 0 and worst_affine <= 4 * eps and worst_damp <= 4 * eps and excess <= 0
    record(5, ok, f"bound excess {worst_bound:.1e}, affine rel {worst_affine:.1e}, damping rel {worst_damp:.1e} "
                  f"(<= 4 eps); worst slew/bound excess {excess:.2e} (<= 0) over {n_rows} training epochs")
    assert ok


# -- 6/7. distillation and the heterogeneous surface ---------------------------------------------


@pytest.fixture(scope="module")
def student():
    rc = RunConfig.default("flat6", learning={"n_instances": 8})
    st, secs = _timed(lambda: X.distill(rc, 0))
    return rc, st, secs


@pytest.mark.slow
def test_criterion_06_distillation(student):
    rc, st, secs = student
    env = rc.env()
    spec = rc.teacher()
    res = run_episodes(env, PolicyFactory.from_net(st.actor, st.normalizer), 0, 100, 2)
    ta = teacher_actions(res.obs_priv.reshape(-1, res.obs_priv.shape[-1]), spec).reshape(res.actions.shape)
    # compare what reaches the gain schedule: both traces through the same output filter
    alpha = cutoff_alpha(env.output_cutoff_hz, env.rates.policy_dt)
    f = np.tile(env.approach_action, (ta.shape[0], 1))
    tf = np.empty_like(ta)
    for k in range(ta.shape[1]):
        f = f + alpha * (ta[:, k] - f)
        tf[:, k] = f
    dev = float(np.max(np.abs(res.actions_filtered - tf)[res.active]))
    held = st.distill.heldout_mse
    ok = held < 1e-3 and dev < 0.1 and secs < 600
    record(6, ok, f"held-out mse {held:.2e} (< 1e-3), max trace deviation {dev:.3f} (< 0.1), "
                  f"{secs:.0f} s (< 600 s)")
    assert ok


def _span_mean(log, col, lo, hi):
    s = log.col("tip_s_m")
    m = log.sliding & (s >= lo) & (s < hi)
    return float(np.mean(log.col(col)[m]))


@pytest.mark.slow
def test_criterion_07_heterogeneous_surface(student):
    rc, st, _ = student

    def run():
        sc = rc.scenario(evaluation=True)
        base = X.run_episode(rc, X.controller_factory(rc, "baseline"), 0, sc)[0]
        pol = X.run_episode(rc, st.factory(), 0, sc)[0]
        return sc, base, pol

    (sc, base, pol), secs = _timed(run)
    win = X.eval_windows(rc, sc)["window"]
    tilt_b = X.window_metrics(base, win).mean_tilt_deg
    tilt_p = X.window_metrics(pol, win).mean_tilt_deg
    edge = sc.sandpaper[0]
    d_ang = _span_mean(pol, "kpitch_Nm_per_rad", edge + 0.1, edge + 0.4) - \
        _span_mean(pol, "kpitch_Nm_per_rad", edge - 0.3, edge)
    d_trans = _span_mean(pol, "kx_N_per_m", edge + 0.1, edge + 0.4) - _span_mean(pol, "kx_N_per_m", edge - 0.3, edge)
    faults = int(base.fault_code != 0) + int(pol.fault_code != 0)
    ok = tilt_p <= 0.5 * tilt_b and d_ang > 0 and d_trans < 0 and faults == 0 and secs < 120
    record(7, ok, f"mean tilt on sandpaper policy {tilt_p:.2f} deg vs baseline {tilt_b:.2f} deg "
                  f"(ratio {tilt_p / tilt_b:.2f} <= 0.5); at the boundary angular gain {d_ang:+.2f}, "
                  f"translational gain {d_trans:+.1f}; {faults} faults; {secs:.0f} s (< 120 s)")
    assert ok


# -- 8. step terrain -------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_08_step_terrain():
    flat = RunConfig.default("flat6", learning={"n_instances": 8})
    step = RunConfig.default("step2cm", learning={"n_instances": 16})
    stages = X.curriculum(step)
    sc = step.scenario(evaluation=True)
    win = X.eval_windows(step, sc)["detachment"]

    def score(factory, seed):
        log = X.run_episode(step, factory, seed, sc)[0]
        return X.window_metrics(log, win).rms_pitch_rate, log.fault_code

    def run():
        out = []
        for seed in SEEDS:
            pol = X.finetune(step, X.distill(flat, seed), seed, stages=stages)
            out.append((score(X.controller_factory(step, "baseline"), seed), score(pol.factory(), seed),
                        max(max(r[-1] for r in lg.rows) for _, lg in pol.logs)))
        return out

    out, secs = _timed(run)
    wins = sum(p[0] < b[0] and p[1] == 0 for b, p, _ in out)
    excess = max(e for *_, e in out)
    notes = " ".join(f"s{s}:{p[0]:.4f}/{b[0]:.4f}" for s, (b, p, _) in zip(SEEDS, out))
    ok = wins >= 4 and min(n for _, n in stages) >= 100 and secs <= 7200
    record(8, ok, f"detachment rms pitch rate policy/baseline [{notes}], policy lower in {wins}/5 (>= 4); "
                  f"epochs per stage {[n for _, n in stages]}; slew excess {excess:.1e}; {secs / 60:.0f} min (<= 120)")
    assert ok


# -- 9. gain sweep -------------------------------------------------------------------------------------


def dominated(point, others):
    return any(np.all(o <= point) and np.any(o < point) for o in others)


@pytest.mark.slow
def test_criterion_09_gain_sweep():
    rc = RunConfig.default("rock", learning={"n_instances": 8})

    def run():
        # student distilled on rock-like terrain; see the README for why no PPO refinement here
        st = X.distill(rc, 0)
        return X.gain_sweep(rc, 0, st.factory())

    rows, secs = _timed(run)
    C = {c: i for i, c in enumerate(X.SWEEP_COLUMNS)}
    ok_pareto, ok_faults, ok_hihi, notes = True, True, True, []
    hi = max(rc["eval"]["sweep_levels"])
    for traj in sorted({r[C["trajectory"]] for r in rows}):
        sel = [r for r in rows if r[C["trajectory"]] == traj]
        pol = next(r for r in sel if r[C["label"]] == "policy")
        const = [r for r in sel if r[C["label"]] != "policy"]
        pt = lambda r: np.array([r[C["rms_attitude_error"]], r[C["rms_position_error"]]])
        dom = dominated(pt(pol), [pt(r) for r in const])
        ok_pareto &= not dom
        ok_faults &= pol[C["n_faults"]] == 0
        hihi = next(r for r in const if r[C["a_trans"]] == hi and r[C["a_ang"]] == hi)
        stable = [r for r in const if r[C["n_faults"]] == 0]
        worst = hihi[C["n_faults"]] > 0 or hihi[C["rms_pitch_rate"]] >= max(r[C["rms_pitch_rate"]] for r in stable)
        ok_hihi &= bool(worst)
        notes.append(f"traj {traj}: policy ({pt(pol)[0]:.3f}, {pt(pol)[1]:.4f}) "
                     f"{'dominated' if dom else 'non-dominated'}, {pol[C['n_faults']]} policy faults, "
                     f"(hi,hi) {'faults' if hihi[C['n_faults']] else 'rms pitch %.3f' % hihi[C['rms_pitch_rate']]}")
    ok = ok_pareto and ok_faults and ok_hihi and secs <= 1800
    record(9, ok, "; ".join(notes) + f"; {secs / 60:.1f} min (<= 30)")
    assert ok


# -- 11. determinism ------------------------------------------------------------------------------------

SMALL = ["learning.n_instances=2", "learning.teacher_epochs=2", "learning.distill_rollouts=1",
         "learning.distill.epochs=3", "learning.curriculum=[{preset: flat6, epochs: 2}]",
         "scenario.trajectory.slide_time=2.0", "eval.n_instances=2", "eval.repeats=2",
         "eval.sweep_levels=[0.1,0.9]", "eval.lateral_offsets=[0.0]"]


def _cli(*args):
    r = subprocess.run([sys.executable, "-m", "vislide.harness.cli", *args], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    return r


def _pipeline(root: Path, mode):
    flag = ["--deterministic"] if mode == "sequential" else ["--parallel", "2"]
    sets = [x for s in SMALL for x in ("--set", s)]
    common = ["--seed", "3", *flag, *sets, "--quiet"]
    _cli("train-teacher", "--out", str(root / "teacher"), *common)
    _cli("distill", "--out", str(root / "distill"), *common)
    _cli("finetune", "--out", str(root / "finetune"), "--checkpoint", str(root / "distill" / "student.json"), *common)
    _cli("eval", "--out", str(root / "eval"), "--controller", "policy",
         "--checkpoint", str(root / "finetune" / "policy.json"), *common)
    _cli("sweep", "--out", str(root / "sweep"), "--checkpoint", str(root / "finetune" / "policy.json"), *common)
    _cli("plot", "--input", str(root / "teacher" / "epochs.csv"), "--x", "epoch", "--y", "mean_return",
         "--out", str(root / "plot" / "returns.svg"))
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.suffix in (".csv", ".svg", ".json", ".yaml") and p.name != "run.json"}


@pytest.mark.slow
def test_criterion_11_determinism(tmp_path):
    def run():
        out = {}
        for mode in ("sequential", "parallel"):
            out[mode] = [_pipeline(tmp_path / f"{mode}{i}", mode) for i in range(2)]
        return out

    out, secs = _timed(run)
    csv = lambda files: {k: v for k, v in files.items() if k.suffix == ".csv"}
    same_seq = out["sequential"][0] == out["sequential"][1]
    same_par = out["parallel"][0] == out["parallel"][1]
    cross = csv(out["sequential"][0]) == csv(out["parallel"][0])
    n_csv = len(csv(out["sequential"][0]))
    ok = same_seq and same_par and cross and n_csv > 0
    record(11, ok, f"{n_csv} CSV files per pipeline over 6 commands; byte-identical re-runs sequential {same_seq}, "
                   f"parallel {same_par}; sequential == parallel {cross}; {secs:.0f} s")
    assert ok
