"""Command-line entry point: ``vislide <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import yaml

from ..learning.ppo import EPOCH_COLUMNS
from . import experiments as X
from .config import PRESETS, ConfigError, RunConfig, deep_merge
from .io import read_csv, save_checkpoint, write_csv, write_episode_log
from .metrics import Metrics
from .plot import plot_csv


def _parse_set(items):
    """``a.b.c=value`` pairs (YAML-typed values) into a nested dict."""
    tree = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        node = tree
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(val)
    return tree


def load_config(args) -> RunConfig:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    preset = args.scenario
    if args.config and preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        overrides = deep_merge({k: v for k, v in PRESETS[preset].items() if k == "scenario"}, overrides)
        preset = None
    return RunConfig.load(args.config, preset, overrides)


def _out_dir(args, rc: RunConfig, command: str) -> Path:
    out = Path(args.out) if args.out else Path(rc["out"]) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parallel(args) -> int:
    return 0 if args.deterministic else int(args.parallel or 0)


def _write_manifest(out: Path, args, rc: RunConfig, t0: float, extra=None):
    (out / "config.yaml").write_text(rc.to_yaml())
    doc = {"command": args.command, "seed": rc.seed, **(extra or {})}
    if not args.deterministic:
        doc["elapsed_s"] = round(time.time() - t0, 3)
        doc["parallel"] = _parallel(args)
    (out / "run.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _epoch_rows(logs):
    rows = []
    for stage, log in logs:
        for r in log.rows:
            rows.append([stage, *r])
    return rows


def _progress(quiet):
    def cb(e, row, actor, critic):
        if not quiet and e % 10 == 0:
            print(f"epoch {e:5d}  return {row['mean_return']:9.3f}  faults {row['fault_rate']:.2f}  "
                  f"kl {row['approx_kl']:.4f}", file=sys.stderr, flush=True)
    return cb


# -- commands -----------------------------------------------------------------------


def cmd_train_teacher(args):
    rc = load_config(args)
    out = _out_dir(args, rc, "train-teacher")
    t0 = time.time()
    tr = X.train_teacher(rc, rc.seed, _parallel(args), on_epoch=_progress(args.quiet))
    write_csv(out / "epochs.csv", ["stage", *EPOCH_COLUMNS], _epoch_rows(tr.logs))
    save_checkpoint(out / "teacher.json", tr.actor, tr.critic, tr.normalizer, tr.meta("teacher", rc, rc.seed))
    _write_manifest(out, args, rc, t0)
    print(out / "teacher.json")


def cmd_distill(args):
    rc = load_config(args)
    out = _out_dir(args, rc, "distill")
    t0 = time.time()
    teacher = X.load_trained(args.checkpoint) if args.checkpoint else None
    st = X.distill(rc, rc.seed, teacher, _parallel(args))
    write_csv(out / "distill.csv", ["epoch", "train_mse"], [[i, v] for i, v in enumerate(st.distill.history)])
    write_csv(out / "summary.csv", ["train_mse", "heldout_mse"], [[st.distill.train_mse, st.distill.heldout_mse]])
    save_checkpoint(out / "student.json", st.actor, None, st.normalizer, st.meta("student", rc, rc.seed))
    _write_manifest(out, args, rc, t0, {"teacher": "learned" if teacher else "handcrafted"})
    print(f"held-out mse {st.distill.heldout_mse:.3e}", file=sys.stderr)
    print(out / "student.json")


def cmd_finetune(args):
    rc = load_config(args)
    if not args.checkpoint:
        raise ConfigError("finetune needs --checkpoint (a distilled student)")
    out = _out_dir(args, rc, "finetune")
    t0 = time.time()
    student = X.load_trained(args.checkpoint)
    if student.privileged:
        raise ConfigError("finetune expects a student checkpoint, not a privileged teacher")
    pol = X.finetune(rc, student, rc.seed, _parallel(args), on_epoch=_progress(args.quiet))
    write_csv(out / "epochs.csv", ["stage", *EPOCH_COLUMNS], _epoch_rows(pol.logs))
    save_checkpoint(out / "policy.json", pol.actor, pol.critic, pol.normalizer, pol.meta("policy", rc, rc.seed))
    _write_manifest(out, args, rc, t0)
    print(out / "policy.json")


def cmd_eval(args):
    rc = load_config(args)
    out = _out_dir(args, rc, "eval")
    t0 = time.time()
    factory = X.controller_factory(rc, args.controller, args.checkpoint)
    scenario = rc.scenario(evaluation=True)
    logs = X.run_episode(rc, factory, rc.seed, scenario, parallel=_parallel(args))
    rows = []
    for i, lg in enumerate(logs):
        write_episode_log(out / f"episode_{i:03d}.csv", lg)
        for name, win in X.eval_windows(rc, scenario).items():
            rows.append([i, name, *X.window_metrics(lg, win).as_row()])
    write_csv(out / "metrics.csv", ["instance", "window", *Metrics.FIELDS], rows)
    _write_manifest(out, args, rc, t0, {"controller": args.controller})
    for r in rows:
        print(",".join(str(v) for v in r))


def cmd_sweep(args):
    rc = load_config(args)
    out = _out_dir(args, rc, "sweep")
    t0 = time.time()
    policy = X.controller_factory(rc, "policy", args.checkpoint) if args.checkpoint else None
    rows = X.gain_sweep(rc, rc.seed, policy, parallel=_parallel(args))
    write_csv(out / "sweep.csv", X.SWEEP_COLUMNS, rows)
    i_att = X.SWEEP_COLUMNS.index("rms_attitude_error")
    i_pos = X.SWEEP_COLUMNS.index("rms_position_error")
    write_csv(out / "scatter.csv", ["label", "trajectory", "rms_attitude_error", "rms_position_error"],
              [[r[0], r[1], r[i_att], r[i_pos]] for r in rows])
    _write_manifest(out, args, rc, t0)
    print(out / "sweep.csv")


def cmd_plot(args):
    cols, rows = read_csv(args.input)
    ys = [y for y in args.y.split(",") if y]
    svg = plot_csv(cols, rows, args.x, ys, kind=args.kind, group=args.group, title=args.title or "",
                   logx=args.logx, logy=args.logy)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(out)


COMMANDS = {
    "train-teacher": (cmd_train_teacher, "PPO on privileged observations (learned teacher)"),
    "distill": (cmd_distill, "distill a teacher into the deployable student"),
    "finetune": (cmd_finetune, "PPO refinement of a student through the curriculum"),
    "eval": (cmd_eval, "closed-loop evaluation run with episode logs and metrics"),
    "sweep": (cmd_sweep, "3x3 constant-gain sweep, optionally with a policy row"),
    "plot": (cmd_plot, "SVG line/scatter plot from a CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vislide", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", help="output directory (plot: output file)")
        if name == "plot":
            sp.add_argument("--input", required=True, help="CSV file")
            sp.add_argument("--x", required=True, help="x column")
            sp.add_argument("--y", required=True, help="comma-separated y columns")
            sp.add_argument("--kind", choices=("line", "scatter"), default="line")
            sp.add_argument("--group", help="column whose values split the series")
            sp.add_argument("--title")
            sp.add_argument("--logx", action="store_true")
            sp.add_argument("--logy", action="store_true")
            continue
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scenario", help=f"preset: {', '.join(PRESETS)}")
        sp.add_argument("--checkpoint", help="checkpoint to load")
        sp.add_argument("--parallel", type=int, default=0, help="worker processes (0 = sequential)")
        sp.add_argument("--deterministic", action="store_true",
                        help="sequential run; manifest without wall-clock fields")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
        sp.add_argument("--quiet", action="store_true")
        if name == "eval":
            sp.add_argument("--controller", choices=("baseline", "policy", "teacher"), default="baseline")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"vislide {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
