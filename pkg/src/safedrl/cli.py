"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from .errors import ConfigurationError, InvariantViolation

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_INVARIANT = 0, 1, 2, 3
COMMANDS = ("train", "eval", "sweep-alpha", "sweep-noise", "sweep-jerk", "replay", "selftest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    config_path: str | None = None
    seed: int | None = None
    out: str = "runs/out"
    overrides: list = field(default_factory=list)
    workers: int | None = None
    policy: str | None = None
    alpha: float | None = None
    emergency_jerk_limit: float | None = None
    checkpoint: str | None = None
    log: str | None = None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", dest="config_path", metavar="PATH",
                   help="sectioned key-value config file (default: built-in defaults)")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (integer; default: [run] seed = 0)")
    p.add_argument("--out", default="runs/out", metavar="DIR",
                   help="output directory, created if missing (default: runs/out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SEC.KEY=VALUE",
                   help="override one config key, e.g. agent.gamma=0.95 (repeatable)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel evaluation workers (default: [run] workers = 1)")
    p.add_argument("--policy", choices=("rule", "dqn", "iqn"), default=None,
                   help="policy to train/evaluate (default: dqn for train, rule otherwise)")
    p.add_argument("--alpha", type=float, default=None,
                   help="IQN CVaR risk level in (0, 1] (default: [eval] alpha = 1.0)")
    p.add_argument("--emergency-jerk-limit", type=float, default=None, metavar="M/S^3",
                   help="emergency jerk limit in m/s^3 (default: 5.0; sweepable 1-7)")
    p.add_argument("--checkpoint", default=None, metavar="PATH",
                   help="trained network checkpoint (.npz) for dqn/iqn policies")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="safedrl", description="Shielded RL for occluded intersections.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "train": "train a DQN or IQN agent; writes checkpoints and a training log",
        "eval": "evaluate a policy on the benchmark suite",
        "sweep-alpha": "evaluate an IQN checkpoint over the alpha grid",
        "sweep-noise": "evaluate policies over the noise levels",
        "sweep-jerk": "evaluate a policy over emergency jerk limits",
        "replay": "narrate a stored episode log step by step",
        "selftest": "run the built-in invariant checks",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        _common(p)
        if name == "replay":
            p.add_argument("--log", required=True, metavar="PATH", help="episode log CSV to replay")
    return parser


def parse_args(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    return RunConfig(**vars(ns))


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        return "0+unknown"


def _write_manifest(rc: RunConfig, cfg: dict, argv) -> None:
    manifest = {
        "command": rc.command,
        "argv": list(argv),
        "seed": cfg["run"]["seed"],
        "workers": cfg["run"]["workers"],
        "config": cfgmod.dump_config(cfg),
        "code_version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(os.path.join(rc.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve(rc: RunConfig) -> dict:
    cfg = cfgmod.load_config(rc.config_path)
    cfg = cfgmod.apply_overrides(cfg, rc.overrides)
    if rc.seed is not None:
        cfg["run"]["seed"] = rc.seed
    if rc.workers is not None:
        if rc.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        cfg["run"]["workers"] = rc.workers
    if rc.alpha is not None:
        cfg["eval"]["alpha"] = rc.alpha
    if rc.emergency_jerk_limit is not None:
        cfg["eval"]["emergency_jerk_limit"] = rc.emergency_jerk_limit
    if not 0.0 < cfg["eval"]["alpha"] <= 1.0:
        raise ConfigurationError("alpha must lie in (0, 1]")
    if not cfg["eval"]["emergency_jerk_limit"] > 0.0:
        raise ConfigurationError("emergency jerk limit must be positive")
    return cfg


def _load_policy(name: str, checkpoint: str | None, cfg: dict):
    from .agents import DQNAgent, IQNAgent, RuleBasedPolicy

    if name == "rule":
        return RuleBasedPolicy(cfg["eval"]["emergency_jerk_limit"]).fit()
    path = checkpoint or cfg["paths"][f"{name}_checkpoint"]
    if not path:
        raise RuntimeError(f"policy '{name}' needs --checkpoint (or paths.{name}_checkpoint)")
    if not os.path.isfile(path):
        raise RuntimeError(f"checkpoint not found: {path}")
    agent = (DQNAgent if name == "dqn" else IQNAgent).load(path)
    if name == "iqn":
        agent.alpha = cfg["eval"]["alpha"]
    return agent


def _suite(cfg: dict):
    from .evaluation import build_benchmark

    return build_benchmark(cfg["eval"]["master_seed"] + cfg["run"]["seed"],
                           cfg["eval"]["n_scenarios"])


def _cmd_train(rc, cfg):
    from dataclasses import replace

    from .agents import DQNAgent, IQNAgent

    kind = rc.policy or "dqn"
    if kind == "rule":
        raise ConfigurationError("the rule-based policy has nothing to train")
    tc = cfgmod.training_config(cfg)
    agent = (DQNAgent if kind == "dqn" else IQNAgent)(tc, random_state=cfg["run"]["seed"])
    agent.fit(out_dir=rc.out)
    log = agent.training_log_
    print(f"trained {kind}: {agent.n_steps_} steps, {len(log)} episodes -> {rc.out}")
    return EXIT_OK


def _cmd_eval(rc, cfg):
    from .evaluation import log_to_csv, rows_to_csv, run_suite, summarize, write_summary

    name = rc.policy or "rule"
    policy = _load_policy(name, rc.checkpoint, cfg)
    suite = _suite(cfg)
    alpha = cfg["eval"]["alpha"] if name == "iqn" else None
    logs = run_suite(policy, suite, cfg["eval"]["emergency_jerk_limit"], name, alpha,
                     strict=False, workers=cfg["run"]["workers"])
    os.makedirs(os.path.join(rc.out, "logs"), exist_ok=True)
    episodes = []
    for i, log in enumerate(logs):
        log_to_csv(log, os.path.join(rc.out, "logs", f"episode_{i:03d}.csv"))
        episodes.append({"index": i, "scenario_seed": log.scenario_seed,
                         "episode_seed": log.episode_seed, "outcome": log.outcome,
                         "crossing_time": log.crossing_time, "steps": len(log.steps),
                         "emergency_steps": len(log.emergency_jerks),
                         "collision": log.collision})
    rows_to_csv(episodes, os.path.join(rc.out, "episodes.csv"))
    row = summarize(logs, policy=name, alpha=alpha,
                    jerk_limit=cfg["eval"]["emergency_jerk_limit"])
    rows_to_csv([row], os.path.join(rc.out, "summary.csv"))
    write_summary([row], os.path.join(rc.out, "summary.json"))
    print(rows_to_csv([row]), end="")
    if row["collisions"]:
        raise InvariantViolation(f"{row['collisions']} collision(s) with the shield active")
    return EXIT_OK


def _cmd_sweep_alpha(rc, cfg):
    from .evaluation import alpha_sweep, best_alpha, rows_to_csv, write_summary

    agent = _load_policy("iqn", rc.checkpoint, cfg)
    rows = alpha_sweep(agent, _suite(cfg), cfg["eval"]["alpha_grid"],
                       cfg["eval"]["emergency_jerk_limit"], workers=cfg["run"]["workers"])
    best = best_alpha(rows)
    rows_to_csv(rows, os.path.join(rc.out, "sweep_alpha.csv"))
    write_summary(rows, os.path.join(rc.out, "summary.json"),
                  {"best_alpha": {"speed": best["speed"], "comfort": best["comfort"]}})
    print(rows_to_csv(rows), end="")
    print(f"best alpha: speed={best['speed']} comfort={best['comfort']}")
    return EXIT_OK


def _cmd_sweep_noise(rc, cfg):
    from .evaluation import noise_sweep, rows_to_csv, write_summary

    names = (rc.policy,) if rc.policy else cfg["eval"]["policies"]
    policies = {n: _load_policy(n, rc.checkpoint if n == rc.policy else None, cfg) for n in names}
    rows = noise_sweep(policies, _suite(cfg), cfg["eval"]["noise_levels"],
                       cfg["eval"]["emergency_jerk_limit"], workers=cfg["run"]["workers"])
    rows_to_csv(rows, os.path.join(rc.out, "sweep_noise.csv"))
    write_summary(rows, os.path.join(rc.out, "summary.json"))
    print(rows_to_csv(rows), end="")
    return EXIT_OK


def _cmd_sweep_jerk(rc, cfg):
    from .evaluation import jerk_limit_sweep, rows_to_csv, write_summary

    name = rc.policy or "rule"
    policy = _load_policy(name, rc.checkpoint, cfg)
    rows = jerk_limit_sweep(policy, _suite(cfg), cfg["eval"]["jerk_limits"], name,
                            workers=cfg["run"]["workers"])
    rows_to_csv(rows, os.path.join(rc.out, "sweep_jerk.csv"))
    write_summary(rows, os.path.join(rc.out, "summary.json"))
    print(rows_to_csv(rows), end="")
    return EXIT_OK


def narrate(log) -> list:
    lines = [f"episode seed {log.episode_seed} (scenario {log.scenario_seed}), policy {log.policy_id}"]
    for i, s in enumerate(log.steps):
        mask = "".join("1" if m else "0" for m in s.psa_mask)
        what = f"EMERGENCY {s.jerk_executed:+.1f}" if s.emergency else f"{s.jerk_executed:+.1f}"
        lines.append(f"step {i:3d} t={s.t:5.1f}s s={s.s:6.2f}m v={s.v:5.2f}m/s a={s.a:+5.2f}m/s2 "
                     f"proposed={s.jerk_commanded:+.1f} psa[-,0,+]={mask} executed={what}")
    lines.append(f"outcome: {log.outcome}" + (f" after {log.crossing_time:.1f}s"
                                              if log.crossing_time is not None else ""))
    return lines


def _cmd_replay(rc, cfg):
    from .evaluation import log_from_csv

    try:
        with open(rc.log) as fh:
            log = log_from_csv(fh.read())
    except OSError as exc:
        raise RuntimeError(f"cannot read episode log: {exc}") from exc
    except (ValueError, KeyError, IndexError) as exc:
        raise RuntimeError(f"malformed episode log {rc.log}: {exc}") from exc
    lines = narrate(log)
    with open(os.path.join(rc.out, "replay.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _cmd_selftest(rc, cfg):
    from .selftest import run_selftest

    results = run_selftest()
    for name, ok, msg in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {msg}" if msg else ""))
    with open(os.path.join(rc.out, "selftest.txt"), "w") as fh:
        fh.writelines(f"{name} {'pass' if ok else 'fail'}\n" for name, ok, _ in results)
    if not all(ok for _, ok, _ in results):
        raise InvariantViolation("selftest failed")
    return EXIT_OK


HANDLERS = {"train": _cmd_train, "eval": _cmd_eval, "sweep-alpha": _cmd_sweep_alpha,
            "sweep-noise": _cmd_sweep_noise, "sweep-jerk": _cmd_sweep_jerk,
            "replay": _cmd_replay, "selftest": _cmd_selftest}


def dispatch(rc: RunConfig, argv=()) -> int:
    try:
        cfg = _resolve(rc)
        try:
            os.makedirs(rc.out, exist_ok=True)
            if not os.access(rc.out, os.W_OK):
                raise OSError(f"output directory {rc.out} is not writable")
        except OSError as exc:
            raise ConfigurationError(str(exc)) from exc
        _write_manifest(rc, cfg, argv)
        return HANDLERS[rc.command](rc, cfg)
    except ConfigurationError as exc:
        print(f"safedrl: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"safedrl: INVARIANT VIOLATION: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"safedrl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rc = parse_args(argv)
    except UsageError as exc:
        print(f"safedrl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return dispatch(rc, argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
