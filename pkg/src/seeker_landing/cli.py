"""Command-line entry points: training, IC-pool building, evaluation, simulation and replay."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

import yaml

from . import eval_harness as eh
from .config import ConfigError, RunConfig, Scenario, load_config
from .environment import GUIDANCE, LANDING, LanderEnv
from .networks import Agent, load_checkpoint, save_checkpoint
from .ppo import (PPOTrainer, TrainingDiverged, build_ic_pool, load_ic_pool, new_agent, save_ic_pool)

log = logging.getLogger("seeker_landing")


class CliError(Exception):
    """User-facing failure; printed without a traceback."""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seeker-landing", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, episodes_help: str):
        sp.add_argument("--config", type=Path, help="YAML run-configuration file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--episodes", type=int, help=episodes_help)
        sp.add_argument("--scenario", type=str, help="Optim, AF=0.7, MV=0.1 or dJdiag=30")
        sp.add_argument("--out", type=Path, required=True)

    sp = sub.add_parser("train-guidance", help="train the guidance-segment policy")
    common(sp, "total training episodes (default from config)")
    sp.add_argument("--resume", action="store_true", help="continue from the state saved in --out")

    sp = sub.add_parser("train-landing", help="train the landing-segment policy from an IC pool")
    common(sp, "total training episodes (default from config)")
    sp.add_argument("--ic-pool", type=Path, required=True)
    sp.add_argument("--resume", action="store_true", help="continue from the state saved in --out")

    sp = sub.add_parser("build-ic-pool", help="record guidance terminal states for landing training")
    common(sp, "pool size (default from config)")
    sp.add_argument("--checkpoint", type=Path, required=True, help="guidance checkpoint")

    sp = sub.add_parser("evaluate", help="Monte Carlo evaluation of a guidance/landing pair")
    common(sp, "episodes per scenario (default from config)")
    sp.add_argument("--checkpoint", type=Path, required=True, help="guidance checkpoint")
    sp.add_argument("--landing-checkpoint", type=Path, required=True)

    sp = sub.add_parser("simulate", help="run one full episode and write its trajectory log")
    common(sp, "unused")
    sp.add_argument("--checkpoint", type=Path, help="guidance checkpoint (fresh seeded net if omitted)")
    sp.add_argument("--landing-checkpoint", type=Path, help="landing checkpoint (fresh seeded net if omitted)")
    sp.add_argument("--index", type=int, default=0, help="episode index within the seed")

    sp = sub.add_parser("replay", help="re-run a logged trajectory from its actions and compare")
    sp.add_argument("trajectory", type=Path)
    sp.add_argument("--config", type=Path)
    sp.add_argument("--seed", type=int, help="defaults to the value in the trajectory manifest")
    sp.add_argument("--index", type=int, help="defaults to the value in the trajectory manifest")
    sp.add_argument("--scenario", type=str)
    sp.add_argument("--out", type=Path, help="write the regenerated trajectory here")
    return p


def _config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
        if getattr(args, "scenario", None):
            cfg = dataclasses.replace(cfg, scenario=Scenario.parse(args.scenario))
    except (ConfigError, ValueError, OSError) as exc:
        raise CliError(f"configuration error: {exc}") from exc
    return cfg


def _require(path: Path | None, what: str) -> Path:
    if path is None or not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _load_agent(path: Path, segment: str) -> Agent:
    try:
        agent, _ = load_checkpoint(_require(path, f"{segment} checkpoint"))
        eh.check_agent(agent, segment)
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"cannot use {path} as a {segment} checkpoint: {exc}") from exc
    return agent


def _train(args, segment: str) -> int:
    cfg = _config(args)
    tc = cfg.trainer
    pool = None
    if segment == LANDING:
        pool = load_ic_pool(_require(args.ic_pool, "IC pool"))
    total = args.episodes or (tc.total_episodes_landing if segment == LANDING else tc.total_episodes_guidance)
    out: Path = args.out
    ckpt, state = out / "checkpoint.npz", out / "trainer_state.npz"
    if args.resume:
        agent, _ = load_checkpoint(_require(ckpt, "checkpoint to resume"))
        trainer = PPOTrainer(agent, cfg, segment, args.seed)
        trainer.load_state(_require(state, "trainer state to resume"))
    else:
        if ckpt.exists():
            raise CliError(f"{out} already holds a run; pass --resume or pick another --out")
        trainer = PPOTrainer(new_agent(segment, args.seed, tc.init_log_std), cfg, segment, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    eh.write_manifest(out / "manifest.yaml", f"train-{segment}", cfg, args.seed, total_episodes=total,
                      ic_pool=str(args.ic_pool) if pool is not None else None)
    try:
        trainer.train(total, ic_pool=pool, log_path=out / "learning_curve.csv", progress=args.verbose)
    finally:
        # checkpoint whatever was reached so an interrupted run can resume
        save_checkpoint(ckpt, trainer.agent, {"episodes": trainer.episodes_done, "seed": args.seed})
        trainer.save_state(state)
    print(f"trained {segment} policy for {trainer.episodes_done} episodes -> {ckpt}")
    return 0


def _build_pool(args) -> int:
    cfg = _config(args)
    agent = _load_agent(args.checkpoint, GUIDANCE)
    n = args.episodes or cfg.trainer.ic_pool_size
    try:
        pool = build_ic_pool(agent, cfg, n, args.seed)
    except RuntimeError as exc:
        raise CliError(str(exc)) from exc
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_ic_pool(args.out, pool)
    print(f"wrote {len(pool)} landing initial conditions -> {args.out}")
    return 0


def _evaluate(args) -> int:
    cfg = _config(args)
    guidance = _load_agent(args.checkpoint, GUIDANCE)
    landing = _load_agent(args.landing_checkpoint, LANDING)
    spec = eh.ScenarioSpec(cfg.scenario, args.episodes or cfg.evaluation.episodes, args.seed)
    report = eh.run_monte_carlo(spec, guidance, landing, cfg, cfg.evaluation.deterministic)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    eh.export_report([report], out / "report.csv")
    eh.export_terminal_records(report.records, out / "terminal_records.csv")
    eh.export_miss_scatter(report, out / "miss_scatter.csv")
    eh.write_manifest(out / "manifest.yaml", "evaluate", cfg, args.seed, episodes=spec.episodes,
                      checkpoint=str(args.checkpoint), landing_checkpoint=str(args.landing_checkpoint))
    r = report
    print(f"{r.scenario}: success {r.success_pct:.1f}%  miss {r.miss[0]:.2f}+-{r.miss[1]:.2f} m  "
          f"speed {r.speed[0]:.2f}+-{r.speed[1]:.2f} m/s  fuel {r.fuel[0]:.1f}+-{r.fuel[1]:.1f} kg")
    return 0


def _simulate(args) -> int:
    cfg = _config(args)
    guidance = (_load_agent(args.checkpoint, GUIDANCE) if args.checkpoint
                else new_agent(GUIDANCE, args.seed, cfg.trainer.init_log_std))
    landing = (_load_agent(args.landing_checkpoint, LANDING) if args.landing_checkpoint
               else new_agent(LANDING, args.seed, cfg.trainer.init_log_std))
    env = LanderEnv(cfg, mode="full", record=True)
    rec = eh.run_episode(env, guidance, landing, args.seed, args.index)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    n = eh.export_trajectory(env.rows, args.out)
    eh.write_manifest(_sidecar(args.out), "simulate", cfg, args.seed, index=args.index,
                      checkpoint=str(args.checkpoint) if args.checkpoint else None,
                      landing_checkpoint=str(args.landing_checkpoint) if args.landing_checkpoint else None,
                      terminal={k: rec[k] for k in ("reason", "steps", "miss", "speed", "fuel")})
    print(f"episode ended by {rec['reason']} after {rec['steps']} steps; {n} rows -> {args.out}")
    return 0


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.yaml")


def _replay(args) -> int:
    path = _require(args.trajectory, "trajectory log")
    manifest = {}
    if _sidecar(path).is_file():
        manifest = yaml.safe_load(_sidecar(path).read_text(encoding="utf-8")) or {}
    if args.config is None and "config" in manifest:
        from .config import config_from_dict
        cfg = config_from_dict(manifest["config"])
        if args.scenario:
            cfg = dataclasses.replace(cfg, scenario=Scenario.parse(args.scenario))
    else:
        cfg = _config(args)
    seed = args.seed if args.seed is not None else manifest.get("seed")
    index = args.index if args.index is not None else manifest.get("index", 0)
    if seed is None:
        raise CliError("no --seed given and no manifest next to the trajectory")
    original = eh.read_trajectory(path)
    try:
        env = eh.replay_actions(cfg, seed, index, eh.actions_from_trajectory(path))
    except ValueError as exc:
        raise CliError(f"replay failed: {exc}") from exc
    regenerated = [[eh._fmt(v) for v in row] for row in eh.trajectory_rows(env.rows)]
    if args.out is not None:
        eh.export_trajectory(env.rows, args.out)
    same = regenerated == [[r[c] for c in eh.TRAJECTORY_COLUMNS] for r in original]
    print(f"replay {'identical' if same else 'DIFFERS'}: {len(regenerated)} rows regenerated, "
          f"{len(original)} logged")
    return 0 if same else 1


COMMANDS = {
    "train-guidance": lambda a: _train(a, GUIDANCE),
    "train-landing": lambda a: _train(a, LANDING),
    "build-ic-pool": _build_pool,
    "evaluate": _evaluate,
    "simulate": _simulate,
    "replay": _replay,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
