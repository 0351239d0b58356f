"""``masd`` command-line entry point.

    masd <xor|train|eval|finetune|analyze> --config PATH [--set key=value]...
         [--seeds a,b,c] [--out DIR]

The output directory defaults to ``$MASD_OUT`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import analysis
from .experiments import (finetune, initial_conditions, rollout_skills, run_training,
                          trainer_from_checkpoint, write_json, config_from_checkpoint)
from .io import svg
from .io.checkpoint import CheckpointError, load_checkpoint
from .io.config import ConfigError, ExperimentConfig, load_config
from .io.records import read_metrics, read_trajectories, write_snapshot, write_trajectories
from .maddpg import TrainingDiverged

log = logging.getLogger("masd")


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    if len(set(seeds)) != len(seeds):
        raise UsageError(f"--seeds has duplicates: {text}")
    return seeds


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("MASD_OUT") or "runs")


def _config(args, required: bool = True) -> Optional[ExperimentConfig]:
    if args.config is None:
        if required:
            raise UsageError("--config is required")
        return None
    return load_config(args.config, args.set)


def _per_seed(seeds: Sequence[int], fn) -> Dict[int, object]:
    """Run ``fn(seed)`` for every seed; failures are reported and the rest still run."""
    results, failed = {}, []
    for seed in seeds:
        try:
            results[seed] = fn(seed)
        except (TrainingDiverged, ValueError, OSError) as err:
            log.error("seed %d failed: %s", seed, err)
            failed.append(seed)
    if failed:
        raise SeedFailures(failed, results)
    return results


class SeedFailures(Exception):
    def __init__(self, failed: List[int], results: Dict):
        super().__init__(f"{len(failed)} seed(s) failed: {failed}")
        self.failed = failed
        self.results = results


# --------------------------------------------------------------------------


def cmd_xor(args) -> int:
    cfg = _config(args)
    if cfg.task != "xor":
        raise UsageError(f"xor needs task = \"xor\", config has {cfg.task!r}")
    out = _out_dir(args)
    seeds = parse_seeds(args.seeds)
    runs = _per_seed(seeds, lambda s: run_training(cfg, s, out / f"seed_{s}"))
    traces: Dict[str, list] = {}
    table = {}
    for seed, res in runs.items():
        rows = read_metrics(res.metrics_path)
        traces[f"global/{seed}"] = [(r["episode"], r["mi_global"]) for r in rows]
        traces[f"mean local/{seed}"] = [(r["episode"], float(np.mean(r["mi_local"]))) for r in rows]
        last = rows[-1]
        table[seed] = {"mi_global": last["mi_global"], "mi_local": last["mi_local"],
                       "mean_mi_local": float(np.mean(last["mi_local"]))}
    svg.emit_svg(out / "mi_curves.svg", svg.curves(traces, "XOR mutual information", "episode",
                                                   "MI (bits)"))
    write_json(out / "summary.json", {str(k): v for k, v in table.items()})
    print(f"{'seed':>6} {'global MI':>10} {'mean local':>11}  local MI")
    for seed, row in table.items():
        locs = ", ".join(f"{v:.3f}" for v in row["mi_local"])
        print(f"{seed:>6} {row['mi_global']:>10.3f} {row['mean_mi_local']:>11.3f}  [{locs}]")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        cfg = load_config(args.config, args.set) if args.config else \
            load_config(raw=config_from_checkpoint(ckpt).model_dump(mode="json"), overrides=args.set)
        seed = int(ckpt.meta.get("seed", 0))
        if args.seeds and parse_seeds(args.seeds) != [seed]:
            raise UsageError(f"checkpoint was written by seed {seed}")
        out = Path(args.out) if args.out else Path(args.resume).parent
        res = run_training(cfg, seed, out, resume=args.resume)
        print(f"seed {seed}: resumed to episode {res.last_metrics.get('episode')}")
        return 0
    cfg = _config(args)
    if cfg.task == "xor":
        raise UsageError("use `masd xor` for the XOR game")
    out = _out_dir(args)
    runs = _per_seed(parse_seeds(args.seeds), lambda s: run_training(cfg, s, out / f"seed_{s}"))
    for seed, res in runs.items():
        m = res.last_metrics
        print(f"seed {seed}: episode {m.get('episode')}, active_k {m.get('active_k')}, "
              f"mean global log-prob {m.get('mean_global_lp', float('nan')):.3f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = config_from_checkpoint(ckpt)
    if args.set:
        cfg = load_config(raw=cfg.model_dump(mode="json"), overrides=args.set)
    if cfg.task == "xor":
        raise UsageError("eval rolls out particle tasks; XOR is evaluated exactly by `masd xor`")
    trainer = trainer_from_checkpoint(ckpt, cfg)
    seed = int(ckpt.meta.get("seed", 0))
    grid = cfg.eval.grid if args.grid is None else args.grid
    perturb = cfg.eval.perturb if args.perturb is None else args.perturb
    inits = initial_conditions(cfg, perturb=0 if grid else perturb, fixed=args.fixed_init, grid=grid)
    if not inits:
        raise UsageError("nothing to evaluate: --no-fixed-init with --perturb 0")
    run_id = args.run_id or Path(args.checkpoint).resolve().parent.name
    records = rollout_skills(trainer, cfg, inits, run_id, seed)
    out = _out_dir(args)
    write_trajectories(out / "trajectories.csv", records)
    write_snapshot(out / "initial_state.csv", dict(inits[0][1]), run_id, seed)
    first = inits[0][0]
    fan = {}
    for rec in records:
        if rec.init_id == first:
            fan.setdefault(rec.skill, []).append(rec.positions)
    svg.emit_svg(out / "skills.svg", svg.trajectory_fan(fan, f"{run_id}: {len(fan)} skills"))
    print(f"{len(records)} episodes ({len(fan)} skills x {len(inits)} inits) -> {out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args)
    if cfg.task != "tag":
        raise UsageError("finetune needs task = \"tag\"")
    modes = ["checkpoint", "random"] if args.init == "both" else [args.init]
    if "checkpoint" in modes and not args.checkpoint:
        raise UsageError("--init checkpoint needs --checkpoint (may contain {seed})")
    out = _out_dir(args)
    seeds = parse_seeds(args.seeds)
    curves: Dict[str, list] = {}
    summary: Dict[str, Dict] = {}
    window = cfg.finetune.final_window
    failed = []
    for mode in modes:
        def one(seed: int):
            pre = load_checkpoint(args.checkpoint.format(seed=seed)) if mode == "checkpoint" else None
            return finetune(cfg, seed, pre)
        try:
            results = _per_seed(seeds, one)
        except SeedFailures as err:
            results, failed = err.results, failed + [(mode, s) for s in err.failed]
        per_seed = {}
        for seed, res in results.items():
            write_json(out / mode / f"seed_{seed}" / "returns.json",
                       {"skill": res.skill, "selection": {str(k): v for k, v in res.selection.items()},
                        "returns": res.returns})
            curves[f"{mode}/{seed}"] = _smooth(res.returns, window)
            per_seed[str(seed)] = res.final_window_mean(window)
        summary[mode] = {"final_window_mean": per_seed,
                         "mean": float(np.mean(list(per_seed.values()))) if per_seed else None}
    write_json(out / "summary.json", {"final_window": window,
                                      "auxiliary": cfg.env.include_auxiliary, "modes": summary})
    svg.emit_svg(out / "reward_curves.svg",
                 svg.curves(curves, "tag finetuning", "episode", f"return ({window}-episode mean)"))
    for mode, row in summary.items():
        print(f"{mode:>10}: mean final-window return {row['mean']}")
    if failed:
        raise SeedFailures([s for _, s in failed], {})
    return 0


def _smooth(values: Sequence[float], window: int):
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append((i + 1, acc / min(i + 1, window)))
    return out


def cmd_analyze(args) -> int:
    records = []
    for path in args.csv:
        records.extend(read_trajectories(path))
    groups: Dict[str, list] = {}
    for rec in records:
        groups.setdefault(rec.run_id, []).append(rec)
    out = _out_dir(args)
    summary = {}
    for run_id, recs in sorted(groups.items()):
        recs.sort(key=lambda r: (r.skill, r.init_id))
        inits = {r.init_id for r in recs}
        n_inits = args.n_inits if args.n_inits else (16 if len(inits) == 16 else None)
        summary[run_id] = analysis.summarize(recs, n_inits)
        pts, labels, _ = analysis.trajectory_features(recs)
        svg.emit_svg(out / f"{run_id}_angles.svg",
                     svg.scatter(pts[:, :2], labels, f"{run_id}: two smallest angles",
                                 "angle 1 (deg)", "angle 2 (deg)"))
        svg.emit_svg(out / f"{run_id}_lengths.svg",
                     svg.scatter(pts[:, 2:], labels, f"{run_id}: two shortest paths",
                                 "length 1", "length 2"))
        if "endpoint_std" in summary[run_id]:
            stds = {int(k): v for k, v in summary[run_id]["endpoint_std"].items()}
            svg.emit_svg(out / f"{run_id}_endpoint_std.svg",
                         svg.skill_dots(stds, f"{run_id}: agent-1 endpoint std", "std"))
    write_json(out / "summary.json", summary)
    for run_id, row in summary.items():
        extra = f", mean endpoint std {row['mean_endpoint_std']:.4f}" if "mean_endpoint_std" in row else ""
        score = row["cluster_score"]
        print(f"{run_id}: {row['episodes']} episodes, cluster score "
              f"{'n/a' if score is None else f'{score:.4f}'}{extra}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masd", description="Multi-agent skill discovery experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds: bool = True):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. reward.beta=0")
        if seeds:
            sp.add_argument("--seeds", help="comma-separated seed list")
        sp.add_argument("--out", help="output directory (default $MASD_OUT or ./runs)")

    sp = sub.add_parser("xor", help="XOR game: train per seed and report exact MI")
    common(sp)
    sp.set_defaults(func=cmd_xor)

    sp = sub.add_parser("train", help="skill discovery on a particle task")
    common(sp)
    sp.add_argument("--resume", help="continue from a checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="noise-free rollouts of every active skill")
    common(sp, seeds=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--fixed-init", dest="fixed_init", action="store_true", default=True)
    sp.add_argument("--no-fixed-init", dest="fixed_init", action="store_false")
    sp.add_argument("--perturb", type=int, help="number of jittered copies of the fixed start")
    sp.add_argument("--grid", dest="grid", action="store_true", default=None,
                    help="16 agent-1 start offsets instead of jitter")
    sp.add_argument("--no-grid", dest="grid", action="store_false")
    sp.add_argument("--run-id")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("finetune", help="MADDPG on tag from pretrained or random weights")
    common(sp)
    sp.add_argument("--checkpoint", help="pretrained checkpoint path, may contain {seed}")
    sp.add_argument("--init", choices=["checkpoint", "random", "both"], default="both")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("analyze", help="angle/length/endpoint statistics from trajectory CSVs")
    sp.add_argument("csv", nargs="+")
    sp.add_argument("--n-inits", type=int, help="initial conditions per skill for endpoint std")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seeds", "x") is None and args.command in ("xor", "finetune") or \
            (args.command == "train" and not args.resume and args.seeds is None):
        print(f"masd {args.command}: --seeds is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"masd {args.command}: {err}", file=sys.stderr)
        return 2
    except CheckpointError as err:
        print(f"masd {args.command}: checkpoint: {err}", file=sys.stderr)
        return 1
    except SeedFailures as err:
        print(f"masd {args.command}: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"masd {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
