"""Experiment orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import tomli

from .analysis import TrajectoryRecord
from .envs import make_env
from .envs.particle import perturb_snapshot
from .io.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .io.config import ExperimentConfig, dump_toml, load_config
from .io.records import append_metrics
from .maddpg import RewardMode, Trainer, run_episode
from .numerics import make_rng
from .skills import Curriculum, PseudoRewardConfig, SkillSpace

log = logging.getLogger(__name__)

GRID_OFFSETS = (-0.6, -0.2, 0.2, 0.6)


def build_env(cfg: ExperimentConfig, **env_overrides):
    if cfg.task == "xor":
        return make_env("xor")
    e = cfg.env
    kw = dict(episode_length=e.episode_length, include_auxiliary=e.include_auxiliary,
              shared_hit=e.shared_hit, hit_reward=e.hit_reward, aux_coef=e.aux_coef)
    kw.update(env_overrides)
    return make_env(cfg.task, **kw)


def build_trainer(cfg: ExperimentConfig, seed: int, mode: Optional[RewardMode] = None,
                  **env_overrides) -> Trainer:
    env = build_env(cfg, **env_overrides)
    s = cfg.skills
    space = SkillSpace(s.kind, s.k_max, s.initial_k if s.kind == "discrete" else s.k_max, s.dim)
    if mode is None:
        coef = cfg.train.signal_coef if cfg.task == "rendezvous" else 0.0
        mode = RewardMode(pseudo=True, extrinsic_coef=coef)
    curriculum = None
    if cfg.curriculum.enabled and s.kind == "discrete":
        curriculum = Curriculum(cfg.curriculum.threshold, cfg.curriculum.window)
    return Trainer(env, cfg.train, space, PseudoRewardConfig(cfg.reward.beta, cfg.reward.aggregation),
                   seed, curriculum=curriculum, curriculum_interval=cfg.curriculum.interval,
                   mode=mode, loss_kind=cfg.reward.loss_kind)


def make_checkpoint(trainer: Trainer, cfg: ExperimentConfig, seed: int) -> Checkpoint:
    return Checkpoint(trainer.state_arrays(),
                      {"task": cfg.task, "seed": seed, "config": dump_toml(cfg)})


def config_from_checkpoint(ckpt: Checkpoint) -> ExperimentConfig:
    return load_config(raw=tomli.loads(ckpt.meta["config"]))


def restore(trainer: Trainer, arrays: Dict[str, np.ndarray]) -> None:
    try:
        trainer.load_state_arrays(arrays)
    except ValueError as err:
        raise CheckpointError(str(err)) from None


def trainer_from_checkpoint(ckpt: Checkpoint, cfg: Optional[ExperimentConfig] = None) -> Trainer:
    cfg = cfg or config_from_checkpoint(ckpt)
    trainer = build_trainer(cfg, int(ckpt.meta.get("seed", 0)))
    restore(trainer, ckpt.arrays)
    return trainer


# --------------------------------------------------------------------------
# training


@dataclass
class RunResult:
    seed: int
    out_dir: Path
    metrics_path: Path
    checkpoint_path: Path
    last_metrics: Dict


def run_training(cfg: ExperimentConfig, seed: int, out_dir: str | Path,
                 resume: Optional[str | Path] = None, episodes: Optional[int] = None) -> RunResult:
    """Train one seed; writes metrics.jsonl, checkpoint.ckpt and config.toml under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_toml(cfg))
    trainer = build_trainer(cfg, seed)
    metrics_path = out / "metrics.jsonl"
    ckpt_path = out / "checkpoint.ckpt"
    if resume is not None:
        restore(trainer, load_checkpoint(resume).arrays)
        mode = "a"
    else:
        mode = "w"
    last: Dict = {}

    def on_metrics(rec: Dict) -> None:
        nonlocal last
        last = rec
        append_metrics(fh, rec)

    def on_checkpoint(t: Trainer) -> None:
        save_checkpoint(out / f"checkpoint_ep{t.episode}.ckpt", make_checkpoint(t, cfg, seed))

    with open(metrics_path, mode) as fh:
        trainer.run(episodes, on_metrics=on_metrics, on_checkpoint=on_checkpoint)
    save_checkpoint(ckpt_path, make_checkpoint(trainer, cfg, seed))
    return RunResult(seed, out, metrics_path, ckpt_path, last)


# --------------------------------------------------------------------------
# evaluation rollouts


def fixed_snapshot(cfg: ExperimentConfig) -> Dict:
    env = build_env(cfg)
    return env.random_snapshot(make_rng(cfg.eval.fixed_init_seed))


def initial_conditions(cfg: ExperimentConfig, perturb: int = 0, fixed: bool = True,
                       grid: bool = False) -> List[Tuple[int, Dict]]:
    """(init_id, snapshot) pairs: the fixed start, P jittered copies, or the 4x4 agent-0 grid."""
    base = fixed_snapshot(cfg)
    inits: List[Tuple[int, Dict]] = []
    if grid:
        k = 0
        for gy in GRID_OFFSETS:
            for gx in GRID_OFFSETS:
                snap = dict(base)
                snap["agent0"] = (gx, gy)
                inits.append((k, snap))
                k += 1
        return inits
    if fixed:
        inits.append((0, base))
    rng = make_rng(cfg.eval.fixed_init_seed + 1)
    for j in range(perturb):
        inits.append((j + 1, perturb_snapshot(base, rng, cfg.eval.perturb_scale)))
    return inits


def rollout_skills(trainer: Trainer, cfg: ExperimentConfig, inits: Sequence[Tuple[int, Dict]],
                   run_id: str, seed: int, skills: Optional[Sequence[int]] = None) -> List[TrajectoryRecord]:
    """Noise-free episodes for every (active skill, initial condition)."""
    env = trainer.env
    skills = list(range(trainer.space.active_k)) if skills is None else list(skills)
    records = []
    for init_id, snap in inits:
        for z in skills:
            env_rng = make_rng(cfg.eval.fixed_init_seed + 1000 + init_id)
            rec = run_episode(env, trainer.agents, None, trainer.space, trainer.reward_cfg,
                              env_rng, make_rng(0), 0.0, RewardMode(pseudo=False),
                              fixed_init=snap, z=z)
            records.append(TrajectoryRecord(run_id, z, np.transpose(rec.positions, (1, 0, 2)),
                                            init_id, seed))
    return records


# --------------------------------------------------------------------------
# finetuning on tag


@dataclass
class FinetuneResult:
    init: str
    seed: int
    skill: int
    returns: List[float]
    selection: Dict[int, float]

    def final_window_mean(self, window: int) -> float:
        tail = self.returns[-window:]
        return float(np.mean(tail)) if tail else float("nan")


def select_skill(trainer: Trainer, episodes: int, seed: int) -> Tuple[int, Dict[int, float]]:
    """Mean extrinsic return of every active skill; the argmax wins (ties -> lowest index)."""
    scores = {}
    for z in range(trainer.space.active_k):
        env_rng = make_rng(seed + 7919 * (z + 1))
        total = 0.0
        for _ in range(episodes):
            rec = run_episode(trainer.env, trainer.agents, None, trainer.space, trainer.reward_cfg,
                              env_rng, make_rng(0), 0.0, RewardMode(pseudo=False, extrinsic_coef=1.0),
                              z=z)
            total += float(rec.extrinsic.sum())
        scores[z] = total / episodes
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


def finetune(cfg: ExperimentConfig, seed: int, pretrained: Optional[Checkpoint]) -> FinetuneResult:
    """MADDPG on tag's extrinsic reward from a MASD checkpoint or from scratch.

    Both variants share the environment and exploration streams for a given
    seed. Discriminators are neither used nor trained.
    """
    if cfg.task != "tag":
        raise ValueError("finetuning is defined for the tag task")
    train_cfg = cfg.train.model_copy(update={"episodes": cfg.finetune.episodes})
    cfg = cfg.model_copy(update={"train": train_cfg})
    trainer = build_trainer(cfg, seed, mode=RewardMode(pseudo=False, extrinsic_coef=1.0))
    trainer.train_discriminators = False
    trainer.curriculum = None
    skill, selection = 0, {}
    if pretrained is not None:
        src = pretrained.arrays
        k_max = int(src["skills/k_max"][0])
        if k_max != trainer.space.k_max:
            raise CheckpointError(f"checkpoint k_max {k_max} != configured k_max {trainer.space.k_max}")
        for i in range(trainer.env.n_agents):
            for prefix in ("actor", "actor_target") + (("critic", "critic_target")
                                                        if cfg.finetune.reuse_critics else ()):
                key = f"{prefix}/{i}/params"
                if key not in src:
                    raise CheckpointError(f"checkpoint lacks {key}")
                current = (trainer.agents.actors[i].params if prefix == "actor" else
                           trainer.agents.actor_targets[i] if prefix == "actor_target" else
                           trainer.agents.critics[i].params if prefix == "critic" else
                           trainer.agents.critic_targets[i])
                if src[key].shape != current.flat.shape:
                    raise CheckpointError(f"checkpoint {key} has shape {src[key].shape}, "
                                     f"tag networks need {current.flat.shape}")
                current.flat[...] = src[key]
        trainer.space.active_k = int(src["skills/active_k"][0])
        skill, selection = select_skill(trainer, cfg.finetune.selection_episodes, seed)
    trainer.fixed_skill = skill
    returns: List[float] = []
    trainer.episode_hook = lambda rec: returns.append(float(rec.extrinsic.sum()))
    trainer.run()
    return FinetuneResult("masd" if pretrained is not None else "random", seed, skill, returns,
                          selection)


def write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
