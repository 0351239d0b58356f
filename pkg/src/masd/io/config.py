"""Experiment configuration.

Config files are TOML. A minimal file names only the task; everything else
falls back to per-task defaults::

    task = "spread"

    [skills]
    k_max = 8

    [reward]
    beta = 0.5

    [train]
    episodes = 3000

Sections: ``skills``, ``reward``, ``curriculum``, ``train``, ``env``,
``eval``, ``finetune``. Unknown keys are rejected. Command-line overrides use
dotted keys (``reward.beta=0``) whose values are parsed as TOML literals,
falling back to a bare string.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..maddpg import TrainConfig
from ..skills import CURRICULUM_THRESHOLD


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SkillsConfig(_Strict):
    kind: Literal["discrete", "continuous"] = "discrete"
    k_max: int = Field(2, ge=1, le=30)
    initial_k: int = Field(2, ge=1)
    dim: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SkillsConfig":
        if self.initial_k > self.k_max:
            raise ValueError("initial_k must not exceed k_max")
        return self


class RewardConfig(_Strict):
    beta: float = Field(1.0, ge=0.0)
    aggregation: Literal["mean", "min"] = "mean"
    loss_kind: Optional[Literal["CE", "L1", "L2"]] = None


class CurriculumConfig(_Strict):
    enabled: bool = False
    threshold: float = CURRICULUM_THRESHOLD
    window: int = Field(10, ge=1)
    interval: int = Field(10, ge=1)


class EnvConfig(_Strict):
    episode_length: int = Field(25, ge=1)
    include_auxiliary: bool = True
    shared_hit: bool = True
    hit_reward: float = 10.0
    aux_coef: float = Field(0.1, ge=0.0)


class EvalConfig(_Strict):
    perturb: int = Field(30, ge=0)
    perturb_scale: float = Field(0.1, ge=0.0)
    fixed_init_seed: int = 20200
    grid: bool = False


class FinetuneConfig(_Strict):
    episodes: int = Field(1000, ge=0)
    selection_episodes: int = Field(5, ge=1)
    final_window: int = Field(100, ge=1)
    reuse_critics: bool = False


class ExperimentConfig(_Strict):
    task: Literal["xor", "spread", "rendezvous", "tag"]
    skills: SkillsConfig = Field(default_factory=SkillsConfig)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if self.task == "xor" and (self.skills.kind != "discrete"):
            raise ValueError("the XOR game only supports discrete skills")
        if self.skills.kind == "discrete" and self.reward.loss_kind not in (None, "CE"):
            raise ValueError("discrete skills need loss_kind CE")
        if self.skills.kind == "continuous" and self.reward.loss_kind == "CE":
            raise ValueError("continuous skills need loss_kind L1 or L2")
        return self


_XOR_NET = [32, 32]

TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "xor": {
        "skills": {"k_max": 2, "initial_k": 2},
        "reward": {"beta": 1.5, "aggregation": "min"},
        "env": {"episode_length": 1},
        "train": {
            "episodes": 15000, "warmup": 500, "update_every": 1, "updates_per_round": 1,
            "batch_size": 64, "disc_batch_size": 64, "replay_capacity": 5000,
            "disc_capacity": 5000, "actor_lr": 3e-3, "critic_lr": 3e-3, "disc_lr": 3e-3,
            "noise_start": 0.5, "noise_end": 0.1, "eval_interval": 200,
            "actor_hidden": _XOR_NET, "critic_hidden": _XOR_NET, "disc_hidden": _XOR_NET,
        },
    },
    "spread": {
        "skills": {"k_max": 30, "initial_k": 3},
        "reward": {"beta": 0.5, "aggregation": "mean"},
        "curriculum": {"enabled": True},
        "train": {"episodes": 10000},
    },
    "rendezvous": {
        "skills": {"k_max": 8, "initial_k": 3},
        "reward": {"beta": 1.0, "aggregation": "mean"},
        "curriculum": {"enabled": True},
        "eval": {"grid": True},
        "train": {"episodes": 3000},
    },
    "tag": {
        "skills": {"k_max": 8, "initial_k": 3},
        "reward": {"beta": 0.5, "aggregation": "mean"},
        "curriculum": {"enabled": True},
        "train": {"episodes": 3000},
    },
}


def _merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_value(text: str) -> Any:
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = parse_value(value.strip())
    return raw


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def build_config(raw: Dict[str, Any]) -> ExperimentConfig:
    task = raw.get("task")
    if task not in TASK_DEFAULTS:
        raise ConfigError(f"task: must be one of {sorted(TASK_DEFAULTS)}, got {task!r}")
    merged = _merge(TASK_DEFAULTS[task], raw)
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path: str | Path | None = None, overrides: Iterable[str] = (),
                raw: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    data: Dict[str, Any] = {} if raw is None else copy.deepcopy(raw)
    if path is not None:
        try:
            data = _merge(tomli.loads(Path(path).read_text()), data)
        except tomli.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    return build_config(apply_overrides(data, overrides))


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")


def dump_toml(cfg: ExperimentConfig) -> str:
    """Render a config as TOML that :func:`load_config` reads back to an equal object."""
    data = config_to_dict(cfg)
    lines: List[str] = []

    def lit(v: Any) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(lit(x) for x in v) + "]"
        return str(v)

    for k, v in data.items():
        if not isinstance(v, dict) and v is not None:
            lines.append(f"{k} = {lit(v)}")
    for k, v in data.items():
        if isinstance(v, dict):
            lines.append(f"\n[{k}]")
            for kk, vv in v.items():
                if vv is not None:
                    lines.append(f"{kk} = {lit(vv)}")
    return "\n".join(lines) + "\n"
