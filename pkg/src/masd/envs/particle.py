"""Continuous 2D particle world hosting spread, rendezvous and tag.

Agents are double integrators in the square [-1, 1]^2 driven by 2D forces in
[-1, 1]^2. Observation layout for agent i (all tasks)::

    own position (2) | own velocity (2) | landmarks relative (2 per landmark)
    | other agents relative (2 per agent) | prey relative (2) + prey velocity (2)

The last block only exists for tag. The feature used by discriminators is the
first four entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .base import StepResult

FEATURE_DIM = 4


@dataclass(frozen=True)
class ParticleConfig:
    task: str = "spread"
    n_agents: int = 3
    n_landmarks: Optional[int] = None  # defaults: 3 for spread, 0 otherwise
    dt: float = 0.1
    damping: float = 0.75
    accel: float = 5.0
    max_speed: float = 1.0
    prey_accel: float = 7.0
    prey_max_speed: float = 1.3
    agent_radius: float = 0.075
    prey_radius: float = 0.05
    episode_length: int = 25
    hit_reward: float = 10.0
    aux_coef: float = 0.1
    include_auxiliary: bool = True
    shared_hit: bool = True
    prey_hold: int = 5
    prey_flee: float = 1.0
    weak_coef: float = 0.1

    def __post_init__(self) -> None:
        if self.task not in ("spread", "rendezvous", "tag"):
            raise ValueError(f"unknown particle task {self.task!r}")
        if self.n_landmarks is None:
            object.__setattr__(self, "n_landmarks", 3 if self.task == "spread" else 0)
        if self.task == "tag" and not self.prey_max_speed > self.max_speed:
            raise ValueError("prey must be faster than the predators")


@dataclass
class ParticleState:
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    landmark_pos: np.ndarray
    prey_pos: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prey_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prey_heading: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prey_hold_left: int = 0
    step: int = 0

    def copy(self) -> "ParticleState":
        return ParticleState(self.agent_pos.copy(), self.agent_vel.copy(), self.landmark_pos.copy(),
                             self.prey_pos.copy(), self.prey_vel.copy(), self.prey_heading.copy(),
                             self.prey_hold_left, self.step)


def snapshot_labels(config: ParticleConfig) -> List[str]:
    labels = [f"agent{i}" for i in range(config.n_agents)]
    labels += [f"landmark{j}" for j in range(config.n_landmarks)]
    if config.task == "tag":
        labels.append("prey")
    return labels


def state_to_snapshot(config: ParticleConfig, state: ParticleState) -> Dict[str, Tuple[float, float]]:
    snap = {}
    for i in range(config.n_agents):
        snap[f"agent{i}"] = (float(state.agent_pos[i, 0]), float(state.agent_pos[i, 1]))
    for j in range(config.n_landmarks):
        snap[f"landmark{j}"] = (float(state.landmark_pos[j, 0]), float(state.landmark_pos[j, 1]))
    if config.task == "tag":
        snap["prey"] = (float(state.prey_pos[0]), float(state.prey_pos[1]))
    return snap


def perturb_snapshot(snapshot: Dict[str, Tuple[float, float]], rng: np.random.Generator,
                     scale: float = 0.1, world_width: float = 2.0) -> Dict[str, Tuple[float, float]]:
    """Jitter every agent start by U[-scale, scale] * world width per coordinate."""
    out = {}
    for label, (x, y) in snapshot.items():
        if label.startswith("agent"):
            dx, dy = rng.uniform(-scale, scale, size=2) * world_width
            x, y = float(np.clip(x + dx, -1.0, 1.0)), float(np.clip(y + dy, -1.0, 1.0))
        out[label] = (x, y)
    return out


def rendezvous_signal(state: ParticleState, coef: float = 0.1) -> float:
    d2 = np.sum(state.agent_pos ** 2, axis=1)
    return float(-coef * np.max(d2))


def tag_reward(state: ParticleState, config: ParticleConfig,
               include_auxiliary: Optional[bool] = None) -> np.ndarray:
    if include_auxiliary is None:
        include_auxiliary = config.include_auxiliary
    dist = np.linalg.norm(state.agent_pos - state.prey_pos[None, :], axis=1)
    hits = dist < (config.agent_radius + config.prey_radius)
    if config.shared_hit:
        reward = np.full(config.n_agents, config.hit_reward if hits.any() else 0.0)
    else:
        reward = np.where(hits, config.hit_reward, 0.0)
    if include_auxiliary:
        reward = reward - config.aux_coef * dist
    return reward


def prey_policy(state: ParticleState, config: ParticleConfig, rng: np.random.Generator) -> np.ndarray:
    """Random heading held for ``prey_hold`` steps, biased away from the nearest predator.

    Mutates the heading fields of ``state``.
    """
    if state.prey_hold_left <= 0:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        state.prey_heading = np.array([np.cos(theta), np.sin(theta)])
        state.prey_hold_left = config.prey_hold
    state.prey_hold_left -= 1
    away = state.prey_pos[None, :] - state.agent_pos
    d = np.linalg.norm(away, axis=1)
    k = int(np.argmin(d))
    flee = away[k] / d[k] if d[k] > 1e-12 else np.zeros(2)
    direction = state.prey_heading + config.prey_flee * flee
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        return np.zeros(2)
    return direction / norm


def _integrate(pos: np.ndarray, vel: np.ndarray, force: np.ndarray, accel: float,
               max_speed: float, config: ParticleConfig) -> Tuple[np.ndarray, np.ndarray]:
    vel = config.damping * vel + accel * force * config.dt
    speed = np.linalg.norm(vel, axis=-1, keepdims=True)
    vel = np.where(speed > max_speed, vel * (max_speed / np.maximum(speed, 1e-300)), vel)
    pos = pos + vel * config.dt
    clipped = np.clip(pos, -1.0, 1.0)
    vel = np.where(clipped != pos, 0.0, vel)
    return clipped, vel


def _push_apart(a: np.ndarray, b: np.ndarray, min_dist: float) -> None:
    delta = b - a
    d = float(np.linalg.norm(delta))
    if d >= min_dist:
        return
    if d < 1e-12:
        delta, d = np.array([1.0, 0.0]), 1.0
    shift = 0.5 * (min_dist - d) * delta / d
    a -= shift
    b += shift


class ParticleEnv:
    discrete_actions = False
    action_dim = 2
    feature_dim = FEATURE_DIM

    def __init__(self, config: ParticleConfig) -> None:
        self.config = config
        self.task = config.task
        self.n_agents = config.n_agents
        self.episode_length = config.episode_length
        obs_dim = 4 + 2 * config.n_landmarks + 2 * (config.n_agents - 1)
        if config.task == "tag":
            obs_dim += 4
        self.obs_dims = tuple([obs_dim] * config.n_agents)
        self.state: Optional[ParticleState] = None

    def with_config(self, **changes) -> "ParticleEnv":
        return ParticleEnv(replace(self.config, **changes))

    def random_snapshot(self, rng: np.random.Generator) -> Dict[str, Tuple[float, float]]:
        labels = snapshot_labels(self.config)
        coords = rng.uniform(-1.0, 1.0, size=(len(labels), 2))
        return {lab: (float(c[0]), float(c[1])) for lab, c in zip(labels, coords)}

    def reset(self, rng: np.random.Generator, fixed_init: Optional[Dict] = None) -> List[np.ndarray]:
        cfg = self.config
        snap = self.random_snapshot(rng) if fixed_init is None else fixed_init
        expected = snapshot_labels(cfg)
        if sorted(snap) != sorted(expected):
            raise ValueError(f"snapshot labels {sorted(snap)} do not match task {cfg.task!r}: {expected}")
        agent_pos = np.array([snap[f"agent{i}"] for i in range(cfg.n_agents)], dtype=np.float64)
        landmarks = np.array([snap[f"landmark{j}"] for j in range(cfg.n_landmarks)],
                             dtype=np.float64).reshape(cfg.n_landmarks, 2)
        state = ParticleState(agent_pos, np.zeros((cfg.n_agents, 2)), landmarks)
        if cfg.task == "tag":
            state.prey_pos = np.array(snap["prey"], dtype=np.float64)
        self.state = state
        return self.observe(state)

    def observe(self, state: Optional[ParticleState] = None) -> List[np.ndarray]:
        s = self.state if state is None else state
        cfg = self.config
        obs = []
        for i in range(cfg.n_agents):
            parts = [s.agent_pos[i], s.agent_vel[i]]
            parts.extend(s.landmark_pos[j] - s.agent_pos[i] for j in range(cfg.n_landmarks))
            parts.extend(s.agent_pos[k] - s.agent_pos[i] for k in range(cfg.n_agents) if k != i)
            if cfg.task == "tag":
                parts.append(s.prey_pos - s.agent_pos[i])
                parts.append(s.prey_vel)
            obs.append(np.concatenate(parts))
        return obs

    def feature(self, i: int, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs[:FEATURE_DIM], dtype=np.float64)

    def positions(self) -> np.ndarray:
        return self.state.agent_pos.copy()

    def step(self, actions, rng: Optional[np.random.Generator] = None) -> StepResult:
        cfg = self.config
        s = self.state
        force = np.asarray(actions, dtype=np.float64).reshape(cfg.n_agents, 2)
        if not np.all(np.isfinite(force)):
            raise ValueError("non-finite action")
        force = np.clip(force, -1.0, 1.0)
        s.agent_pos, s.agent_vel = _integrate(s.agent_pos, s.agent_vel, force, cfg.accel, cfg.max_speed, cfg)
        info: Dict[str, float] = {}
        if cfg.task == "tag":
            if rng is None:
                raise ValueError("tag needs an rng for the prey")
            prey_force = prey_policy(s, cfg, rng)
            s.prey_pos, s.prey_vel = _integrate(s.prey_pos, s.prey_vel, prey_force, cfg.prey_accel,
                                                cfg.prey_max_speed, cfg)
            reward = tag_reward(s, cfg)
            dist = np.linalg.norm(s.agent_pos - s.prey_pos[None, :], axis=1)
            info["hit"] = float(np.any(dist < cfg.agent_radius + cfg.prey_radius))
            self._resolve_collisions(s)
        elif cfg.task == "rendezvous":
            signal = rendezvous_signal(s, cfg.weak_coef)
            reward = np.full(cfg.n_agents, signal)
        else:
            reward = np.zeros(cfg.n_agents)
        s.step += 1
        return StepResult(self.observe(s), reward, s.step >= cfg.episode_length, info)

    def _resolve_collisions(self, s: ParticleState) -> None:
        cfg = self.config
        for i in range(cfg.n_agents):
            for k in range(i + 1, cfg.n_agents):
                _push_apart(s.agent_pos[i], s.agent_pos[k], 2 * cfg.agent_radius)
            _push_apart(s.agent_pos[i], s.prey_pos, cfg.agent_radius + cfg.prey_radius)
        np.clip(s.agent_pos, -1.0, 1.0, out=s.agent_pos)
        np.clip(s.prey_pos, -1.0, 1.0, out=s.prey_pos)
