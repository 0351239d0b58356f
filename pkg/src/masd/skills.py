"""Skill space, global/local discriminators, pseudo-reward and the skill curriculum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .numerics import (
    AdamState,
    MlpSpec,
    Network,
    log_softmax,
    mlp_backward,
    mlp_forward,
    mlp_init,
)

LOG_FLOOR = float(np.log(1e-8))
CURRICULUM_THRESHOLD = -0.18

SkillCode = Union[int, np.ndarray]


@dataclass
class SkillSpace:
    kind: str = "discrete"
    k_max: int = 2
    active_k: int = 2
    dim: int = 2  # continuous only

    def __post_init__(self) -> None:
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown skill space kind {self.kind!r}")
        if self.kind == "discrete" and not 1 <= self.active_k <= self.k_max:
            raise ValueError(f"need 1 <= active_k <= k_max, got {self.active_k}, {self.k_max}")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def code_dim(self) -> int:
        return self.k_max if self.discrete else self.dim

    def mask(self) -> np.ndarray:
        m = np.zeros(self.k_max, dtype=bool)
        m[: self.active_k] = True
        return m

    def encode(self, z: SkillCode) -> np.ndarray:
        if self.discrete:
            v = np.zeros(self.k_max)
            v[int(z)] = 1.0
            return v
        return np.asarray(z, dtype=np.float64).reshape(self.dim)

    def encode_batch(self, zs: np.ndarray) -> np.ndarray:
        if self.discrete:
            return np.eye(self.k_max)[np.asarray(zs, dtype=np.int64).reshape(-1)]
        return np.asarray(zs, dtype=np.float64).reshape(-1, self.dim)


def sample_skill(space: SkillSpace, rng: np.random.Generator) -> SkillCode:
    if space.discrete:
        return int(rng.integers(0, space.active_k))
    return rng.uniform(-1.0, 1.0, size=space.dim)


@dataclass
class PseudoRewardConfig:
    beta: float = 1.0
    aggregation: str = "mean"

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.aggregation not in ("mean", "min"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def pseudo_reward(config: PseudoRewardConfig, global_lp: float, local_lps: Sequence[float]) -> float:
    local_lps = np.asarray(local_lps, dtype=np.float64).reshape(-1)
    if local_lps.size == 0:
        raise ValueError("pseudo_reward needs at least one local log-probability")
    if config.aggregation == "min":
        local = float(np.min(local_lps))
    else:
        local = float(np.sum(local_lps)) / local_lps.size
    return float(global_lp) - config.beta * local


def pseudo_reward_batch(config: PseudoRewardConfig, global_lp: np.ndarray, local_lps: np.ndarray) -> np.ndarray:
    """Vectorised over rows: ``global_lp`` (B,), ``local_lps`` (B, N)."""
    if config.aggregation == "min":
        local = np.min(local_lps, axis=1)
    else:
        local = np.sum(local_lps, axis=1) / local_lps.shape[1]
    return global_lp - config.beta * local


def _disc_spec(n_in: int, space: SkillSpace, hidden: Sequence[int]) -> MlpSpec:
    out = "softmax-logits" if space.discrete else "identity"
    return MlpSpec((n_in, *hidden, space.code_dim), "tanh", out)


@dataclass
class DiscriminatorSet:
    """One discriminator on the joint features plus one per agent on its own feature."""

    space: SkillSpace
    n_agents: int
    feature_dim: int
    global_net: Network
    local_nets: List[Network]
    loss_kind: str = "CE"

    @classmethod
    def create(cls, space: SkillSpace, n_agents: int, feature_dim: int, rng: np.random.Generator,
               hidden: Sequence[int] = (64, 64), lr: float = 3e-4, loss_kind: str | None = None
               ) -> "DiscriminatorSet":
        if loss_kind is None:
            loss_kind = "CE" if space.discrete else "L2"
        if space.discrete != (loss_kind == "CE"):
            raise ValueError(f"loss {loss_kind!r} does not fit a {space.kind} skill space")
        g = mlp_init(_disc_spec(n_agents * feature_dim, space, hidden), rng)
        locs = [mlp_init(_disc_spec(feature_dim, space, hidden), rng) for _ in range(n_agents)]
        return cls(space, n_agents, feature_dim,
                   Network(g, AdamState.for_params(g, lr)),
                   [Network(p, AdamState.for_params(p, lr)) for p in locs], loss_kind)

    def networks(self) -> List[Network]:
        return [self.global_net, *self.local_nets]

    # -- log-probabilities -------------------------------------------------

    def _logprobs(self, net: Network, x: np.ndarray, zs: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward(net.params, x)
        if self.space.discrete:
            zs = np.asarray(zs, dtype=np.int64).reshape(-1)
            if np.any(zs >= self.space.active_k) or np.any(zs < 0):
                raise ValueError("skill label outside the active skill set")
            lp = log_softmax(out, self.space.mask())[np.arange(len(zs)), zs]
            return np.maximum(lp, LOG_FLOOR)
        diff = out - self.space.encode_batch(zs)
        if self.loss_kind == "L1":
            return -np.sum(np.abs(diff), axis=1)
        return -np.sum(diff * diff, axis=1)

    def global_logprobs(self, joint_features: np.ndarray, zs: np.ndarray) -> np.ndarray:
        joint_features = np.asarray(joint_features, dtype=np.float64).reshape(-1, self.n_agents * self.feature_dim)
        return self._logprobs(self.global_net, joint_features, zs)

    def local_logprobs(self, agent_index: int, features: np.ndarray, zs: np.ndarray) -> np.ndarray:
        if not 0 <= agent_index < self.n_agents:
            raise IndexError(f"agent index {agent_index} outside [0, {self.n_agents})")
        features = np.asarray(features, dtype=np.float64).reshape(-1, self.feature_dim)
        return self._logprobs(self.local_nets[agent_index], features, zs)

    def global_logprob(self, joint_features: np.ndarray, z: SkillCode) -> float:
        zs = np.asarray([z]) if self.space.discrete else np.asarray(z, dtype=np.float64)[None, :]
        return float(self.global_logprobs(joint_features, zs)[0])

    def local_logprob(self, agent_index: int, feature: np.ndarray, z: SkillCode) -> float:
        zs = np.asarray([z]) if self.space.discrete else np.asarray(z, dtype=np.float64)[None, :]
        return float(self.local_logprobs(agent_index, feature, zs)[0])

    # -- training ----------------------------------------------------------

    def loss_and_grad(self, net: Network, x: np.ndarray, zs: np.ndarray):
        """Mean supervised loss on a batch and its parameter gradient."""
        out, cache = mlp_forward(net.params, x)
        b = out.shape[0]
        if self.space.discrete:
            zs = np.asarray(zs, dtype=np.int64).reshape(-1)
            logp = log_softmax(out, self.space.mask())
            loss = -float(np.mean(logp[np.arange(b), zs]))
            upstream = np.exp(logp)
            upstream[np.arange(b), zs] -= 1.0
            upstream /= b
        else:
            diff = out - self.space.encode_batch(zs)
            if self.loss_kind == "L1":
                loss = float(np.mean(np.sum(np.abs(diff), axis=1)))
                upstream = np.sign(diff) / b
            else:
                loss = float(np.mean(np.sum(diff * diff, axis=1)))
                upstream = 2.0 * diff / b
        grads, _ = mlp_backward(cache, upstream)
        return loss, grads

    def update(self, features: np.ndarray, zs: np.ndarray) -> List[float]:
        """One Adam step per discriminator on (next-state features, skill) pairs.

        ``features`` has shape (B, N, feature_dim). Returns [global, local_1..local_N] losses.
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3 or features.shape[0] == 0:
            raise ValueError("discriminator batch must be a non-empty (B, N, F) array")
        if features.shape[1:] != (self.n_agents, self.feature_dim):
            raise ValueError(f"batch feature shape {features.shape[1:]} != "
                             f"({self.n_agents}, {self.feature_dim})")
        if self.space.discrete and np.any(np.asarray(zs) >= self.space.active_k):
            raise ValueError("batch contains skills outside the active skill set")
        losses = []
        joint = features.reshape(features.shape[0], -1)
        loss, grads = self.loss_and_grad(self.global_net, joint, zs)
        self.global_net.apply(grads)
        losses.append(loss)
        for i, net in enumerate(self.local_nets):
            loss, grads = self.loss_and_grad(net, features[:, i, :], zs)
            net.apply(grads)
            losses.append(loss)
        return losses


def discriminator_update(disc: DiscriminatorSet, features: np.ndarray, zs: np.ndarray) -> List[float]:
    return disc.update(features, zs)


@dataclass
class Curriculum:
    """Grow the active skill set once the global discriminator is confident enough.

    Each call to :meth:`observe` feeds one evaluation of the mean global
    log-probability. After ``window`` consecutive evaluations at or above
    ``threshold`` one more skill is activated and the streak restarts.
    """

    threshold: float = CURRICULUM_THRESHOLD
    window: int = 10
    streak: int = field(default=0)

    def observe(self, space: SkillSpace, running_mean_global_lp: float) -> bool:
        if not space.discrete:
            raise ValueError("the curriculum only applies to discrete skill spaces")
        if running_mean_global_lp >= self.threshold:
            self.streak += 1
        else:
            self.streak = 0
        if self.streak >= self.window and space.active_k < space.k_max:
            space.active_k += 1
            self.streak = 0
            return True
        return False


def curriculum_maybe_expand(space: SkillSpace, running_mean_global_lp: float,
                            curriculum: Curriculum | None = None) -> int:
    """Functional wrapper: with no curriculum object the window is a single evaluation."""
    curriculum = curriculum if curriculum is not None else Curriculum(window=1)
    curriculum.observe(space, running_mean_global_lp)
    return space.active_k
