"""MADDPG with skill-conditioned actors and MASD pseudo-rewards.

Actors see only their own observation plus the skill encoding. Critics see
every observation, every action and the skill encoding. Rewards during skill
discovery come from the discriminators (see :mod:`masd.skills`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import analysis
from .numerics import (
    AdamState,
    MlpParams,
    MlpSpec,
    Network,
    make_rng,
    mlp_backward,
    mlp_forward,
    mlp_init,
    soft_update,
)
from .skills import (
    Curriculum,
    DiscriminatorSet,
    PseudoRewardConfig,
    SkillSpace,
    pseudo_reward_batch,
    sample_skill,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(0.95, gt=0.0, lt=1.0)
    tau: float = Field(0.01, gt=0.0, le=1.0)
    actor_lr: float = Field(1e-3, gt=0.0)
    critic_lr: float = Field(1e-3, gt=0.0)
    disc_lr: float = Field(3e-4, gt=0.0)
    batch_size: int = Field(256, ge=1)
    disc_batch_size: int = Field(256, ge=1)
    replay_capacity: int = Field(100_000, ge=1)
    disc_capacity: int = Field(100_000, ge=1)
    noise_start: float = Field(0.3, ge=0.0)
    noise_end: float = Field(0.05, ge=0.0)
    noise_decay_episodes: Optional[int] = Field(None, ge=1)
    episodes: int = Field(3000, ge=0)
    warmup: int = Field(1000, ge=0)
    update_every: int = Field(1, ge=1)
    updates_per_round: int = Field(4, ge=0)
    disc_updates_per_round: int = Field(1, ge=0)
    eval_interval: int = Field(50, ge=1)
    checkpoint_interval: int = Field(0, ge=0)
    actor_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    critic_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    disc_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    recompute_reward: bool = False
    signal_coef: float = 1.0
    xor_policy: str = Field("maddpg", pattern="^(maddpg|tabular)$")
    logit_noise_scale: float = Field(4.0, ge=0.0)

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        for name in ("actor_hidden", "critic_hidden", "disc_hidden"):
            if not getattr(self, name) or min(getattr(self, name)) < 1:
                raise ValueError(f"{name} must list positive layer widths")
        return self

    def noise_at(self, episode: int) -> float:
        horizon = self.noise_decay_episodes or max(self.episodes, 1)
        frac = max(0.0, 1.0 - episode / horizon)
        return self.noise_end + (self.noise_start - self.noise_end) * frac


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# replay memories


class Replay:
    """Fixed-capacity ring buffer over named numpy fields, FIFO eviction."""

    def __init__(self, capacity: int, fields: Dict[str, Tuple[int, ...]]):
        self.capacity = capacity
        self.data = {k: np.zeros((capacity, *shape)) for k, shape in fields.items()}
        self.size = 0
        self.next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, **values) -> None:
        for k, buf in self.data.items():
            buf[self.next] = values[k]
        self.next = (self.next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_many(self, **values) -> None:
        n = len(next(iter(values.values())))
        for j in range(n):
            self.add(**{k: v[j] for k, v in values.items()})

    def sample(self, rng: np.random.Generator, batch: int) -> Dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay")
        idx = rng.integers(0, self.size, size=batch)
        return {k: v[idx] for k, v in self.data.items()}

    def ordered(self) -> Dict[str, np.ndarray]:
        """Contents oldest-first."""
        if self.size < self.capacity:
            return {k: v[: self.size].copy() for k, v in self.data.items()}
        order = np.r_[self.next:self.capacity, 0:self.next]
        return {k: v[order].copy() for k, v in self.data.items()}


def make_rl_replay(capacity: int, env, code_dim: int) -> Replay:
    n = env.n_agents
    return Replay(capacity, {
        "obs": (sum(env.obs_dims),),
        "act": (n * env.action_dim,),
        "z": (code_dim,),
        "rew": (n,),
        "ext": (n,),
        "next_obs": (sum(env.obs_dims),),
        "done": (),
    })


def make_disc_replay(capacity: int, env, space: SkillSpace) -> Replay:
    return Replay(capacity, {
        "feat": (env.n_agents, env.feature_dim),
        "z": (1,) if space.discrete else (space.dim,),
    })


# --------------------------------------------------------------------------
# losses with exact gradients (exercised directly by the gradient checks)


def critic_loss_and_grad(critic: MlpParams, inputs: np.ndarray, targets: np.ndarray):
    q, cache = mlp_forward(critic, inputs)
    diff = q[:, 0] - targets
    loss = float(np.mean(diff * diff))
    grads, _ = mlp_backward(cache, (2.0 * diff / len(diff))[:, None])
    return loss, grads


def actor_loss_and_grad(actor: MlpParams, critic: MlpParams, actor_in: np.ndarray,
                        critic_prefix: np.ndarray, critic_suffix: np.ndarray,
                        discrete: bool):
    """Deterministic policy gradient loss ``-mean Q(..., pi(actor_in), ...)``.

    The critic input is ``[critic_prefix | action | critic_suffix]``; only the
    actor's parameters receive gradients.
    """
    out, a_cache = mlp_forward(actor, actor_in)
    action = sigmoid(out) if discrete else out
    critic_in = np.concatenate([critic_prefix, action, critic_suffix], axis=1)
    q, c_cache = mlp_forward(critic, critic_in)
    b = q.shape[0]
    loss = -float(np.mean(q))
    _, dx = mlp_backward(c_cache, np.full_like(q, -1.0 / b))
    lo = critic_prefix.shape[1]
    da = dx[:, lo:lo + action.shape[1]]
    if discrete:
        da = da * action * (1.0 - action)
    grads, _ = mlp_backward(a_cache, da)
    return loss, grads


# --------------------------------------------------------------------------
# agents


@dataclass
class Agents:
    """Per-agent actors and centralized critics with their target copies."""

    env_obs_dims: Tuple[int, ...]
    action_dim: int
    code_dim: int
    discrete: bool
    actors: List[Network]
    critics: List[Network]
    actor_targets: List[MlpParams]
    critic_targets: List[MlpParams]
    logit_noise_scale: float = 4.0

    @classmethod
    def create(cls, env, code_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> "Agents":
        n = env.n_agents
        discrete = bool(env.discrete_actions)
        out_act = "identity" if discrete else "tanh"
        critic_in = sum(env.obs_dims) + n * env.action_dim + code_dim
        actors, critics = [], []
        for i in range(n):
            a = mlp_init(MlpSpec((env.obs_dims[i] + code_dim, *cfg.actor_hidden, env.action_dim),
                                 "relu", out_act), rng)
            c = mlp_init(MlpSpec((critic_in, *cfg.critic_hidden, 1), "relu", "identity"), rng)
            actors.append(Network(a, AdamState.for_params(a, cfg.actor_lr)))
            critics.append(Network(c, AdamState.for_params(c, cfg.critic_lr)))
        return cls(tuple(env.obs_dims), env.action_dim, code_dim, discrete, actors, critics,
                   [a.params.copy() for a in actors], [c.params.copy() for c in critics],
                   cfg.logit_noise_scale)

    @property
    def n_agents(self) -> int:
        return len(self.actors)

    def obs_slices(self) -> List[slice]:
        out, lo = [], 0
        for d in self.env_obs_dims:
            out.append(slice(lo, lo + d))
            lo += d
        return out

    def policy(self, i: int, obs: np.ndarray, zenc: np.ndarray, target: bool = False) -> np.ndarray:
        """Noise-free action(s). For binary actions this is P(u=1)."""
        params = self.actor_targets[i] if target else self.actors[i].params
        obs = np.atleast_2d(obs)
        if obs.shape[1] != self.env_obs_dims[i]:
            raise ValueError(f"agent {i} expects its own {self.env_obs_dims[i]}-dim observation, "
                             f"got width {obs.shape[1]}")
        zenc = np.broadcast_to(np.atleast_2d(zenc), (obs.shape[0], self.code_dim))
        out, _ = mlp_forward(params, np.concatenate([obs, zenc], axis=1))
        return sigmoid(out) if self.discrete else out

    def act(self, i: int, obs: np.ndarray, zenc: np.ndarray, noise: float,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (env action, action stored for the critic)."""
        if self.discrete:
            logit = mlp_forward(self.actors[i].params,
                                np.concatenate([np.asarray(obs).reshape(-1), zenc])[None, :])[0][0]
            if noise > 0:
                logit = logit + noise * self.logit_noise_scale * rng.standard_normal(logit.shape)
            p = sigmoid(logit)
            u = (rng.random(p.shape) < p).astype(np.int64)
            return u, p
        a = self.policy(i, obs, zenc)[0]
        a = np.clip(a + noise * rng.standard_normal(a.shape), -1.0, 1.0) if noise > 0 else a
        return a, a

    def target_actions(self, next_obs: np.ndarray, zenc: np.ndarray) -> np.ndarray:
        return np.concatenate([self.policy(i, next_obs[:, s], zenc, target=True)
                               for i, s in enumerate(self.obs_slices())], axis=1)

    def critic_update(self, batch: Dict[str, np.ndarray], gamma: float) -> float:
        zenc = batch["z"]
        next_act = self.target_actions(batch["next_obs"], zenc)
        next_in = np.concatenate([batch["next_obs"], next_act, zenc], axis=1)
        cur_in = np.concatenate([batch["obs"], batch["act"], zenc], axis=1)
        losses = []
        for i, critic in enumerate(self.critics):
            q_next, _ = mlp_forward(self.critic_targets[i], next_in)
            y = batch["rew"][:, i] + gamma * (1.0 - batch["done"]) * q_next[:, 0]
            loss, grads = critic_loss_and_grad(critic.params, cur_in, y)
            critic.apply(grads)
            losses.append(loss)
        return float(np.mean(losses))

    def actor_update(self, batch: Dict[str, np.ndarray], agents: Optional[Sequence[int]] = None) -> List[float]:
        zenc = batch["z"]
        ad = self.action_dim
        losses = []
        for i in (range(self.n_agents) if agents is None else agents):
            obs_i = batch["obs"][:, self.obs_slices()[i]]
            prefix = np.concatenate([batch["obs"], batch["act"][:, : i * ad]], axis=1)
            suffix = np.concatenate([batch["act"][:, (i + 1) * ad:], zenc], axis=1)
            actor_in = np.concatenate([obs_i, zenc], axis=1)
            loss, grads = actor_loss_and_grad(self.actors[i].params, self.critics[i].params,
                                              actor_in, prefix, suffix, self.discrete)
            self.actors[i].apply(grads)
            losses.append(loss)
        return losses

    def soft_update_targets(self, tau: float) -> None:
        for i in range(self.n_agents):
            self.actor_targets[i] = soft_update(self.actor_targets[i], self.actors[i].params, tau)
            self.critic_targets[i] = soft_update(self.critic_targets[i], self.critics[i].params, tau)

    def networks(self) -> Dict[str, MlpParams]:
        out = {}
        for i in range(self.n_agents):
            out[f"actor/{i}"] = self.actors[i].params
            out[f"actor_target/{i}"] = self.actor_targets[i]
            out[f"critic/{i}"] = self.critics[i].params
            out[f"critic_target/{i}"] = self.critic_targets[i]
        return out


def critic_update(agents: Agents, batch: Dict[str, np.ndarray], cfg: TrainConfig) -> float:
    return agents.critic_update(batch, cfg.gamma)


def actor_update(agents: Agents, batch: Dict[str, np.ndarray], cfg: TrainConfig) -> List[float]:
    return agents.actor_update(batch)


# --------------------------------------------------------------------------
# tabular fallback for the XOR game


class TabularXorPolicy:
    """Logit table over (agent, skill, own bit, partner bit), trained by exact policy gradient.

    The XOR game is small enough to enumerate, so the expected pseudo-reward
    under the current discriminators can be differentiated exactly.
    """

    def __init__(self, k: int, rng: np.random.Generator, lr: float = 0.05):
        size = 2 * k * 4
        params = MlpParams(MlpSpec((1, size)))
        params.weights[0][...] = rng.normal(0.0, 0.1, size=(1, size))
        self.net = Network(params, AdamState.for_params(params, lr))
        self.k = k

    @property
    def table(self) -> np.ndarray:
        return self.net.params.weights[0].reshape(2, self.k, 2, 2)

    def prob(self, i: int, bits_own: int, bits_other: int, z: int) -> float:
        return float(sigmoid(self.table[i, z, bits_own, bits_other]))

    def update(self, reward_of: Callable[[int, np.ndarray], float]) -> float:
        """Ascend E[r]; ``reward_of(z, next_bits)`` gives the pseudo-reward."""
        t = self.table
        p = sigmoid(t)
        grad = np.zeros_like(t)
        total = 0.0
        for z in range(self.k):
            for x1 in (0, 1):
                for x2 in (0, 1):
                    p1 = p[0, z, x1, x2]
                    p2 = p[1, z, x2, x1]
                    r = np.empty((2, 2))
                    for u1 in (0, 1):
                        for u2 in (0, 1):
                            r[u1, u2] = reward_of(z, np.array([x1 ^ u1, x2 ^ u2]))
                    w = 1.0 / (4 * self.k)
                    e = (1 - p1) * (1 - p2) * r[0, 0] + (1 - p1) * p2 * r[0, 1] \
                        + p1 * (1 - p2) * r[1, 0] + p1 * p2 * r[1, 1]
                    total += w * e
                    d1 = (1 - p2) * (r[1, 0] - r[0, 0]) + p2 * (r[1, 1] - r[0, 1])
                    d2 = (1 - p1) * (r[0, 1] - r[0, 0]) + p1 * (r[1, 1] - r[1, 0])
                    grad[0, z, x1, x2] += w * d1 * p1 * (1 - p1)
                    grad[1, z, x2, x1] += w * d2 * p2 * (1 - p2)
        g = self.net.params.zeros_like()
        g.weights[0][...] = -grad.reshape(1, -1)
        self.net.apply(g)
        return total


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeRecord:
    z: object
    positions: np.ndarray          # (T+1, N, 2) or (T+1, N, 1) for XOR
    global_lp: np.ndarray          # (T,)
    local_lp: np.ndarray           # (T, N)
    pseudo_reward: np.ndarray      # (T,)
    extrinsic: np.ndarray          # (T, N)
    reward: np.ndarray             # (T, N), what the critics were trained on
    features: np.ndarray           # (T, N, F) next-state features


@dataclass
class RewardMode:
    pseudo: bool = True
    extrinsic_coef: float = 0.0


def run_episode(env, agents: Agents, disc: Optional[DiscriminatorSet], space: SkillSpace,
                reward_cfg: PseudoRewardConfig, env_rng: np.random.Generator,
                policy_rng: np.random.Generator, noise: float = 0.0,
                mode: RewardMode = RewardMode(), replay_rl: Optional[Replay] = None,
                replay_disc: Optional[Replay] = None, fixed_init=None, z=None,
                xor_table: Optional[TabularXorPolicy] = None) -> EpisodeRecord:
    if z is None:
        z = sample_skill(space, policy_rng)
    zenc = space.encode(z)
    obs = env.reset(env_rng, fixed_init)
    n = env.n_agents
    positions = [env.positions()]
    obs_hist, act_hist, next_hist, ext_hist, feats, dones = [], [], [], [], [], []
    for _ in range(env.episode_length):
        env_actions, stored = [], []
        for i in range(n):
            if xor_table is not None:
                p = xor_table.prob(i, int(obs[i][0] > 0), int(obs[i][1] > 0), int(z))
                p = (1.0 - noise) * p + 0.5 * noise
                u = np.array([int(policy_rng.random() < p)])
                env_actions.append(u)
                stored.append(np.array([p]))
            else:
                u, a = agents.act(i, obs[i], zenc, noise, policy_rng)
                env_actions.append(u)
                stored.append(a)
        result = env.step(np.stack(env_actions), env_rng)
        obs_hist.append(np.concatenate(obs))
        act_hist.append(np.concatenate(stored))
        next_hist.append(np.concatenate(result.obs))
        ext_hist.append(result.reward)
        feats.append(np.stack([env.feature(i, result.obs[i]) for i in range(n)]))
        dones.append(float(result.done))
        positions.append(env.positions())
        obs = result.obs
        if result.done:
            break
    t = len(feats)
    features = np.stack(feats)
    extrinsic = np.stack(ext_hist)
    if disc is not None:
        zs = np.full(t, z) if space.discrete else np.tile(np.asarray(z), (t, 1))
        g = disc.global_logprobs(features.reshape(t, -1), zs)
        loc = np.stack([disc.local_logprobs(i, features[:, i], zs) for i in range(n)], axis=1)
        r_z = pseudo_reward_batch(reward_cfg, g, loc)
    else:
        g = np.zeros(t)
        loc = np.zeros((t, n))
        r_z = np.zeros(t)
    reward = mode.extrinsic_coef * extrinsic
    if mode.pseudo:
        reward = reward + r_z[:, None]
    if not np.all(np.isfinite(reward)):
        raise TrainingDiverged(f"non-finite reward in episode with skill {z!r}")
    if replay_rl is not None:
        zarr = np.tile(zenc, (t, 1))
        replay_rl.add_many(obs=obs_hist, act=act_hist, z=zarr, rew=reward, ext=extrinsic,
                           next_obs=next_hist, done=dones)
    if replay_disc is not None:
        zd = np.full((t, 1), float(z)) if space.discrete else np.tile(np.asarray(z), (t, 1))
        replay_disc.add_many(feat=features, z=zd)
    return EpisodeRecord(z, np.stack(positions), g, loc, r_z, extrinsic, reward, features)


# --------------------------------------------------------------------------
# trainer


def _rng_to_array(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    ints = [st["state"]["state"], st["state"]["inc"], st["has_uint32"], st["uinteger"]]
    words = []
    for v in ints:
        for k in range(4):
            words.append(float((v >> (32 * k)) & 0xFFFFFFFF))
    return np.array(words)


def _rng_from_array(arr: np.ndarray) -> np.random.Generator:
    vals = []
    for j in range(4):
        v = 0
        for k in range(4):
            v |= int(arr[4 * j + k]) << (32 * k)
        vals.append(v)
    rng = make_rng(0)
    rng.bit_generator.state = {"bit_generator": "PCG64",
                               "state": {"state": vals[0], "inc": vals[1]},
                               "has_uint32": vals[2], "uinteger": vals[3]}
    return rng


@dataclass
class Trainer:
    """Owns every piece of mutable training state; :meth:`run` is Algorithm-1's outer loop."""

    env: object
    cfg: TrainConfig
    space: SkillSpace
    reward_cfg: PseudoRewardConfig
    seed: int
    curriculum: Optional[Curriculum] = None
    curriculum_interval: int = 10
    mode: RewardMode = field(default_factory=RewardMode)
    fixed_skill: Optional[int] = None
    train_discriminators: bool = True
    loss_kind: Optional[str] = None
    episode_hook: Optional[Callable[[EpisodeRecord], None]] = None

    def __post_init__(self) -> None:
        ss = np.random.SeedSequence(self.seed)
        init_seed, env_seed, pol_seed, learn_seed = ss.spawn(4)
        init_rng = np.random.Generator(np.random.PCG64(init_seed))
        self.env_rng = np.random.Generator(np.random.PCG64(env_seed))
        self.policy_rng = np.random.Generator(np.random.PCG64(pol_seed))
        self.learn_rng = np.random.Generator(np.random.PCG64(learn_seed))
        self.agents = Agents.create(self.env, self.space.code_dim, self.cfg, init_rng)
        self.disc = DiscriminatorSet.create(self.space, self.env.n_agents, self.env.feature_dim,
                                            init_rng, self.cfg.disc_hidden, self.cfg.disc_lr,
                                            self.loss_kind)
        self.xor_table = None
        if self.env.task == "xor" and self.cfg.xor_policy == "tabular":
            self.xor_table = TabularXorPolicy(self.space.k_max, init_rng)
        self.replay_rl = make_rl_replay(self.cfg.replay_capacity, self.env, self.space.code_dim)
        self.replay_disc = make_disc_replay(self.cfg.disc_capacity, self.env, self.space)
        self.episode = 0
        self._reset_accumulators()
        self._curr_sum = 0.0
        self._curr_count = 0
        self._curr_episodes = 0

    # -- metrics --------------------------------------------------------

    def _reset_accumulators(self) -> None:
        n = self.env.n_agents
        self._acc = {"glp": 0.0, "llp": np.zeros(n), "rz": 0.0, "steps": 0, "ext": 0.0,
                     "eps": 0, "td": [], "disc": [], "signal": 0.0}

    def _accumulate(self, rec: EpisodeRecord) -> None:
        a = self._acc
        a["glp"] += float(rec.global_lp.sum())
        a["llp"] += rec.local_lp.sum(axis=0)
        a["rz"] += float(rec.pseudo_reward.sum())
        a["steps"] += len(rec.global_lp)
        a["ext"] += float(rec.extrinsic.sum())
        a["eps"] += 1
        if self.env.task == "rendezvous":
            a["signal"] += float(rec.extrinsic[:, 0].sum())

    def _metrics(self) -> Dict:
        a = self._acc
        steps = max(a["steps"], 1)
        rec = {
            "episode": self.episode,
            "active_k": self.space.active_k,
            "mean_global_lp": a["glp"] / steps,
            "mean_local_lp": (a["llp"] / steps).tolist(),
            "pseudo_reward_mean": a["rz"] / steps,
            "td_loss": float(np.mean(a["td"])) if a["td"] else None,
            "disc_losses": np.mean(a["disc"], axis=0).tolist() if a["disc"] else None,
        }
        if self.env.task == "xor":
            mi_g, mi_l = self.exact_mi()
            rec["mi_global"] = mi_g
            rec["mi_local"] = list(mi_l)
        elif self.mode.extrinsic_coef != 0.0 or not self.mode.pseudo or self.env.task == "tag":
            rec["extrinsic_reward"] = a["ext"] / max(a["eps"], 1)
        if self.env.task == "rendezvous":
            rec["weak_signal_mean"] = a["signal"] / steps
        return rec

    def xor_prob(self, i: int, own: int, other: int, z: int) -> float:
        if self.xor_table is not None:
            return self.xor_table.prob(i, own, other, z)
        obs = np.array([2.0 * own - 1.0, 2.0 * other - 1.0])
        return float(self.agents.policy(i, obs, self.space.encode(z))[0, 0])

    def exact_mi(self) -> Tuple[float, List[float]]:
        return analysis.exact_mi_xor(self.xor_prob, self.space.active_k)

    # -- loop -----------------------------------------------------------

    def _update_round(self) -> None:
        cfg = self.cfg
        if self.xor_table is None and len(self.replay_rl) >= max(cfg.warmup, 1):
            for _ in range(cfg.updates_per_round):
                batch = self.replay_rl.sample(self.learn_rng, cfg.batch_size)
                if cfg.recompute_reward and self.mode.pseudo:
                    batch["rew"] = self._recompute(batch)
                td = self.agents.critic_update(batch, cfg.gamma)
                self.agents.actor_update(batch)
                self.agents.soft_update_targets(cfg.tau)
                if not math.isfinite(td):
                    raise TrainingDiverged(f"TD loss became {td} at episode {self.episode}")
                self._acc["td"].append(td)
        if self.xor_table is not None and len(self.replay_disc) >= max(cfg.warmup, 1):
            for _ in range(cfg.updates_per_round):
                self.xor_table.update(self._xor_reward_of)
        if self.train_discriminators and len(self.replay_disc) >= max(cfg.warmup, 1):
            for _ in range(cfg.disc_updates_per_round):
                batch = self.replay_disc.sample(self.learn_rng, cfg.disc_batch_size)
                zs = batch["z"][:, 0].astype(np.int64) if self.space.discrete else batch["z"]
                losses = self.disc.update(batch["feat"], zs)
                if not all(math.isfinite(v) for v in losses):
                    raise TrainingDiverged(f"discriminator loss became {losses} at episode {self.episode}")
                self._acc["disc"].append(losses)

    def _xor_reward_of(self, z: int, bits: np.ndarray) -> float:
        feats = 2.0 * bits.astype(np.float64) - 1.0
        g = self.disc.global_logprob(feats, z)
        loc = [self.disc.local_logprob(i, feats[i:i + 1], z) for i in range(2)]
        return float(pseudo_reward_batch(self.reward_cfg, np.array([g]), np.array([loc]))[0])

    def _recompute(self, batch: Dict[str, np.ndarray]) -> np.ndarray:
        n = self.env.n_agents
        slices = self.agents.obs_slices()
        feats = np.stack([np.stack([self.env.feature(i, row[s]) for i, s in enumerate(slices)])
                          for row in batch["next_obs"]])
        zs = np.argmax(batch["z"], axis=1) if self.space.discrete else batch["z"]
        g = self.disc.global_logprobs(feats.reshape(len(zs), -1), zs)
        loc = np.stack([self.disc.local_logprobs(i, feats[:, i], zs) for i in range(n)], axis=1)
        r_z = pseudo_reward_batch(self.reward_cfg, g, loc)
        return self.mode.extrinsic_coef * batch["ext"] + r_z[:, None]

    def run(self, episodes: Optional[int] = None,
            on_metrics: Optional[Callable[[Dict], None]] = None,
            on_checkpoint: Optional[Callable[["Trainer"], None]] = None) -> None:
        cfg = self.cfg
        total = cfg.episodes if episodes is None else episodes
        while self.episode < total:
            noise = cfg.noise_at(self.episode)
            rec = run_episode(self.env, self.agents, self.disc if self.mode.pseudo else None,
                              self.space, self.reward_cfg, self.env_rng, self.policy_rng, noise,
                              self.mode, self.replay_rl, self.replay_disc, z=self.fixed_skill,
                              xor_table=self.xor_table)
            self.episode += 1
            self._accumulate(rec)
            if self.episode_hook is not None:
                self.episode_hook(rec)
            if self.episode % cfg.update_every == 0:
                self._update_round()
            if self.curriculum is not None and self.space.discrete:
                self._curr_sum += float(rec.global_lp.sum())
                self._curr_count += len(rec.global_lp)
                self._curr_episodes += 1
                if self._curr_episodes >= self.curriculum_interval:
                    if self.curriculum.observe(self.space, self._curr_sum / self._curr_count):
                        log.info("episode %d: active skills -> %d", self.episode, self.space.active_k)
                    self._curr_sum, self._curr_count, self._curr_episodes = 0.0, 0, 0
            if self.episode % cfg.eval_interval == 0:
                if on_metrics is not None:
                    on_metrics(self._metrics())
                self._reset_accumulators()
                if on_checkpoint is not None and cfg.checkpoint_interval and \
                        self.episode % cfg.checkpoint_interval == 0:
                    on_checkpoint(self)

    # -- persistence ----------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}

        def put_net(prefix: str, params: MlpParams, opt: Optional[AdamState] = None) -> None:
            out[f"{prefix}/params"] = params.flat
            if opt is not None:
                out[f"{prefix}/adam/m"] = opt.m
                out[f"{prefix}/adam/v"] = opt.v
                out[f"{prefix}/adam/step"] = np.array([float(opt.step)])

        for i in range(self.env.n_agents):
            put_net(f"actor/{i}", self.agents.actors[i].params, self.agents.actors[i].opt)
            put_net(f"actor_target/{i}", self.agents.actor_targets[i])
            put_net(f"critic/{i}", self.agents.critics[i].params, self.agents.critics[i].opt)
            put_net(f"critic_target/{i}", self.agents.critic_targets[i])
        put_net("disc/global", self.disc.global_net.params, self.disc.global_net.opt)
        for i, net in enumerate(self.disc.local_nets):
            put_net(f"disc/local/{i}", net.params, net.opt)
        if self.xor_table is not None:
            put_net("xor_table", self.xor_table.net.params, self.xor_table.net.opt)
        for name, rep in (("replay_rl", self.replay_rl), ("replay_disc", self.replay_disc)):
            # physical slot order plus the write cursor, so sampling resumes identically
            for k, v in rep.data.items():
                out[f"{name}/{k}"] = v[: rep.size].copy()
            out[f"{name}/cursor"] = np.array([float(rep.next)])
        out["skills/active_k"] = np.array([float(self.space.active_k)])
        out["skills/k_max"] = np.array([float(self.space.k_max)])
        out["curriculum/streak"] = np.array([float(self.curriculum.streak if self.curriculum else 0)])
        out["curriculum/acc"] = np.array([self._curr_sum, float(self._curr_count),
                                          float(self._curr_episodes)])
        out["episode"] = np.array([float(self.episode)])
        out["rng/env"] = _rng_to_array(self.env_rng)
        out["rng/policy"] = _rng_to_array(self.policy_rng)
        out["rng/learn"] = _rng_to_array(self.learn_rng)
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Restore from :meth:`state_arrays`. Shapes are checked before anything is applied."""
        current = self.state_arrays()
        if int(arrays.get("skills/k_max", [self.space.k_max])[0]) != self.space.k_max:
            raise ValueError(f"checkpoint k_max {int(arrays['skills/k_max'][0])} != "
                             f"configured k_max {self.space.k_max}")
        for key, arr in current.items():
            if key.startswith("replay_"):
                continue
            if key not in arrays:
                if strict:
                    raise ValueError(f"checkpoint is missing array {key!r}")
                continue
            if arrays[key].shape != arr.shape:
                raise ValueError(f"shape mismatch for {key!r}: checkpoint {arrays[key].shape}, "
                                 f"expected {arr.shape}")

        def get_net(prefix: str, params: MlpParams, opt: Optional[AdamState] = None):
            new = MlpParams(params.spec, arrays[f"{prefix}/params"].copy())
            if opt is None:
                return new, None
            new_opt = AdamState(arrays[f"{prefix}/adam/m"].copy(), arrays[f"{prefix}/adam/v"].copy(),
                                opt.lr, opt.beta1, opt.beta2, opt.epsilon,
                                int(arrays[f"{prefix}/adam/step"][0]))
            return new, new_opt

        for i in range(self.env.n_agents):
            a = self.agents.actors[i]
            a.params, a.opt = get_net(f"actor/{i}", a.params, a.opt)
            self.agents.actor_targets[i], _ = get_net(f"actor_target/{i}", self.agents.actor_targets[i])
            c = self.agents.critics[i]
            c.params, c.opt = get_net(f"critic/{i}", c.params, c.opt)
            self.agents.critic_targets[i], _ = get_net(f"critic_target/{i}", self.agents.critic_targets[i])
        g = self.disc.global_net
        g.params, g.opt = get_net("disc/global", g.params, g.opt)
        for i, net in enumerate(self.disc.local_nets):
            net.params, net.opt = get_net(f"disc/local/{i}", net.params, net.opt)
        if self.xor_table is not None and "xor_table/params" in arrays:
            t = self.xor_table.net
            t.params, t.opt = get_net("xor_table", t.params, t.opt)
        for name, rep in (("replay_rl", self.replay_rl), ("replay_disc", self.replay_disc)):
            if f"{name}/{next(iter(rep.data))}" not in arrays:
                continue
            stored = {k: arrays[f"{name}/{k}"] for k in rep.data}
            n = len(next(iter(stored.values())))
            cursor = int(arrays.get(f"{name}/cursor", [n])[0]) % max(n, 1)
            if n <= rep.capacity:
                for k, v in stored.items():
                    rep.data[k][:n] = v
                rep.size = n
                rep.next = cursor if n == rep.capacity else n % rep.capacity
            else:
                # smaller buffer than the run that wrote it: keep the newest entries
                order = np.r_[cursor:n, 0:cursor][n - rep.capacity:]
                for k, v in stored.items():
                    rep.data[k][:] = v[order]
                rep.size, rep.next = rep.capacity, 0
        self.space.active_k = int(arrays["skills/active_k"][0])
        if self.curriculum is not None:
            self.curriculum.streak = int(arrays["curriculum/streak"][0])
        acc = arrays["curriculum/acc"]
        self._curr_sum, self._curr_count, self._curr_episodes = float(acc[0]), int(acc[1]), int(acc[2])
        self.episode = int(arrays["episode"][0])
        self.env_rng = _rng_from_array(arrays["rng/env"])
        self.policy_rng = _rng_from_array(arrays["rng/policy"])
        self.learn_rng = _rng_from_array(arrays["rng/learn"])
        self._reset_accumulators()
