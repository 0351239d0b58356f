"""One-step two-agent XOR game.

Each agent gets a private bit and picks a bit; the next state is ``x xor u``.
Agent ``i`` observes (own bit, partner bit) encoded as +-1, while its feature
is only its own bit. The partner bit is what lets a policy realise the
coordinated solution where z decides whether the two next bits agree.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .base import StepResult


def xor_reset(rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=2).astype(np.int64)


def xor_step(bits: np.ndarray, actions) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    actions = np.asarray(actions)
    if actions.shape != bits.shape or not np.all((actions == 0) | (actions == 1)):
        raise ValueError(f"XOR actions must be {bits.shape[0]} binary values, got {actions!r}")
    return bits ^ actions.astype(np.int64)


def encode_bit(b) -> np.ndarray:
    return 2.0 * np.asarray(b, dtype=np.float64) - 1.0


class XorEnv:
    task = "xor"
    n_agents = 2
    obs_dims = (2, 2)
    feature_dim = 1
    action_dim = 1
    episode_length = 1
    discrete_actions = True

    def __init__(self) -> None:
        self.bits: Optional[np.ndarray] = None

    def observe(self, bits: np.ndarray) -> List[np.ndarray]:
        e = encode_bit(bits)
        return [np.array([e[0], e[1]]), np.array([e[1], e[0]])]

    def reset(self, rng: np.random.Generator, fixed_init=None) -> List[np.ndarray]:
        if fixed_init is not None:
            bits = np.asarray(fixed_init, dtype=np.int64)
            if bits.shape != (2,) or not np.all((bits == 0) | (bits == 1)):
                raise ValueError("XOR snapshot must be two bits")
            self.bits = bits.copy()
        else:
            self.bits = xor_reset(rng)
        return self.observe(self.bits)

    def step(self, actions, rng: Optional[np.random.Generator] = None) -> StepResult:
        u = np.asarray(actions).reshape(-1)
        self.bits = xor_step(self.bits, u)
        return StepResult(self.observe(self.bits), np.zeros(2), True)

    def feature(self, i: int, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs[:1], dtype=np.float64)

    def positions(self) -> np.ndarray:
        return encode_bit(self.bits)[:, None]
