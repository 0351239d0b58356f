"""Environments: the one-step XOR game and the 2D particle world."""

from .base import StepResult
from .particle import (
    ParticleConfig,
    ParticleEnv,
    ParticleState,
    perturb_snapshot,
    prey_policy,
    rendezvous_signal,
    tag_reward,
)
from .xor import XorEnv, xor_reset, xor_step


def make_env(task: str, **kwargs):
    if task == "xor":
        return XorEnv()
    if task in ("spread", "rendezvous", "tag"):
        return ParticleEnv(ParticleConfig(task=task, **kwargs))
    raise ValueError(f"unknown task {task!r}")


__all__ = [
    "ParticleConfig",
    "ParticleEnv",
    "ParticleState",
    "StepResult",
    "XorEnv",
    "make_env",
    "perturb_snapshot",
    "prey_policy",
    "rendezvous_signal",
    "tag_reward",
    "xor_reset",
    "xor_step",
]
