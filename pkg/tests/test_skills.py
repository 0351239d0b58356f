import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masd.numerics import categorical_logprob, make_rng, mlp_forward
from masd.skills import (CURRICULUM_THRESHOLD, LOG_FLOOR, Curriculum, DiscriminatorSet,
                         PseudoRewardConfig, SkillSpace, curriculum_maybe_expand,
                         discriminator_update, pseudo_reward, pseudo_reward_batch, sample_skill)


def test_sample_skill_uniform():
    rng = make_rng(0)
    space = SkillSpace("discrete", 8, 4)
    draws = np.array([sample_skill(space, rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=8) / len(draws)
    assert np.all(np.abs(freq[:4] - 0.25) < 0.01) and np.all(freq[4:] == 0)


def test_sample_skill_single_active():
    rng = make_rng(1)
    space = SkillSpace("discrete", 5, 1)
    assert {sample_skill(space, rng) for _ in range(200)} == {0}


def test_sample_skill_continuous():
    rng = make_rng(2)
    space = SkillSpace("continuous", dim=2)
    zs = np.array([sample_skill(space, rng) for _ in range(100_000)])
    assert np.all(np.abs(zs) <= 1.0)
    assert np.all(np.abs(zs.mean(axis=0)) < 0.01)


def test_skill_space_validation():
    with pytest.raises(ValueError):
        SkillSpace("discrete", 3, 4)
    with pytest.raises(ValueError):
        SkillSpace("ordinal")


def test_encode_one_hot():
    space = SkillSpace("discrete", 4, 2)
    assert space.encode(1).tolist() == [0, 1, 0, 0]
    assert space.encode_batch(np.array([0, 3])).tolist() == [[1, 0, 0, 0], [0, 0, 0, 1]]


def test_fresh_discriminator_near_uniform():
    space = SkillSpace("discrete", 20, 20)
    disc = DiscriminatorSet.create(space, 3, 4, make_rng(0))
    rng = make_rng(1)
    lps = [disc.global_logprob(rng.normal(size=12), int(rng.integers(20))) for _ in range(50)]
    assert abs(np.mean(lps) - math.log(1 / 20)) < 0.3


def test_logprob_matches_categorical_on_same_logits():
    space = SkillSpace("discrete", 6, 4)
    disc = DiscriminatorSet.create(space, 2, 3, make_rng(0))
    x = make_rng(1).normal(size=6)
    logits, _ = mlp_forward(disc.global_net.params, x)
    for z in range(4):
        assert disc.global_logprob(x, z) == pytest.approx(
            categorical_logprob(logits[0], z, space.mask()), abs=1e-15)


def test_confident_prediction_floored():
    space = SkillSpace("discrete", 2, 2)
    disc = DiscriminatorSet.create(space, 1, 1, make_rng(0), hidden=(4,))
    disc.global_net.params.weights[-1][...] = 0.0
    disc.global_net.params.biases[-1][...] = [500.0, -500.0]
    assert disc.global_logprob(np.zeros(1), 0) == pytest.approx(0.0, abs=1e-12)
    assert disc.global_logprob(np.zeros(1), 1) == LOG_FLOOR


def test_inactive_skill_label_rejected():
    space = SkillSpace("discrete", 4, 2)
    disc = DiscriminatorSet.create(space, 2, 1, make_rng(0))
    with pytest.raises(ValueError):
        disc.global_logprob(np.zeros(2), 3)
    with pytest.raises(IndexError):
        disc.local_logprob(2, np.zeros(1), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_discrete_logprobs_in_range(seed, k):
    rng = make_rng(seed)
    space = SkillSpace("discrete", 6, k)
    disc = DiscriminatorSet.create(space, 2, 2, rng, hidden=(8,))
    disc.global_net.params.flat[...] *= 50.0
    x = rng.normal(size=(20, 4))
    zs = rng.integers(0, k, size=20)
    lp = disc.global_logprobs(x, zs)
    assert np.all(lp <= 0.0) and np.all(lp >= LOG_FLOOR)


def test_pseudo_reward_examples():
    assert pseudo_reward(PseudoRewardConfig(1.0, "mean"), -0.1, [-0.7, -0.3]) == pytest.approx(0.4)
    assert pseudo_reward(PseudoRewardConfig(1.5, "min"), -0.1, [-0.7, -0.3]) == pytest.approx(0.95)
    assert pseudo_reward(PseudoRewardConfig(0.0, "mean"), -0.1, [-0.7, -0.3]) == -0.1


def test_pseudo_reward_config_validation():
    with pytest.raises(ValueError):
        PseudoRewardConfig(-1.0)
    with pytest.raises(ValueError):
        PseudoRewardConfig(1.0, "max")
    with pytest.raises(ValueError):
        pseudo_reward(PseudoRewardConfig(), -0.1, [])


lp = st.floats(LOG_FLOOR, 0.0)


@settings(max_examples=200)
@given(st.floats(0.01, 5.0), st.sampled_from(["mean", "min"]), lp,
       st.lists(lp, min_size=1, max_size=6), st.integers(0, 5), st.floats(0.0, 3.0))
def test_pseudo_reward_non_increasing_in_locals(beta, agg, g, locs, idx, bump):
    cfg = PseudoRewardConfig(beta, agg)
    i = idx % len(locs)
    higher = list(locs)
    higher[i] = min(0.0, higher[i] + bump)
    assert pseudo_reward(cfg, g, higher) <= pseudo_reward(cfg, g, locs) + 1e-12


@settings(max_examples=100)
@given(st.floats(0.0, 5.0), st.sampled_from(["mean", "min"]),
       st.lists(st.tuples(lp, lp, lp), min_size=1, max_size=10))
def test_batch_matches_scalar(beta, agg, rows):
    cfg = PseudoRewardConfig(beta, agg)
    arr = np.array(rows)
    batch = pseudo_reward_batch(cfg, arr[:, 0], arr[:, 1:])
    for row, b in zip(rows, batch):
        assert b == pseudo_reward(cfg, row[0], row[1:])


def _separable(rng, n, k):
    zs = rng.integers(0, k, size=n)
    centers = np.stack([np.cos(2 * np.pi * np.arange(k) / k), np.sin(2 * np.pi * np.arange(k) / k)], 1)
    feats = centers[zs][:, None, :] + 0.05 * rng.normal(size=(n, 2, 2))
    return feats, zs


def test_discriminator_learns_separable_data():
    rng = make_rng(0)
    space = SkillSpace("discrete", 4, 4)
    disc = DiscriminatorSet.create(space, 2, 2, rng, hidden=(32, 32), lr=3e-3)
    for step in range(2000):
        feats, zs = _separable(rng, 64, 4)
        losses = discriminator_update(disc, feats, zs)
        if losses[0] < 0.05:
            break
    assert losses[0] < 0.05


def test_discriminator_irreducible_entropy():
    rng = make_rng(1)
    space = SkillSpace("discrete", 5, 3)
    disc = DiscriminatorSet.create(space, 2, 2, rng, hidden=(16,), lr=1e-3)
    hist = []
    for _ in range(3000):
        feats = rng.normal(size=(128, 2, 2))
        zs = rng.integers(0, 3, size=128)
        hist.append(disc.update(feats, zs)[0])
    assert abs(np.mean(hist[-300:]) - math.log(3)) < 0.05


def test_one_small_step_does_not_increase_loss():
    rng = make_rng(2)
    space = SkillSpace("discrete", 3, 3)
    disc = DiscriminatorSet.create(space, 2, 2, rng, hidden=(8,), lr=1e-5)
    feats = rng.normal(size=(32, 2, 2))
    zs = rng.integers(0, 3, size=32)
    before = disc.loss_and_grad(disc.global_net, feats.reshape(32, -1), zs)[0]
    disc.update(feats, zs)
    after = disc.loss_and_grad(disc.global_net, feats.reshape(32, -1), zs)[0]
    assert after <= before


def test_update_validates_shapes():
    space = SkillSpace("discrete", 3, 2)
    disc = DiscriminatorSet.create(space, 2, 2, make_rng(0))
    with pytest.raises(ValueError):
        disc.update(np.zeros((4, 3, 2)), np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        disc.update(np.zeros((4, 2, 2)), np.full(4, 2))


def test_continuous_discriminator_l1_l2():
    space = SkillSpace("continuous", dim=2)
    for kind in ("L1", "L2"):
        disc = DiscriminatorSet.create(space, 2, 2, make_rng(0), loss_kind=kind)
        z = np.array([0.3, -0.4])
        pred, _ = mlp_forward(disc.global_net.params, np.ones(4))
        d = pred[0] - z
        expected = -np.sum(np.abs(d)) if kind == "L1" else -np.sum(d * d)
        assert disc.global_logprob(np.ones(4), z) == pytest.approx(expected)
    with pytest.raises(ValueError):
        DiscriminatorSet.create(space, 2, 2, make_rng(0), loss_kind="CE")


def test_curriculum_examples():
    space = SkillSpace("discrete", 30, 5)
    cur = Curriculum(window=10)
    for _ in range(9):
        assert not cur.observe(space, -0.15)
    assert cur.observe(space, -0.15) and space.active_k == 6
    assert curriculum_maybe_expand(space, -0.5) == 6
    full = SkillSpace("discrete", 30, 30)
    assert curriculum_maybe_expand(full, 0.0) == 30
    assert CURRICULUM_THRESHOLD == -0.18
    with pytest.raises(ValueError):
        Curriculum().observe(SkillSpace("continuous"), 0.0)


def test_curriculum_streak_resets_on_miss():
    space = SkillSpace("discrete", 30, 3)
    cur = Curriculum(window=3)
    for v in (-0.1, -0.1, -0.3, -0.1, -0.1):
        cur.observe(space, v)
    assert space.active_k == 3
    cur.observe(space, -0.18)
    assert space.active_k == 4
