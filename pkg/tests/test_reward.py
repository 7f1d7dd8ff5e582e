import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import (brute_force_infomax, logistic, random_prompt, random_response, straight_mlp,
                      straight_pooled, straight_reward, tiny_arch, tiny_policy)
from rlhflab.errors import ConfigurationError
from rlhflab.kernels import ParamVector
from rlhflab.reward import (EnnRewardModel, RewardModel, choice_prob, choice_prob_variance,
                            dedup_rewards, enn_reward, ensemble_rewards, infomax_pair,
                            infomax_pair_with_value, init_enn, init_reward_model, pair_variances,
                            reward, select_infomax)
from rlhflab.policy import SequenceBatch
from rlhflab.seeding import stream


def _rm(seed, widths=()):
    policy = tiny_policy(seed)
    return init_reward_model(policy, stream(seed, "rm"), widths)


def _enn(seed, n=4, prior_scale=1.0):
    return init_enn(tiny_policy(seed), stream(seed, "enn"), n, (3,), (2,), (3,), prior_scale)


# reward


def test_reward_model_copies_policy_trunk():
    policy = tiny_policy(0)
    rm = init_reward_model(policy, stream(0, "rm"))
    np.testing.assert_array_equal(rm.params.subset("backbone").values,
                                  policy.params.subset("backbone").values)
    rm.params.values[:] = 0.0
    assert np.any(policy.params.values != 0.0)


def test_zero_head_gives_zero_reward():
    rm = _rm(0, (4,))
    rm.params.subset("head").values[:] = 0.0
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert reward(rm, random_prompt(rng, rm.arch), random_response(rng, rm.arch)) == 0.0


@pytest.mark.parametrize("widths", [(), (4, 3)])
@pytest.mark.parametrize("seed", range(10))
def test_reward_matches_straight_line_recomputation(seed, widths):
    rm = _rm(seed, widths)
    rng = np.random.default_rng(seed)
    prompt, y = random_prompt(rng, rm.arch), random_response(rng, rm.arch)
    r = reward(rm, prompt, y)
    assert r == pytest.approx(straight_reward(rm, prompt, y), rel=1e-12, abs=1e-14)
    assert r == reward(rm, prompt, y)


def test_head_input_matches_embedding_dim():
    rm = _rm(0, (5,))
    assert rm.head.input_dim == rm.arch.embedding_dim and rm.head.output_dim == 1


# choice_prob


def test_choice_prob_values():
    assert choice_prob(0.7, 0.7) == 0.5
    assert choice_prob(math.log(3), 0.0) == pytest.approx(0.75, abs=1e-15)
    assert choice_prob(1.0, -1.0) == pytest.approx(0.8807970779778823, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(-700, 700), st.floats(-700, 700))
def test_choice_prob_antisymmetric(a, b):
    assert abs(choice_prob(a, b) + choice_prob(b, a) - 1.0) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(-100, 100), st.floats(-30, 20), st.floats(1e-3, 10))
def test_choice_prob_monotone(b, gap, delta):
    # beyond a gap of ~37 the logistic rounds to 1.0 in double precision
    a = b + gap
    assert choice_prob(a + delta, b) > choice_prob(a, b)


# ENN


def test_enn_point_index_is_base_reward_bitwise():
    enn = _enn(1)
    rng = np.random.default_rng(1)
    for _ in range(20):
        prompt, y = random_prompt(rng, enn.arch), random_response(rng, enn.arch)
        assert enn_reward(enn, prompt, y, 0) == reward(enn.base, prompt, y)


def test_enn_zero_heads_equal_point_estimate():
    enn = _enn(2)
    enn.prior_params.values[:] = 0.0
    enn.diff_params.values[:] = 0.0
    prompt, y = (1, 2), (3, 4, 0)
    point = reward(enn.base, prompt, y)
    for z in range(1, enn.ensemble_size + 1):
        assert enn_reward(enn, prompt, y, z) == point


@pytest.mark.parametrize("seed", range(5))
def test_enn_particle_is_point_plus_prior_plus_diff(seed):
    enn = _enn(seed, prior_scale=1.0)
    rng = np.random.default_rng(seed)
    prompt, y = random_prompt(rng, enn.arch), random_response(rng, enn.arch)
    emb = straight_pooled(enn.base, prompt, y)
    point = straight_reward(enn.base, prompt, y)
    prior = straight_mlp(enn.prior_spec, enn.prior_member(3), emb)[0]
    diff = straight_mlp(enn.diff_spec, enn.diff_member(3), emb)[0]
    assert enn_reward(enn, prompt, y, 3) == pytest.approx(point + prior + diff, rel=1e-12)


def test_enn_index_out_of_range():
    enn = _enn(0, n=3)
    with pytest.raises(IndexError):
        enn_reward(enn, (1, 2), (0,), 4)
    with pytest.raises(IndexError):
        enn_reward(enn, (1, 2), (0,), -1)


def test_ensemble_rewards_rows():
    enn = _enn(3)
    prompts, ys = [(1, 2), (2, 3)], [(1, 0), (4, 4, 0)]
    r = ensemble_rewards(enn, SequenceBatch(enn.arch, prompts, ys))
    assert r.shape == (enn.ensemble_size + 1, 2)
    for z in range(enn.ensemble_size + 1):
        for s in range(2):
            assert r[z, s] == pytest.approx(enn_reward(enn, prompts[s], ys[s], z), rel=1e-12)


# choice-probability variance


def _two_member_enn(rewards):
    """ENN whose particle offsets are set through output biases only."""
    enn = _enn(0, n=len(rewards))
    enn.prior_params.values[:] = 0.0
    enn.diff_params.values[:] = 0.0
    enn.base.params.subset("head").values[:] = 0.0
    return enn


def test_variance_zero_for_identical_particles():
    enn = _two_member_enn([0, 0, 0])
    assert choice_prob_variance(enn, (1, 2), (1, 0), (2, 3, 0)) == 0.0


def test_variance_of_point4_point6_is_001():
    # particle 1 prefers y with p = 0.4, particle 2 with p = 0.6: offsets on y only
    enn = _enn(0, n=2)
    enn.prior_params.values[:] = 0.0
    enn.diff_params.values[:] = 0.0
    enn.base.params.subset("head").values[:] = 0.0
    logit = math.log(0.6 / 0.4)
    # the differential output bias shifts every response equally, so build rewards directly
    r = np.array([[0.0, logit], [logit, 0.0]])
    _, _, var = select_infomax(r)
    assert var == pytest.approx(0.01, abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_variance_matches_two_pass_oracle_and_is_symmetric(seed):
    enn = _enn(seed, n=5)
    rng = np.random.default_rng(seed)
    prompt = random_prompt(rng, enn.arch)
    y, y2 = random_response(rng, enn.arch), random_response(rng, enn.arch)
    ps = [logistic(enn_reward(enn, prompt, y, z) - enn_reward(enn, prompt, y2, z))
          for z in range(1, 6)]
    mean = sum(ps) / 5
    expected = sum((p - mean) ** 2 for p in ps) / 5
    v = choice_prob_variance(enn, prompt, y, y2)
    assert v == pytest.approx(expected, rel=1e-9, abs=1e-18)
    assert v == choice_prob_variance(enn, prompt, y2, y)
    assert v >= 0.0


def test_variance_needs_two_particles():
    with pytest.raises(ConfigurationError):
        choice_prob_variance(_enn(0, n=1), (1, 2), (0,), (1, 0))


# infomax


def test_infomax_identical_responses_gives_first_pair():
    enn = _enn(4)
    ys = [(1, 2, 0)] * 5
    assert infomax_pair_with_value(enn, (1, 2), ys) == (0, 1, 0.0)


def test_infomax_needs_two_responses():
    with pytest.raises(ValueError):
        infomax_pair(_enn(0), (1, 2), [(0,)])


@pytest.mark.parametrize("seed", range(20))
def test_infomax_matches_brute_force_on_enn(seed):
    enn = _enn(seed, n=6)
    rng = np.random.default_rng(seed)
    prompt = random_prompt(rng, enn.arch)
    ys = [random_response(rng, enn.arch) for _ in range(8)]
    i, j = infomax_pair(enn, prompt, ys)
    particle = np.array([[enn_reward(enn, prompt, y, z) for y in ys] for z in range(1, 7)])
    (bi, bj), _ = brute_force_infomax(particle)
    assert (i, j) == (bi, bj)


def test_infomax_duplicate_responses_tie_lexicographically():
    enn = _enn(5, n=6)
    rng = np.random.default_rng(5)
    prompt = random_prompt(rng, enn.arch)
    a, b = random_response(rng, enn.arch), random_response(rng, enn.arch)
    while b == a:
        b = random_response(rng, enn.arch)
    ys = [a, b, a, b, a]
    r = dedup_rewards(enn, prompt, ys)
    assert r[:, 0].tobytes() == r[:, 2].tobytes() == r[:, 4].tobytes()
    assert infomax_pair(enn, prompt, ys) == (0, 1)


def test_infomax_maximality_after_removal():
    rng = np.random.default_rng(9)
    r = rng.standard_normal((7, 10))
    i, j, best = select_infomax(r)
    keep = [k for k in range(10) if k not in (i, j)]
    _, _, second = select_infomax(r[:, keep])
    assert second <= best


def test_pair_variances_enumerates_all_pairs_in_order():
    i, j, var = pair_variances(np.zeros((3, 4)))
    assert list(zip(i.tolist(), j.tolist())) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert np.all(var == 0)


def _random_instance(rng, m=16):
    """Random particle rewards with planted duplicate columns and tied pairs."""
    n = int(rng.integers(2, 12))
    r = rng.standard_normal((n, m)) * rng.choice([0.1, 1.0, 5.0])
    kind = rng.integers(4)
    if kind == 1:  # duplicated responses
        for _ in range(int(rng.integers(1, 6))):
            a, b = rng.choice(m, 2, replace=False)
            r[:, b] = r[:, a]
    elif kind == 2:  # collapsed ensemble: every particle identical
        r[:] = r[0]
    elif kind == 3:  # quantized rewards produce many exact ties
        r = np.round(r * 2) / 2
    return r


def test_infomax_equals_brute_force_1000_instances():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    ties = 0
    for _ in range(1000):
        r = _random_instance(rng)
        i, j, v = select_infomax(r)
        (bi, bj), bv = brute_force_infomax(r)
        assert (i, j) == (bi, bj)
        assert v == pytest.approx(bv, abs=1e-12)
        _, _, var = pair_variances(r)
        ties += int(np.sum(var == var.max()) > 1)
    assert ties > 50
    assert time.perf_counter() - start < 60


def test_enn_prior_is_separate_from_diff():
    enn = _enn(0)
    assert isinstance(enn, EnnRewardModel) and isinstance(enn.base, RewardModel)
    assert enn.prior_params.values.size != enn.diff_params.values.size
    assert isinstance(enn.prior_params, ParamVector)
