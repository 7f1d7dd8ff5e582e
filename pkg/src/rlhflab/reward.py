"""Point-estimate and epistemic (ensemble) reward models.

A reward model mean-pools the trunk embeddings of every response prefix and
maps the pooled vector to a scalar through a head.  The epistemic variant
adds N fixed prior heads and N trainable differential heads on top of the
pooled embedding; particle ``z`` reports ``point + prior_scale * prior_z +
diff_z`` while ``z = 0`` is the point estimate alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .kernels import (MlpSpec, ParamVector, init_mlp, init_stacked_mlp, mlp_backward,
                      mlp_forward, sigmoid, stacked_member, stacked_mlp_backward,
                      stacked_mlp_forward)
from .policy import (PolicyArch, SequenceBatch, TokenPolicy, check_response, trunk_backward,
                     trunk_forward)


@dataclass
class RewardModel:
    arch: PolicyArch
    head: MlpSpec
    params: ParamVector  # segments backbone.* and head.*

    def with_params(self, params: ParamVector) -> "RewardModel":
        return RewardModel(self.arch, self.head, params)


def head_spec(arch: PolicyArch, widths: Sequence[int] = ()) -> MlpSpec:
    """Linear head for ``widths=()``, otherwise an MLP with those hidden widths."""
    return MlpSpec(arch.embedding_dim, tuple(widths), 1)


def init_reward_model(policy: TokenPolicy, rng: np.random.Generator,
                      head_widths: Sequence[int] = ()) -> RewardModel:
    """Copy the policy trunk and attach a randomly initialized head."""
    head = head_spec(policy.arch, head_widths)
    trunk = policy.params.subset("backbone").copy()
    params = ParamVector.concat({"backbone": trunk, "head": init_mlp(head, rng)})
    return RewardModel(policy.arch, head, params)


def pooled_embeddings(arch: PolicyArch, trunk: ParamVector, batch: SequenceBatch) -> np.ndarray:
    h = trunk_forward(arch, trunk, batch.reward_contexts())
    starts = np.concatenate([[0], np.cumsum(batch.lengths)[:-1]])
    return np.add.reduceat(h, starts, axis=0) / batch.lengths[:, None]


def reward_batch(rm: RewardModel, batch: SequenceBatch, embeddings: np.ndarray | None = None) -> np.ndarray:
    """Scalar reward per sequence in the batch."""
    if len(batch) == 0:
        return np.zeros(0)
    if embeddings is None:
        embeddings = pooled_embeddings(rm.arch, rm.params.subset("backbone"), batch)
    return mlp_forward(rm.head, rm.params.subset("head"), embeddings)[:, 0]


def reward(rm: RewardModel, prompt, response: Sequence[int]) -> float:
    check_response(response, rm.arch.vocab, rm.arch.max_response_len)
    return float(reward_batch(rm, SequenceBatch(rm.arch, [prompt], [response]))[0])


def reward_coeff_grad(rm: RewardModel, batch: SequenceBatch, coeffs: np.ndarray) -> ParamVector:
    """Gradient of ``sum_s coeffs[s] * r(sequence s)`` w.r.t. backbone and head."""
    arch = rm.arch
    trunk = rm.params.subset("backbone")
    ctx = batch.reward_contexts()
    h = trunk_forward(arch, trunk, ctx)
    starts = np.concatenate([[0], np.cumsum(batch.lengths)[:-1]])
    pooled = np.add.reduceat(h, starts, axis=0) / batch.lengths[:, None]
    g_head, g_pooled = mlp_backward(rm.head, rm.params.subset("head"), pooled,
                                    np.asarray(coeffs, dtype=np.float64)[:, None])
    row_cot = (g_pooled / batch.lengths[:, None])[batch.row_seq]
    g_trunk = trunk_backward(arch, trunk, ctx, row_cot)
    grad = rm.params.zeros_like()
    grad.subset("backbone").values[:] = g_trunk.values
    grad.subset("head").values[:] = g_head.values
    return grad


# --------------------------------------------------------------------------
# Choice probabilities


def choice_prob(r_chosen, r_other):
    """Bradley-Terry probability that the first response is chosen."""
    return sigmoid(np.subtract(r_chosen, r_other))


# --------------------------------------------------------------------------
# Epistemic reward model


@dataclass
class EnnRewardModel:
    base: RewardModel
    prior_spec: MlpSpec
    prior_params: ParamVector  # stacked, leading axis = particle
    diff_spec: MlpSpec
    diff_params: ParamVector
    prior_scale: float = 1.0

    @property
    def ensemble_size(self) -> int:
        return self.diff_params["W0"].shape[0]

    @property
    def arch(self) -> PolicyArch:
        return self.base.arch

    def prior_member(self, z: int) -> ParamVector:
        return stacked_member(self.prior_spec, self.prior_params, z - 1)

    def diff_member(self, z: int) -> ParamVector:
        return stacked_member(self.diff_spec, self.diff_params, z - 1)


def init_enn(policy: TokenPolicy, rng: np.random.Generator, ensemble_size: int,
             point_widths: Sequence[int] = (32, 32), prior_widths: Sequence[int] = (16, 16),
             diff_widths: Sequence[int] = (32, 32), prior_scale: float = 1.0) -> EnnRewardModel:
    if ensemble_size < 0:
        raise ConfigurationError("ensemble_size must be non-negative")
    base = init_reward_model(policy, rng, point_widths)
    prior_spec = head_spec(policy.arch, prior_widths)
    diff_spec = head_spec(policy.arch, diff_widths)
    return EnnRewardModel(base, prior_spec, init_stacked_mlp(prior_spec, ensemble_size, rng),
                          diff_spec, init_stacked_mlp(diff_spec, ensemble_size, rng), prior_scale)


def particle_offsets(enn: EnnRewardModel, embeddings: np.ndarray) -> np.ndarray:
    """prior_scale * prior_z + diff_z for z = 1..N; shape (N, S)."""
    if enn.ensemble_size == 0:
        return np.zeros((0, embeddings.shape[0]))
    prior = stacked_mlp_forward(enn.prior_spec, enn.prior_params, embeddings)[..., 0]
    diff = stacked_mlp_forward(enn.diff_spec, enn.diff_params, embeddings)[..., 0]
    return enn.prior_scale * prior + diff


def ensemble_rewards(enn: EnnRewardModel, batch: SequenceBatch) -> np.ndarray:
    """Rewards for every index: row 0 is the point estimate, row z the z-th particle."""
    emb = pooled_embeddings(enn.arch, enn.base.params.subset("backbone"), batch)
    point = reward_batch(enn.base, batch, emb)
    return np.vstack([point[None, :], point[None, :] + particle_offsets(enn, emb)])


def enn_reward(enn: EnnRewardModel, prompt, response: Sequence[int], z: int) -> float:
    if not 0 <= z <= enn.ensemble_size:
        raise IndexError(f"epistemic index {z} outside [0, {enn.ensemble_size}]")
    check_response(response, enn.arch.vocab, enn.arch.max_response_len)
    batch = SequenceBatch(enn.arch, [prompt], [response])
    emb = pooled_embeddings(enn.arch, enn.base.params.subset("backbone"), batch)
    point = reward_batch(enn.base, batch, emb)
    if z == 0:
        return float(point[0])
    return float(point[0] + particle_offsets(enn, emb)[z - 1, 0])


def diff_head_grad(enn: EnnRewardModel, embeddings: np.ndarray, coeffs: np.ndarray) -> ParamVector:
    """Per-particle gradients of ``sum_s coeffs[z, s] * r_z(s)`` w.r.t. differential heads only.

    ``coeffs`` has shape (N, S).  Backbone, point head and priors get nothing.
    """
    return stacked_mlp_backward(enn.diff_spec, enn.diff_params, embeddings,
                                np.asarray(coeffs, dtype=np.float64)[..., None])


def _half_centered(rewards_a: np.ndarray, rewards_b: np.ndarray) -> np.ndarray:
    # sigmoid(d) - 1/2 == tanh(d/2)/2, odd in d, so swapping the pair only flips sign
    return 0.5 * np.tanh(0.5 * (rewards_a - rewards_b))


def _population_var(q: np.ndarray) -> np.ndarray:
    # shifting by the first particle makes identical particles give exactly 0
    return np.var(q - q[:1], axis=0)


def choice_prob_variance(enn: EnnRewardModel, prompt, y: Sequence[int], y2: Sequence[int]) -> float:
    """Population variance over particles 1..N of the probability that y beats y2."""
    if enn.ensemble_size < 2:
        raise ConfigurationError("choice-probability variance needs ensemble_size >= 2")
    r = ensemble_rewards(enn, SequenceBatch(enn.arch, [prompt, prompt], [y, y2]))[1:]
    return float(_population_var(_half_centered(r[:, 0], r[:, 1])))


def pair_variances(particle_rewards: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Variance for every unordered pair i < j, in lexicographic order.

    ``particle_rewards`` has shape (N, m).  Returns (i, j, variance).
    """
    m = particle_rewards.shape[1]
    i, j = np.triu_indices(m, 1)
    q = _half_centered(particle_rewards[:, i], particle_rewards[:, j])
    return i, j, _population_var(q)


def dedup_rewards(enn: EnnRewardModel, prompt, responses: Sequence[Sequence[int]]) -> np.ndarray:
    """Particle rewards (N+1, m), with identical responses sharing bit-identical columns."""
    uniq: dict[tuple, int] = {}
    index = [uniq.setdefault(tuple(r), len(uniq)) for r in responses]
    keys = list(uniq)
    r = ensemble_rewards(enn, SequenceBatch(enn.arch, [prompt] * len(keys), keys))
    return r[:, index]


def infomax_pair(enn: EnnRewardModel, prompt, responses: Sequence[Sequence[int]]) -> tuple[int, int]:
    """The pair maximizing choice-probability variance; ties go to the smallest (i, j)."""
    i, j, _ = infomax_pair_with_value(enn, prompt, responses)
    return i, j


def infomax_pair_with_value(enn: EnnRewardModel, prompt, responses) -> tuple[int, int, float]:
    if len(responses) < 2:
        raise ValueError("infomax_pair needs at least two responses")
    if enn.ensemble_size < 2:
        raise ConfigurationError("infomax_pair needs ensemble_size >= 2")
    rewards = dedup_rewards(enn, prompt, responses)[1:]
    return select_infomax(rewards)


def select_infomax(particle_rewards: np.ndarray) -> tuple[int, int, float]:
    i, j, var = pair_variances(particle_rewards)
    k = int(np.argmax(var))
    return int(i[k]), int(j[k]), float(var[k])

