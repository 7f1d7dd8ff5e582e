"""Reward-model and policy update rules plus the moving-average anchor.

Both rules return *ascent* directions.  Optimizers that consume them are
built with ``AdamWHyper(maximize=True)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, UpdateSkipped
from .kernels import (OptimizerState, ParamVector, adamw_step, check_same_shape,
                      clip_global_norm, sigmoid, sum_params)
from .policy import SequenceBatch, TokenPolicy, check_response, row_log_probs, weighted_logprob_grad
from .reward import RewardModel, reward_batch, reward_coeff_grad


@dataclass
class AnchorState:
    anchor_params: ParamVector
    eta: float = 0.99


@dataclass(frozen=True)
class UpdateHyper:
    beta: float = 0.1
    epsilon: float = 0.02
    clip_norm: float = 1.0
    reward_params_source: str = "current"
    full_kl: bool = False

    def __post_init__(self):
        if self.beta < 0 or not self.clip_norm > 0:
            raise ConfigurationError(f"invalid update hyperparameters: {self}")


def _finite_or_skip(grad: ParamVector, stage: str) -> ParamVector:
    if not np.all(np.isfinite(grad.values)):
        raise UpdateSkipped(f"non-finite {stage} gradient",
                            {"stage": stage, "nonfinite": int((~np.isfinite(grad.values)).sum())})
    return grad


def reward_grad_batch(rm: RewardModel, prompts: Sequence, winners: Sequence, losers: Sequence
                      ) -> tuple[ParamVector, np.ndarray]:
    """Summed gradient of ``ln p(winner > loser)`` and each pair's p."""
    wb = SequenceBatch(rm.arch, list(prompts), list(winners))
    lb = SequenceBatch(rm.arch, list(prompts), list(losers))
    p = sigmoid(reward_batch(rm, wb) - reward_batch(rm, lb))
    coeff = 1.0 - p
    # separate passes so that identical winner and loser cancel exactly
    diff = reward_coeff_grad(rm, wb, coeff).values - reward_coeff_grad(rm, lb, coeff).values
    return _finite_or_skip(rm.params.with_values(diff), "reward"), np.atleast_1d(p)


def reward_grad(rm: RewardModel, prompt, winner: Sequence[int], loser: Sequence[int]) -> ParamVector:
    """``grad_phi ln p_phi(winner > loser | prompt)``."""
    check_response(winner, rm.arch.vocab, rm.arch.max_response_len)
    check_response(loser, rm.arch.vocab, rm.arch.max_response_len)
    return reward_grad_batch(rm, [prompt], [winner], [loser])[0]


def policy_grad_batch(policy: TokenPolicy, anchor: AnchorState, prompts: Sequence,
                      ys: Sequence, probs: Sequence[float], hyper: UpdateHyper) -> ParamVector:
    """Sum over items of the anchored, nudged policy gradient.

    ``probs[i]`` is the reward model's p(ys[i] beats its partner).  Per token
    the weight on ``grad ln pi`` is ``p - 1/2 + eps + beta * pi_anchor(token)``.
    """
    if len(ys) == 0:
        return policy.params.zeros_like()
    check_same_shape(policy.params, anchor.anchor_params, "anchor")
    batch = SequenceBatch(policy.arch, list(prompts), list(ys))
    signal = np.asarray(probs, dtype=np.float64) - 0.5 + hyper.epsilon
    weights = signal[batch.row_seq]
    anchor_policy = policy.with_params(anchor.anchor_params)
    anchor_tok_lp, anchor_logp = row_log_probs(anchor_policy, batch)
    extra = None
    if hyper.beta:
        if hyper.full_kl:
            _, logp = row_log_probs(policy, batch)
            extra = hyper.beta * (np.exp(anchor_logp) - np.exp(logp))
        else:
            weights = weights + hyper.beta * np.exp(anchor_tok_lp)
    grad = weighted_logprob_grad(policy, batch, weights, extra)
    return _finite_or_skip(grad, "policy")


def policy_grad(policy: TokenPolicy, anchor: AnchorState, reward_fn: Callable, prompt,
                y: Sequence[int], y2: Sequence[int], hyper: UpdateHyper) -> ParamVector:
    """Policy update direction for one ordered pair.

    ``reward_fn(prompt, y, y2)`` returns the reward model's p(y beats y2).
    """
    check_response(y, policy.vocab, policy.max_response_len)
    check_response(y2, policy.vocab, policy.max_response_len)
    p = float(reward_fn(prompt, y, y2))
    return policy_grad_batch(policy, anchor, [prompt], [y], [p], hyper)


def ema_update(anchor: AnchorState, new_params: ParamVector) -> AnchorState:
    check_same_shape(anchor.anchor_params, new_params, "anchor")
    eta = anchor.eta
    values = eta * anchor.anchor_params.values + (1.0 - eta) * new_params.values
    return replace(anchor, anchor_params=anchor.anchor_params.with_values(values))


def accumulate_and_apply(grads: Sequence[ParamVector], clip_norm: float, opt: OptimizerState,
                         params: ParamVector) -> tuple[ParamVector, OptimizerState]:
    """Sum, clip the sum, then take one AdamW step.

    Raises :class:`UpdateSkipped` before touching any state if a summand is
    non-finite.
    """
    for i, g in enumerate(grads):
        check_same_shape(g, params, "gradient")
        if not np.all(np.isfinite(g.values)):
            raise UpdateSkipped(f"non-finite gradient in summand {i}", {"summand": i})
    total = clip_global_norm(sum_params(grads, params), clip_norm)
    return adamw_step(opt, params, total)
