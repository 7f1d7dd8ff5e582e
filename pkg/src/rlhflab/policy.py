"""Small autoregressive token policy.

The network is a fixed-context causal model: the embeddings of every prompt
slot, of the last ``window`` response tokens and of the current position are
concatenated and fed through a tanh MLP (the *trunk*).  The trunk's activated
output is the last-layer embedding; a linear map turns it into next-token
logits.  Reward models reuse the same trunk code with their own copy of the
weights, which is why the trunk and the batching helpers live here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, LengthError
from .kernels import (MlpSpec, ParamVector, init_mlp, log_softmax, mlp_backward,
                      mlp_forward, softmax)

Response = tuple  # tuple[int, ...] ending in the terminator token


@dataclass(frozen=True)
class Vocabulary:
    size: int = 32
    terminator_token: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ConfigurationError("vocabulary needs at least two tokens")
        if not 0 <= self.terminator_token < self.size:
            raise ConfigurationError("terminator_token must be a valid token id")

    @property
    def pad(self) -> int:
        """Embedding row reserved for empty context slots."""
        return self.size


@dataclass(frozen=True)
class PolicyArch:
    vocab: Vocabulary = Vocabulary()
    prompt_len: int = 4
    window: int = 4
    embed_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    max_response_len: int = 16

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ConfigurationError("trunk needs at least one hidden width")
        if min(self.prompt_len, self.window, self.embed_dim, self.max_response_len) < 1:
            raise ConfigurationError(f"policy architecture sizes must be positive: {self}")

    @property
    def trunk_spec(self) -> MlpSpec:
        in_dim = (self.prompt_len + self.window + 1) * self.embed_dim
        return MlpSpec(in_dim, self.hidden[:-1], self.hidden[-1], activate_output=True)

    @property
    def embedding_dim(self) -> int:
        return self.hidden[-1]

    @property
    def out_spec(self) -> MlpSpec:
        return MlpSpec(self.embedding_dim, (), self.vocab.size)

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab.size, "terminator_token": self.vocab.terminator_token,
                "prompt_len": self.prompt_len, "window": self.window,
                "embed_dim": self.embed_dim, "hidden": list(self.hidden),
                "max_response_len": self.max_response_len}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyArch":
        return cls(Vocabulary(d["vocab_size"], d["terminator_token"]), d["prompt_len"],
                   d["window"], d["embed_dim"], tuple(d["hidden"]), d["max_response_len"])


def prompt_tokens(prompt) -> tuple[int, ...]:
    return tuple(int(t) for t in getattr(prompt, "tokens", prompt))


def check_response(response: Sequence[int], vocab: Vocabulary, max_len: int) -> None:
    if not 1 <= len(response) <= max_len:
        raise ConfigurationError(f"response length {len(response)} outside [1, {max_len}]")
    if response[-1] != vocab.terminator_token:
        raise ConfigurationError("response must end with the terminator token")
    if any(t == vocab.terminator_token for t in response[:-1]):
        raise ConfigurationError("terminator may only appear as the final token")
    if any(not 0 <= t < vocab.size for t in response):
        raise ConfigurationError("response token outside the vocabulary")


# --------------------------------------------------------------------------
# Trunk


def init_trunk(arch: PolicyArch, rng: np.random.Generator) -> ParamVector:
    v = arch.vocab.size
    embed = rng.standard_normal((v + 1, arch.embed_dim))
    embed[arch.vocab.pad] = 0.0
    pos = rng.standard_normal((arch.max_response_len + 1, arch.embed_dim))
    mlp = init_mlp(arch.trunk_spec, rng)
    segments = {"embed": embed, "pos": pos}
    segments.update({f"mlp.{n}": mlp[n] for n in mlp.layout})
    return ParamVector.from_segments(segments)


@dataclass
class Contexts:
    """Row-wise trunk inputs: prompt slots, response window, position."""

    prompt: np.ndarray   # (R, prompt_len) int
    window: np.ndarray   # (R, window) int
    position: np.ndarray  # (R,) int

    def __len__(self):
        return self.position.shape[0]


def trunk_inputs(arch: PolicyArch, params: ParamVector, ctx: Contexts) -> np.ndarray:
    embed = params["embed"]
    r = len(ctx)
    return np.concatenate([embed[ctx.prompt].reshape(r, -1),
                           embed[ctx.window].reshape(r, -1),
                           params["pos"][ctx.position]], axis=1)


def trunk_forward(arch: PolicyArch, params: ParamVector, ctx: Contexts) -> np.ndarray:
    """Last-layer embeddings, one row per context."""
    x = trunk_inputs(arch, params, ctx)
    return mlp_forward(arch.trunk_spec, params.subset("mlp"), x)


def trunk_backward(arch: PolicyArch, params: ParamVector, ctx: Contexts,
                   cotangent: np.ndarray) -> ParamVector:
    x = trunk_inputs(arch, params, ctx)
    g_mlp, g_x = mlp_backward(arch.trunk_spec, params.subset("mlp"), x, cotangent)
    grad = params.zeros_like()
    grad.subset("mlp").values[:] = g_mlp.values
    d, p, w = arch.embed_dim, arch.prompt_len, arch.window
    g_embed = grad["embed"]
    np.add.at(g_embed, ctx.prompt.ravel(), g_x[:, :p * d].reshape(-1, d))
    np.add.at(g_embed, ctx.window.ravel(), g_x[:, p * d:(p + w) * d].reshape(-1, d))
    np.add.at(grad["pos"], ctx.position, g_x[:, (p + w) * d:])
    return grad


class SequenceBatch:
    """Prompts and complete responses packed into padded integer arrays."""

    def __init__(self, arch: PolicyArch, prompts: Sequence, responses: Sequence[Sequence[int]]):
        if len(prompts) != len(responses):
            raise ConfigurationError("prompts and responses differ in count")
        self.arch = arch
        pad = arch.vocab.pad
        s, big_l = len(responses), arch.max_response_len
        self.prompts = pack_prompts(arch, prompts)
        self.lengths = np.array([len(r) for r in responses], dtype=np.int64)
        if s and (self.lengths.min() < 1 or self.lengths.max() > big_l):
            raise LengthError(f"response lengths must lie in [1, {big_l}]")
        self.tokens = np.full((s, big_l), pad, dtype=np.int64)
        for i, r in enumerate(responses):
            self.tokens[i, :len(r)] = r
        mask = np.arange(big_l)[None, :] < self.lengths[:, None]
        self.row_seq, self.row_step = np.nonzero(mask)

    def __len__(self):
        return self.tokens.shape[0]

    def _windows(self, prefix_len: np.ndarray) -> np.ndarray:
        w = self.arch.window
        ext = np.concatenate([np.full((len(self), w), self.arch.vocab.pad, dtype=np.int64),
                              self.tokens], axis=1)
        return ext[self.row_seq[:, None], prefix_len[:, None] + np.arange(w)[None, :]]

    def policy_contexts(self) -> Contexts:
        """One row per emitted token: the context it was predicted from."""
        return Contexts(self.prompts[self.row_seq], self._windows(self.row_step), self.row_step)

    def reward_contexts(self) -> Contexts:
        """One row per emitted token: the context just after it."""
        after = self.row_step + 1
        return Contexts(self.prompts[self.row_seq], self._windows(after), after)

    @property
    def targets(self) -> np.ndarray:
        return self.tokens[self.row_seq, self.row_step]


def pack_prompts(arch: PolicyArch, prompts: Sequence) -> np.ndarray:
    out = np.full((len(prompts), arch.prompt_len), arch.vocab.pad, dtype=np.int64)
    for i, p in enumerate(prompts):
        toks = prompt_tokens(p)
        if not 1 <= len(toks) <= arch.prompt_len:
            raise LengthError(f"prompt length {len(toks)} outside [1, {arch.prompt_len}]")
        out[i, :len(toks)] = toks
    return out


# --------------------------------------------------------------------------
# Policy


@dataclass
class TokenPolicy:
    arch: PolicyArch
    params: ParamVector

    @property
    def vocab(self) -> Vocabulary:
        return self.arch.vocab

    @property
    def max_response_len(self) -> int:
        return self.arch.max_response_len

    def with_params(self, params: ParamVector) -> "TokenPolicy":
        return TokenPolicy(self.arch, params)


def init_policy(arch: PolicyArch, rng: np.random.Generator, output_scale: float = 0.1) -> TokenPolicy:
    """Random policy whose small output layer keeps next-token distributions near uniform."""
    trunk = init_trunk(arch, rng)
    out = init_mlp(arch.out_spec, rng, output_scale=output_scale)
    return TokenPolicy(arch, ParamVector.concat({"backbone": trunk, "out": out}))


def _logits(policy: TokenPolicy, ctx: Contexts) -> np.ndarray:
    h = trunk_forward(policy.arch, policy.params.subset("backbone"), ctx)
    return mlp_forward(policy.arch.out_spec, policy.params.subset("out"), h)


def _context_for(arch: PolicyArch, prompts: np.ndarray, generated: np.ndarray, step: int) -> Contexts:
    w = arch.window
    ext = np.concatenate([np.full((generated.shape[0], w), arch.vocab.pad, dtype=np.int64),
                          generated], axis=1)
    return Contexts(prompts, ext[:, step:step + w], np.full(prompts.shape[0], step, dtype=np.int64))


def next_token_dist(policy: TokenPolicy, prompt, partial: Sequence[int]) -> np.ndarray:
    arch = policy.arch
    if len(partial) >= arch.max_response_len:
        raise LengthError(f"partial response of length {len(partial)} leaves no room "
                          f"under max_response_len={arch.max_response_len}")
    gen = np.full((1, arch.max_response_len), arch.vocab.pad, dtype=np.int64)
    gen[0, :len(partial)] = partial
    ctx = _context_for(arch, pack_prompts(arch, [prompt]), gen, len(partial))
    return softmax(_logits(policy, ctx))[0]


def topk_pick(probs: np.ndarray, k: int, u: np.ndarray) -> np.ndarray:
    """Vectorized top-K inverse-CDF draw; rows of ``probs`` paired with uniforms ``u``.

    Ties at the K-th rank go to the lowest token id.
    """
    n = probs.shape[-1]
    if not 1 <= k <= n:
        raise ConfigurationError(f"K={k} outside [1, {n}]")
    order = np.argsort(-probs, axis=-1, kind="stable")[:, :k]
    if k == 1:
        return order[:, 0]
    top = np.take_along_axis(probs, order, axis=-1)
    cum = np.cumsum(top, axis=-1)
    cum /= cum[:, -1:]
    pick = (cum[:, :-1] <= u[:, None]).sum(axis=-1)
    return order[np.arange(order.shape[0]), pick]


def topk_conditional(dist: np.ndarray, k: int) -> np.ndarray:
    """The renormalized top-K distribution (zeros outside the top K)."""
    dist = np.asarray(dist, dtype=np.float64)
    order = np.argsort(-dist, kind="stable")[:k]
    out = np.zeros_like(dist)
    out[order] = dist[order] / dist[order].sum()
    return out


def topk_sample(dist, k: int, rng: np.random.Generator) -> int:
    dist = np.asarray(dist, dtype=np.float64)
    return int(topk_pick(dist[None, :], k, np.array([rng.random()]))[0])


def generate_batch(policy: TokenPolicy, prompts: Sequence, k: int,
                   uniforms: np.ndarray | None = None) -> list[Response]:
    """Sample one response per prompt; row i uses ``uniforms[i, step]`` for its draws.

    ``uniforms=None`` is only valid for ``k == 1``.
    """
    arch = policy.arch
    big_l, term = arch.max_response_len, arch.vocab.terminator_token
    n = len(prompts)
    if uniforms is None:
        if k != 1:
            raise ConfigurationError("uniforms are required for K > 1")
        uniforms = np.zeros((n, big_l))
    packed = pack_prompts(arch, prompts)
    gen = np.full((n, big_l), arch.vocab.pad, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for step in range(big_l):
        if active.size == 0:
            break
        if step == big_l - 1:
            tok = np.full(active.size, term)
        else:
            ctx = _context_for(arch, packed[active], gen[active], step)
            probs = softmax(_logits(policy, ctx))
            tok = topk_pick(probs, k, uniforms[active, step])
        gen[active, step] = tok
        done = tok == term
        lengths[active[done]] = step + 1
        active = active[~done]
    return [tuple(int(t) for t in gen[i, :lengths[i]]) for i in range(n)]


def generate(policy: TokenPolicy, prompt, k: int, rng: np.random.Generator | None = None) -> Response:
    u = None if rng is None else rng.random((1, policy.arch.max_response_len))
    return generate_batch(policy, [prompt], k, u)[0]


def row_log_probs(policy: TokenPolicy, batch: SequenceBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-token log-probabilities of the realized tokens, plus full log-softmax rows."""
    logp = log_softmax(_logits(policy, batch.policy_contexts()))
    return logp[np.arange(logp.shape[0]), batch.targets], logp


def sequence_logprobs(policy: TokenPolicy, batch: SequenceBatch) -> np.ndarray:
    tok_lp, _ = row_log_probs(policy, batch)
    return np.bincount(batch.row_seq, weights=tok_lp, minlength=len(batch))


def logit_cotangent_grad(policy: TokenPolicy, batch: SequenceBatch, cot_logits: np.ndarray) -> ParamVector:
    """Backpropagate a per-row cotangent on the logits to all policy parameters."""
    arch, params = policy.arch, policy.params
    ctx = batch.policy_contexts()
    trunk = params.subset("backbone")
    h = trunk_forward(arch, trunk, ctx)
    g_out, g_h = mlp_backward(arch.out_spec, params.subset("out"), h, cot_logits)
    g_trunk = trunk_backward(arch, trunk, ctx, g_h)
    grad = params.zeros_like()
    grad.subset("backbone").values[:] = g_trunk.values
    grad.subset("out").values[:] = g_out.values
    return grad


def weighted_logprob_grad(policy: TokenPolicy, batch: SequenceBatch, row_weights: np.ndarray,
                          extra_cotangent: np.ndarray | None = None) -> ParamVector:
    """Gradient of ``sum_rows w_row * ln pi(token_row | context_row)``.

    ``extra_cotangent`` is added to the logits cotangent before backprop.
    """
    _, logp = row_log_probs(policy, batch)
    probs = np.exp(logp)
    cot = -probs * row_weights[:, None]
    cot[np.arange(cot.shape[0]), batch.targets] += row_weights
    if extra_cotangent is not None:
        cot = cot + extra_cotangent
    return logit_cotangent_grad(policy, batch, cot)


def logprob_and_grad(policy: TokenPolicy, prompt, response: Sequence[int]) -> tuple[float, ParamVector]:
    """ln pi(response | prompt) summed over tokens, and its exact parameter gradient."""
    check_response(response, policy.vocab, policy.max_response_len)
    batch = SequenceBatch(policy.arch, [prompt], [response])
    tok_lp, _ = row_log_probs(policy, batch)
    if not np.all(np.isfinite(tok_lp)):
        raise FloatingPointError("zero-probability token under the policy")
    grad = weighted_logprob_grad(policy, batch, np.ones(tok_lp.shape[0]))
    return float(tok_lp.sum()), grad
