"""Simulated rater and synthetic prompt corpus.

The rater scores each response with a hidden reward, turns the two scores
into a Bradley-Terry preference probability and samples a Bernoulli choice.
Two hidden rewards are available:

``task``
    Each prompt has a hidden target string, the prompt's tokens pushed
    through a secret permutation.  The raw score is a weighted sum of
    positional matches, multiset overlap and a length penalty, normalized
    by the target length.
``network``
    A fixed, randomly initialized reward network from the learner's
    architecture family but at least four times wider.

Either way the score is multiplied by a scale chosen at construction so
that preference probabilities between random responses have a standard
deviation near ``calibration_target``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .kernels import ParamVector, sigmoid
from .policy import PolicyArch, SequenceBatch, Vocabulary, init_policy, prompt_tokens
from .reward import RewardModel, choice_prob, init_reward_model, reward_batch
from .seeding import stream

SPLITS = ("train", "test", "eval")


@dataclass(frozen=True)
class Prompt:
    id: int
    tokens: tuple[int, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ConfigurationError("prompts must be non-empty")


@dataclass
class PromptCorpus:
    train: list[Prompt]
    test: list[Prompt]
    eval: list[Prompt]

    def split(self, name: str) -> list[Prompt]:
        if name not in SPLITS:
            raise ConfigurationError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)


def build_corpus(sizes: Sequence[int], prompt_len: int, vocab: Vocabulary, seed: int) -> PromptCorpus:
    """Unique random prompts of length ``prompt_len`` drawn from non-terminator tokens."""
    sizes = [int(s) for s in sizes]
    if len(sizes) != 3 or min(sizes) < 1:
        raise ConfigurationError(f"corpus needs three split sizes >= 1, got {sizes}")
    alphabet = [t for t in range(vocab.size) if t != vocab.terminator_token]
    space = len(alphabet) ** prompt_len
    total = sum(sizes)
    if total > space:
        raise ConfigurationError(f"{total} prompts requested but only {space} distinct prompts exist")
    rng = stream(seed, "corpus")
    if space <= 50_000_000:
        codes = rng.choice(space, size=total, replace=False)
    else:
        seen: set[int] = set()
        codes = []
        while len(codes) < total:
            c = int(rng.integers(space))
            if c not in seen:
                seen.add(c)
                codes.append(c)
    base = len(alphabet)
    prompts = []
    for pid, code in enumerate(codes):
        code = int(code)
        toks = []
        for _ in range(prompt_len):
            code, d = divmod(code, base)
            toks.append(alphabet[d])
        prompts.append(Prompt(pid, tuple(toks)))
    a, b = sizes[0], sizes[0] + sizes[1]
    return PromptCorpus(prompts[:a], prompts[a:b], prompts[b:])


def write_prompts(path, prompts: Sequence[Prompt]) -> None:
    """One prompt per line: ``<id>\\t<space separated token ids>``."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(f"{p.id}\t{' '.join(str(t) for t in p.tokens)}\n")


def read_prompts(path) -> list[Prompt]:
    prompts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                pid, toks = line.split("\t")
                prompts.append(Prompt(int(pid), tuple(int(t) for t in toks.split())))
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: malformed prompt line") from exc
    return prompts


def export_corpus(corpus: PromptCorpus, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_prompts(directory / f"{name}.txt", corpus.split(name))


def import_corpus(directory) -> PromptCorpus:
    directory = Path(directory)
    return PromptCorpus(*(read_prompts(directory / f"{name}.txt") for name in SPLITS))


# --------------------------------------------------------------------------
# Oracle


@dataclass(frozen=True)
class TaskWeights:
    position: float = 1.0
    overlap: float = 0.5
    length: float = 0.5


@dataclass
class Oracle:
    kind: str
    seed: int
    arch: PolicyArch
    scale: float = 1.0
    hidden_params: ParamVector | None = None
    weights: TaskWeights = field(default_factory=TaskWeights)
    network: RewardModel | None = None

    def fingerprint(self) -> str:
        return self.hidden_params.digest()

    @property
    def param_count(self) -> int:
        return self.hidden_params.values.size


def _permutation(vocab: Vocabulary, rng: np.random.Generator) -> np.ndarray:
    """Map from token id to hidden target token; the terminator maps to itself."""
    others = np.array([t for t in range(vocab.size) if t != vocab.terminator_token])
    perm = np.arange(vocab.size)
    perm[others] = rng.permutation(others)
    return perm


def task_target(oracle: Oracle, prompt) -> tuple[int, ...]:
    """The hidden best response body (terminator excluded) for a prompt."""
    perm = oracle.hidden_params["permutation"].astype(np.int64)
    return tuple(int(perm[t]) for t in prompt_tokens(prompt))


def task_score(oracle: Oracle, prompt, response: Sequence[int]) -> float:
    """Unscaled task reward of one response."""
    target = task_target(oracle, prompt)
    term = oracle.arch.vocab.terminator_token
    body = [t for t in response if t != term]
    n = len(target)
    matches = sum(1 for a, b in zip(body, target) if a == b)
    overlap = sum((Counter(body) & Counter(target)).values())
    w = oracle.weights
    return (w.position * matches / n + w.overlap * overlap / n
            - w.length * abs(len(body) - n) / oracle.arch.max_response_len)


def max_task_score(oracle: Oracle) -> float:
    return oracle.weights.position + oracle.weights.overlap


def _raw_scores(oracle: Oracle, prompts: Sequence, responses: Sequence[Sequence[int]]) -> np.ndarray:
    if oracle.kind == "task":
        return np.array([task_score(oracle, p, r) for p, r in zip(prompts, responses)])
    batch = SequenceBatch(oracle.network.arch, list(prompts), list(responses))
    return reward_batch(oracle.network, batch)


def oracle_reward_batch(oracle: Oracle, prompts: Sequence, responses: Sequence[Sequence[int]]) -> np.ndarray:
    """Hidden reward of each (prompt, response)."""
    if len(responses) == 0:
        return np.zeros(0)
    return oracle.scale * _raw_scores(oracle, prompts, responses)


def oracle_rewards(oracle: Oracle, prompt, y1: Sequence[int], y2: Sequence[int]) -> tuple[float, float]:
    r = oracle_reward_batch(oracle, [prompt, prompt], [y1, y2])
    return float(r[0]), float(r[1])


def preference_prob(r1, r2):
    """P(first response chosen) under Bradley-Terry; same map as the learner's choice_prob."""
    return choice_prob(r1, r2)


def sample_choice(p: float, rng: np.random.Generator) -> bool:
    """True when the first response is chosen."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"probability {p} outside [0, 1]")
    return bool(rng.random() < p)


def random_responses(arch: PolicyArch, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Uniform random lengths and non-terminator tokens; used for calibration."""
    vocab = arch.vocab
    alphabet = np.array([t for t in range(vocab.size) if t != vocab.terminator_token])
    out = []
    for _ in range(n):
        body = rng.choice(alphabet, size=int(rng.integers(0, arch.max_response_len)))
        out.append(tuple(int(t) for t in body) + (vocab.terminator_token,))
    return out


def calibrate_scale(raw_diffs: np.ndarray, target_std: float) -> float:
    """Scale s with std(sigmoid(s * d)) == target_std, found by bisection in log space."""
    raw_diffs = np.asarray(raw_diffs, dtype=np.float64)
    if not np.any(raw_diffs != 0):
        raise ConfigurationError("oracle scores are constant on the calibration sample")

    def spread(s):
        return float(np.std(sigmoid(s * raw_diffs)))

    lo, hi = 1e-6, 1.0
    while spread(hi) < target_std:
        hi *= 2.0
        if hi > 1e8:
            raise ConfigurationError("could not reach the calibration target")
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        if spread(mid) < target_std:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def make_oracle(kind: str, arch: PolicyArch, seed: int, corpus_prompts: Sequence,
                weights: TaskWeights | None = None, calibration_target: float = 0.2,
                calibration_pairs: int = 2000, width_factor: int = 4,
                learner_param_count: int | None = None) -> Oracle:
    """Build and calibrate an oracle.

    ``corpus_prompts`` supplies prompts for the calibration pairs.  For the
    network kind, ``learner_param_count`` enables the capacity check.
    """
    rng = stream(seed, "oracle", kind)
    if kind == "task":
        perm = _permutation(arch.vocab, rng)
        oracle = Oracle("task", seed, arch, hidden_params=ParamVector.from_segments(
            {"permutation": perm.astype(np.float64)}), weights=weights or TaskWeights())
    elif kind == "network":
        if width_factor < 4:
            raise ConfigurationError("network oracle must be at least 4x wider than the learner")
        wide = PolicyArch(arch.vocab, arch.prompt_len, arch.window, arch.embed_dim * width_factor,
                          tuple(h * width_factor for h in arch.hidden), arch.max_response_len)
        net_policy = init_policy(wide, rng)
        net = init_reward_model(net_policy, rng, head_widths=(32 * width_factor, 32 * width_factor))
        oracle = Oracle("network", seed, arch, hidden_params=net.params, network=net)
        if learner_param_count is not None and oracle.param_count <= learner_param_count:
            raise ConfigurationError(
                f"oracle has {oracle.param_count} parameters, learner has {learner_param_count}")
    else:
        raise ConfigurationError(f"unknown oracle kind {kind!r}")
    cal = stream(seed, "oracle", "calibration")
    prompts = [corpus_prompts[int(i)] for i in cal.integers(len(corpus_prompts), size=calibration_pairs)]
    ya = random_responses(arch, calibration_pairs, cal)
    yb = random_responses(arch, calibration_pairs, cal)
    diffs = _raw_scores(oracle, prompts, ya) - _raw_scores(oracle, prompts, yb)
    oracle.scale = calibrate_scale(diffs, calibration_target)
    return oracle
