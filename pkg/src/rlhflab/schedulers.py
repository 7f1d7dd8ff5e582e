"""The four training schedules: offline, periodic, online and information-directed.

All four share one runner that owns query accounting, keyed random streams
and logging.  Every oracle query produces exactly one :class:`ChoiceRecord`,
so the number of records is the x-axis of every win-rate curve.

Random streams are keyed by purpose, batch and prompt id (see
:mod:`rlhflab.seeding`); reruns with the same config reproduce every record.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .config import RunConfig, from_flat
from .errors import UpdateSkipped
from .evaluation import WinRateEvaluator, WinRateReport, best_checkpoint
from .kernels import AdamWHyper, OptimizerState, ParamVector, adamw_step, clip_global_norm, sigmoid
from .oracle import (Oracle, Prompt, PromptCorpus, TaskWeights, build_corpus, make_oracle,
                     oracle_rewards, preference_prob, sample_choice)
from .policy import (PolicyArch, Response, SequenceBatch, TokenPolicy, Vocabulary, generate_batch,
                     init_policy)
from .reward import (EnnRewardModel, RewardModel, dedup_rewards, diff_head_grad, init_enn,
                     init_reward_model, particle_offsets, pooled_embeddings, reward_batch,
                     select_infomax)
from .seeding import stream
from .updates import AnchorState, UpdateHyper, accumulate_and_apply, ema_update, policy_grad_batch, \
    reward_grad_batch

log = logging.getLogger(__name__)


class PairSelectionScheme(str, Enum):
    RANDOM_PAIR = "random-pair"
    REVERSED_DUPLICATE = "reversed-duplicate"
    RANK_EXTREMES_2 = "rank-extremes-2"
    RANK_EXTREMES_4 = "rank-extremes-4"


def rank_order(rewards: Sequence[float]) -> np.ndarray:
    """Indices from highest to lowest reward; equal rewards rank lower index first."""
    return np.argsort(-np.asarray(rewards, dtype=np.float64), kind="stable")


def select_rank_pairs(responses: Sequence, rewards: Sequence[float],
                      scheme: PairSelectionScheme | str) -> list[tuple]:
    """Ordered response pairs picked by reward rank.

    ``rank-extremes-2`` gives (highest, lowest), (lowest, highest);
    ``rank-extremes-4`` adds (second-highest, second-lowest) and its reverse.
    """
    scheme = PairSelectionScheme(scheme)
    if len(responses) != len(rewards):
        raise ValueError("responses and rewards differ in length")
    idx = rank_pair_indices(rewards, scheme)
    return [(responses[i], responses[j]) for i, j in idx]


def rank_pair_indices(rewards: Sequence[float], scheme: PairSelectionScheme | str) -> list[tuple[int, int]]:
    scheme = PairSelectionScheme(scheme)
    need = {PairSelectionScheme.RANK_EXTREMES_2: 2, PairSelectionScheme.RANK_EXTREMES_4: 4}
    if scheme not in need:
        raise ValueError(f"{scheme.value} is not a rank-based scheme")
    if len(rewards) < need[scheme]:
        raise ValueError(f"{scheme.value} needs at least {need[scheme]} responses")
    order = rank_order(rewards)
    hi, lo = int(order[0]), int(order[-1])
    pairs = [(hi, lo), (lo, hi)]
    if scheme is PairSelectionScheme.RANK_EXTREMES_4:
        hi2, lo2 = int(order[1]), int(order[-2])
        pairs += [(hi2, lo2), (lo2, hi2)]
    return pairs


# --------------------------------------------------------------------------
# Records


@dataclass
class ChoiceRecord:
    prompt_id: int
    pair: tuple[Response, Response]
    first_chosen: bool
    batch_index: int
    selection: str
    generator_step: int
    variance: float | None = None
    query_indices: tuple[int, int] | None = None
    preference: float = 0.5
    candidates: list[Response] | None = field(default=None, repr=False, compare=False)

    @property
    def winner(self) -> Response:
        return self.pair[0] if self.first_chosen else self.pair[1]

    @property
    def loser(self) -> Response:
        return self.pair[1] if self.first_chosen else self.pair[0]

    def to_entry(self) -> dict:
        return {"type": "choice", "batch": self.batch_index, "prompt_id": self.prompt_id,
                "pair": [list(self.pair[0]), list(self.pair[1])],
                "first_chosen": self.first_chosen, "selection": self.selection,
                "variance": self.variance,
                "query_indices": list(self.query_indices) if self.query_indices else None,
                "preference": self.preference, "generator_step": self.generator_step}


@dataclass
class RunRecord:
    config: dict
    entries: list[dict] = field(default_factory=list)
    records: list[ChoiceRecord] = field(default_factory=list)
    checkpoints: dict[str, ParamVector] = field(default_factory=dict)
    policy: TokenPolicy | None = None
    baseline: TokenPolicy | None = None
    reward_model: RewardModel | EnnRewardModel | None = None
    final: WinRateReport | None = None
    query_models: dict[int, EnnRewardModel] = field(default_factory=dict)
    selected_checkpoint: int | None = None

    @property
    def num_choices(self) -> int:
        return len(self.records)

    def curve(self, split: str = "test") -> list[tuple[int, float]]:
        return [(e["n_choices"], e["win_rate"]) for e in self.entries
                if e["type"] == "eval" and e["split"] == split]

    def entries_of(self, kind: str) -> list[dict]:
        return [e for e in self.entries if e["type"] == kind]


# --------------------------------------------------------------------------
# Environment


@dataclass
class Environment:
    """Everything fixed before training starts: corpus, oracle, initial policy."""

    config: RunConfig
    corpus: PromptCorpus
    oracle: Oracle
    policy0: TokenPolicy
    evaluator: WinRateEvaluator


def policy_arch(cfg: RunConfig) -> PolicyArch:
    p = cfg.policy
    return PolicyArch(Vocabulary(p.vocab_size, p.terminator_token), cfg.corpus.prompt_len,
                      p.window, p.embed_dim, p.hidden, p.max_response_len)


def make_environment(cfg: RunConfig, corpus: PromptCorpus | None = None,
                     oracle: Oracle | None = None) -> Environment:
    seed = cfg.run.seed
    arch = policy_arch(cfg)
    if corpus is None:
        c = cfg.corpus
        corpus = build_corpus((c.train, c.test, c.eval), c.prompt_len, arch.vocab, seed)
    policy0 = init_policy(arch, stream(seed, "init", "policy"), cfg.policy.init_output_scale)
    if oracle is None:
        o = cfg.oracle
        learner = init_reward_model(policy0, stream(seed, "init", "reward"), cfg.head_widths)
        oracle = make_oracle(o.kind, arch, seed, corpus.train,
                             TaskWeights(o.w_position, o.w_overlap, o.w_length),
                             o.calibration_target, o.calibration_pairs, o.width_factor,
                             learner_param_count=learner.params.values.size)
    evaluator = WinRateEvaluator(policy0, oracle, {"test": corpus.test, "eval": corpus.eval})
    return Environment(cfg, corpus, oracle, policy0, evaluator)


class PromptStream:
    """Cycles through training prompts in corpus order."""

    def __init__(self, prompts: Sequence[Prompt], start: int = 0):
        self.prompts = prompts
        self.pos = start

    def next(self, n: int) -> list[Prompt]:
        size = len(self.prompts)
        out = [self.prompts[(self.pos + i) % size] for i in range(n)]
        self.pos += n
        return out


# --------------------------------------------------------------------------
# Shared machinery


class _Runner:
    def __init__(self, cfg: RunConfig, env: Environment, sink: Callable[[dict], None] | None):
        self.cfg = cfg
        self.env = env
        self.seed = cfg.run.seed
        self.sink = sink
        self.queries = 0
        self.record = RunRecord(config=cfg.to_flat(), baseline=env.policy0)
        u = cfg.update
        self.hyper = UpdateHyper(u.beta, u.epsilon, u.policy_clip, "current", u.full_kl)
        self.offline_hyper = UpdateHyper(u.beta, cfg.run.offline_epsilon, u.policy_clip,
                                         "final", u.full_kl)

    # -- plumbing
    def emit(self, entry: dict) -> None:
        self.record.entries.append(entry)
        if self.sink is not None:
            self.sink(entry)

    def adam(self, params: ParamVector, lr: float) -> OptimizerState:
        o = self.cfg.optim
        return OptimizerState.init(params, AdamWHyper(lr, o.beta1, o.beta2, o.eps,
                                                      o.weight_decay, maximize=True))

    def evaluate(self, policy: TokenPolicy, split: str, batch: int, checkpoint_id: str = "") -> WinRateReport:
        report = self.env.evaluator(policy, split, self.queries, checkpoint_id)
        self.emit({"type": "eval", "batch": batch, "n_choices": self.queries, "split": split,
                   "win_rate": report.win_rate, "checkpoint": checkpoint_id})
        return report

    def skip(self, batch: int, stage: str, exc: UpdateSkipped) -> None:
        log.warning("batch %d: %s update skipped: %s", batch, stage, exc)
        self.emit({"type": "skip", "batch": batch, "stage": stage, "message": str(exc),
                   "diagnostic": exc.diagnostic})

    # -- sampling and queries
    def sample(self, policy: TokenPolicy, prompts: Sequence[Prompt], m: int, *key) -> list[list[Response]]:
        big_l = policy.arch.max_response_len
        if not prompts:
            return []
        u = np.concatenate([stream(self.seed, *key, p.id).random((m, big_l)) for p in prompts])
        flat = generate_batch(policy, [p for p in prompts for _ in range(m)],
                              self.cfg.run.query_top_k, u)
        return [flat[i * m:(i + 1) * m] for i in range(len(prompts))]

    def query(self, batch: int, prompt: Prompt, y1: Response, y2: Response, selection: str,
              generator_step: int, variance=None, indices=None, candidates=None) -> ChoiceRecord:
        r1, r2 = oracle_rewards(self.env.oracle, prompt, y1, y2)
        p = float(preference_prob(r1, r2))
        first = sample_choice(p, stream(self.seed, "choice", batch, prompt.id))
        self.queries += 1
        rec = ChoiceRecord(prompt.id, (y1, y2), first, batch, selection, generator_step,
                           variance, indices, p, candidates)
        self.record.records.append(rec)
        self.emit(rec.to_entry())
        return rec

    # -- updates
    def reward_step(self, rm: RewardModel, opt: OptimizerState, prompts, winners, losers, batch: int):
        try:
            grad, p = reward_grad_batch(rm, prompts, winners, losers)
            params, opt = accumulate_and_apply([grad], self.cfg.update.reward_clip, opt, rm.params)
        except UpdateSkipped as exc:
            self.skip(batch, "reward", exc)
            return rm, opt, float("nan")
        return rm.with_params(params), opt, float(np.mean(np.log(p)))

    def policy_step(self, policy: TokenPolicy, anchor: AnchorState, opt: OptimizerState,
                    items: list[tuple[Prompt, Response, float]], hyper: UpdateHyper, batch: int,
                    stage: str):
        prompts = [it[0] for it in items]
        ys = [it[1] for it in items]
        probs = [it[2] for it in items]
        try:
            grad = policy_grad_batch(policy, anchor, prompts, ys, probs, hyper)
            params, opt = accumulate_and_apply([grad], hyper.clip_norm, opt, policy.params)
        except UpdateSkipped as exc:
            self.skip(batch, stage, exc)
            return policy, anchor, opt
        return policy.with_params(params), ema_update(anchor, params), opt

    def new_anchor(self, policy: TokenPolicy) -> AnchorState:
        return AnchorState(policy.params.copy(), self.cfg.update.eta)

    def finish(self, policy: TokenPolicy, rm) -> RunRecord:
        rec = self.record
        rec.policy = policy
        rec.reward_model = rm
        rec.final = self.env.evaluator(policy, "eval", self.queries, "final")
        self.emit({"type": "final", "n_choices": self.queries, "split": "eval",
                   "win_rate": rec.final.win_rate, "selected_checkpoint": rec.selected_checkpoint})
        return rec


def _pair_probs(rewards: np.ndarray, pairs: Sequence[tuple[int, int]]) -> list[float]:
    return [float(sigmoid(rewards[i] - rewards[j])) for i, j in pairs]


def _batch_rewards(rm: RewardModel, prompts: Sequence[Prompt], cands: list[list[Response]]) -> list[np.ndarray]:
    m = len(cands[0]) if cands else 0
    flat_p = [p for p in prompts for _ in range(m)]
    flat_y = [y for ys in cands for y in ys]
    r = reward_batch(rm, SequenceBatch(rm.arch, flat_p, flat_y))
    return [r[i * m:(i + 1) * m] for i in range(len(prompts))]


# --------------------------------------------------------------------------
# Offline and periodic


def _optimize_policy(runner: _Runner, rm: RewardModel, key: tuple) -> tuple[TokenPolicy, list, int]:
    """Policy optimization from theta_0 against a fixed reward model.

    Each prompt gets one top-K pair from the current policy and the same pair
    reversed.  Returns the checkpoint with the best test win rate.
    """
    cfg, env = runner.cfg, runner.env
    b = cfg.run.batch_size
    policy = env.policy0
    anchor = runner.new_anchor(policy)
    opt = runner.adam(policy.params, cfg.optim.policy_lr)
    prompts_it = PromptStream(env.corpus.train)
    checkpoints = [(0, policy.params.copy())]
    for s in range(1, cfg.run.offline_policy_steps + 1):
        prompts = prompts_it.next(b)
        pairs = runner.sample(policy, prompts, 2, "phase2", *key, s)
        rewards = _batch_rewards(rm, prompts, pairs)
        items = []
        for prompt, (y1, y2), r in zip(prompts, pairs, rewards):
            p12, p21 = _pair_probs(r, [(0, 1), (1, 0)])
            items += [(prompt, y1, p12), (prompt, y2, p21)]
        policy, anchor, opt = runner.policy_step(policy, anchor, opt, items, runner.offline_hyper,
                                                 s, "offline-policy")
        if s % cfg.run.checkpoint_interval == 0:
            checkpoints.append((s, policy.params.copy()))
    chosen = best_checkpoint([(cid, env.policy0.with_params(p)) for cid, p in checkpoints],
                             env.corpus.test, env.policy0, env.oracle, env.evaluator)
    return env.policy0.with_params(dict(checkpoints)[chosen]), checkpoints, chosen


def _fit_reward(runner: _Runner, data: list, on_batch: Callable | None = None) -> RewardModel:
    """Train a fresh reward model from phi_0 batch by batch over ``data``."""
    cfg, env = runner.cfg, runner.env
    rm = init_reward_model(env.policy0, stream(runner.seed, "init", "reward"), cfg.head_widths)
    opt = runner.adam(rm.params, cfg.optim.reward_lr)
    for i, (prompts, winners, losers) in enumerate(data, 1):
        for _ in range(cfg.run.offline_reward_epochs):
            rm, opt, _ = runner.reward_step(rm, opt, prompts, winners, losers, i)
        if on_batch is not None:
            on_batch(i, rm)
    return rm


def _run_rounds(cfg: RunConfig, env: Environment, sink, period: int) -> RunRecord:
    runner = _Runner(cfg, env, sink)
    r = cfg.run
    b = r.batch_size
    rounds = r.num_batches // period if r.num_batches else 0
    runner.evaluate(env.policy0, "test", 0, "theta_0")
    ps = PromptStream(env.corpus.train)
    generator, gen_step = env.policy0, 0
    data: list = []
    rm = init_reward_model(env.policy0, stream(runner.seed, "init", "reward"), cfg.head_widths)
    single = rounds == 1
    for k in range(1, rounds + 1):
        for bi in range((k - 1) * period + 1, k * period + 1):
            prompts = ps.next(b)
            pairs = runner.sample(generator, prompts, 2, "gen", bi)
            recs = [runner.query(bi, p, y1, y2, "random", gen_step) for p, (y1, y2) in zip(prompts, pairs)]
            data.append((prompts, [c.winner for c in recs], [c.loser for c in recs]))
            runner.emit({"type": "batch", "batch": bi, "n_choices": runner.queries})

        def intermediate(i, model):
            if single and i in r.offline_eval_points and i < len(data):
                pol, _, cid = _optimize_policy(runner, model, ("t", i))
                rep = env.evaluator(pol, "test", i * b, f"theta_{cid}")
                runner.emit({"type": "eval", "batch": i, "n_choices": i * b, "split": "test",
                             "win_rate": rep.win_rate, "checkpoint": f"theta_{cid}"})

        rm = _fit_reward(runner, data, intermediate)
        runner.emit({"type": "reward_fit", "period": k, "records": sum(len(d[0]) for d in data)})
        generator, checkpoints, chosen = _optimize_policy(runner, rm, ("round", k))
        gen_step = k * period
        runner.record.selected_checkpoint = chosen
        runner.record.checkpoints = {f"theta_{cid}": p for cid, p in checkpoints}
        for cid, p in checkpoints:
            runner.emit({"type": "checkpoint", "period": k, "step": cid, "digest": p.digest()})
        runner.evaluate(generator, "test", k * period, f"theta_{chosen}")
    return runner.finish(generator, rm)


def run_offline(cfg: RunConfig, env: Environment | None = None, sink=None) -> RunRecord:
    """Gather all batches from theta_0, fit the reward model, then optimize the policy."""
    env = env or make_environment(cfg)
    return _run_rounds(cfg, env, sink, max(cfg.run.num_batches, 1))


def run_periodic(cfg: RunConfig, env: Environment | None = None, sink=None) -> RunRecord:
    """Offline rounds of ``period`` batches, each retrained from scratch on all data so far."""
    env = env or make_environment(cfg)
    return _run_rounds(cfg, env, sink, cfg.run.period)


# --------------------------------------------------------------------------
# Online and information-directed


def _snapshot_enn(enn: EnnRewardModel) -> EnnRewardModel:
    base = enn.base.with_params(enn.base.params.copy())
    return EnnRewardModel(base, enn.prior_spec, enn.prior_params.copy(), enn.diff_spec,
                          enn.diff_params.copy(), enn.prior_scale)


def _update_diff_heads(runner: _Runner, enn: EnnRewardModel, opt: OptimizerState,
                       prompts, winners, losers, batch: int):
    """One step per differential head on the batch; backbone, point head and priors stay fixed."""
    s = len(winners)
    seqs = SequenceBatch(enn.arch, list(prompts) * 2, list(winners) + list(losers))
    emb = pooled_embeddings(enn.arch, enn.base.params.subset("backbone"), seqs)
    r = reward_batch(enn.base, seqs, emb)[None, :] + particle_offsets(enn, emb)
    p = sigmoid(r[:, :s] - r[:, s:])
    coeff = 1.0 - p
    grad = diff_head_grad(enn, emb, np.concatenate([coeff, -coeff], axis=1))
    try:
        clipped = []
        n = enn.ensemble_size
        for z in range(n):
            member = ParamVector.from_segments({k: grad[k][z] for k in grad.layout})
            clipped.append(clip_global_norm(member, runner.cfg.update.reward_clip))
        stacked = grad.zeros_like()
        for k in grad.layout:
            stacked[k][...] = np.stack([c[k] for c in clipped])
        params, opt = adamw_step(opt, enn.diff_params, stacked)
    except UpdateSkipped as exc:
        runner.skip(batch, "differential", exc)
        return enn, opt
    enn = EnnRewardModel(enn.base, enn.prior_spec, enn.prior_params, enn.diff_spec, params,
                         enn.prior_scale)
    return enn, opt


def _run_interactive(cfg: RunConfig, env: Environment, sink, ids: bool) -> RunRecord:
    runner = _Runner(cfg, env, sink)
    r = cfg.run
    b, m = r.batch_size, r.responses_per_prompt
    policy = env.policy0
    anchor = runner.new_anchor(policy)
    popt = runner.adam(policy.params, cfg.optim.policy_lr)
    init_rng = stream(runner.seed, "init", "reward")
    if ids:
        e = cfg.enn
        enn = init_enn(policy, init_rng, e.ensemble_size, cfg.head_widths, e.prior_widths,
                       e.diff_widths, e.prior_scale)
        point = enn.base
        dopt = runner.adam(enn.diff_params, cfg.optim.enn_lr)
        infomax = e.query == "infomax"
    else:
        enn, point, infomax = None, init_reward_model(policy, init_rng, cfg.head_widths), False
    ropt = runner.adam(point.params, cfg.optim.reward_lr)
    ps = PromptStream(env.corpus.train)
    runner.evaluate(policy, "test", 0)
    for t in range(1, r.num_batches + 1):
        prompts = ps.next(b)
        cands = runner.sample(policy, prompts, m, "gen", t)
        if infomax and r.record_query_models:
            runner.record.query_models[t] = _snapshot_enn(enn)
        recs, queried = [], []
        for prompt, ys in zip(prompts, cands):
            if infomax:
                i, j, var = select_infomax(dedup_rewards(enn, prompt, ys)[1:])
                sel = "infomax"
            else:
                i, j = (int(x) for x in stream(runner.seed, "pair", t, prompt.id).choice(m, 2, replace=False))
                var, sel = None, "random"
            queried.append((i, j))
            recs.append(runner.query(t, prompt, ys[i], ys[j], sel, t - 1, var, (i, j),
                                     ys if r.record_query_models else None))
        winners = [c.winner for c in recs]
        losers = [c.loser for c in recs]
        point, ropt, loglik = runner.reward_step(point, ropt, prompts, winners, losers, t)
        if ids:
            enn = EnnRewardModel(point, enn.prior_spec, enn.prior_params, enn.diff_spec,
                                 enn.diff_params, enn.prior_scale)
            if enn.ensemble_size:
                enn, dopt = _update_diff_heads(runner, enn, dopt, prompts, winners, losers, t)

        # sub-update 1: queried pair, its reverse, and the reward extremes
        items = []
        for prompt, ys, rw, (i, j) in zip(prompts, cands, _batch_rewards(point, prompts, cands), queried):
            idx = [(i, j), (j, i)] + rank_pair_indices(rw, PairSelectionScheme.RANK_EXTREMES_2)
            items += [(prompt, ys[a], p) for (a, _), p in zip(idx, _pair_probs(rw, idx))]
        runner.emit({"type": "policy_update", "batch": t, "sub": 1, "prompts": len(prompts),
                     "pairs": len(items)})
        policy, anchor, popt = runner.policy_step(policy, anchor, popt, items, runner.hyper, t, "policy-1")

        # sub-update 2: fresh prompts, no queries, four rank pairs each
        prompts2 = ps.next(b)
        cands2 = runner.sample(policy, prompts2, m, "gen2", t)
        items = []
        for prompt, ys, rw in zip(prompts2, cands2, _batch_rewards(point, prompts2, cands2)):
            idx = rank_pair_indices(rw, PairSelectionScheme.RANK_EXTREMES_4)
            items += [(prompt, ys[a], p) for (a, _), p in zip(idx, _pair_probs(rw, idx))]
        runner.emit({"type": "policy_update", "batch": t, "sub": 2, "prompts": len(prompts2),
                     "pairs": len(items)})
        policy, anchor, popt = runner.policy_step(policy, anchor, popt, items, runner.hyper, t, "policy-2")

        runner.emit({"type": "batch", "batch": t, "n_choices": runner.queries, "reward_loglik": loglik})
        if t % r.eval_every == 0 or t == r.num_batches:
            runner.evaluate(policy, "test", t)
    return runner.finish(policy, enn if ids else point)


def run_online(cfg: RunConfig, env: Environment | None = None, sink=None) -> RunRecord:
    """Interleaved reward and policy updates on freshly sampled responses."""
    env = env or make_environment(cfg)
    return _run_interactive(cfg, env, sink, ids=False)


def run_ids(cfg: RunConfig, env: Environment | None = None, sink=None) -> RunRecord:
    """Online RLHF with an epistemic reward model choosing maximally uncertain query pairs."""
    env = env or make_environment(cfg)
    return _run_interactive(cfg, env, sink, ids=True)


RUNNERS = {"offline": run_offline, "periodic": run_periodic, "online": run_online, "ids": run_ids}


def run(cfg: RunConfig, env: Environment | None = None, sink=None) -> RunRecord:
    return RUNNERS[cfg.run.algorithm](cfg, env, sink)


# --------------------------------------------------------------------------
# Estimator interface


class RLHFTrainer(BaseEstimator):
    """Estimator-style wrapper: ``fit`` trains, ``predict`` emits top-1 responses.

    ``config`` is a :class:`RunConfig` (or ``None`` for the profile defaults);
    ``seed`` overrides ``run.seed`` when given.
    """

    algorithm = "online"

    def __init__(self, config: RunConfig | None = None, profile: str = "desk-scale",
                 seed: int | None = None):
        self.config = config
        self.profile = profile
        self.seed = seed

    def _resolved_config(self) -> RunConfig:
        cfg = self.config if self.config is not None else from_flat({}, self.profile)
        over = {"run.algorithm": self.algorithm}
        if self.seed is not None:
            over["run.seed"] = int(self.seed)
        return cfg.replace(**over)

    def fit(self, X: PromptCorpus | None = None, y: Oracle | None = None, sink=None):
        """Train on corpus ``X`` against oracle ``y``; both default to the config's own."""
        cfg = self._resolved_config()
        self.environment_ = make_environment(cfg, X, y)
        self.record_ = run(cfg, self.environment_, sink)
        self.policy_ = self.record_.policy
        self.baseline_ = self.record_.baseline
        self.reward_model_ = self.record_.reward_model
        return self

    def predict(self, X: Sequence) -> list[Response]:
        from sklearn.utils.validation import check_is_fitted
        check_is_fitted(self, "policy_")
        return generate_batch(self.policy_, list(X), 1)

    def score(self, X: Sequence, y: Oracle | None = None) -> float:
        """Win rate of the trained policy over the baseline on prompts ``X``."""
        from .evaluation import win_rate
        oracle = y if y is not None else self.environment_.oracle
        return win_rate(self.policy_, self.baseline_, list(X), oracle).win_rate


class OfflineRLHF(RLHFTrainer):
    algorithm = "offline"


class PeriodicRLHF(RLHFTrainer):
    algorithm = "periodic"


class OnlineRLHF(RLHFTrainer):
    algorithm = "online"


class InfoDirectedRLHF(RLHFTrainer):
    algorithm = "ids"
