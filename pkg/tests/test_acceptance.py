"""Acceptance criteria 1 to 8. Each test prints one PASS/FAIL line.

Tolerances and thresholds here are fixed. The desk-scale experiments (6, 7)
share one set of runs through a module fixture.
"""

import math
import time

import numpy as np
import pytest

from _oracles import (assert_grad_close, brute_force_infomax, fd_grad, random_prompt,
                      random_response, straight_next_dist, tiny_policy)
from rlhflab.checkpoint import decode, encode
from rlhflab.config import from_flat
from rlhflab.kernels import MlpSpec, init_mlp, mlp_backward, mlp_forward
from rlhflab.policy import logprob_and_grad, next_token_dist
from rlhflab.reward import (choice_prob, enn_reward, ensemble_rewards, init_enn, init_reward_model,
                            reward, reward_batch, select_infomax)
from rlhflab.evaluation import ScalingFit, fit_scaling, project_gain
from rlhflab.policy import SequenceBatch
from rlhflab.runlog import RunLog, comparable_lines
from rlhflab.schedulers import make_environment, run
from rlhflab.seeding import stream
from rlhflab.updates import AnchorState, UpdateHyper, policy_grad, reward_grad

SEEDS = range(5)
ALGORITHMS = ("offline", "periodic", "online", "ids")
# tanking counts as present when the epsilon = 0 runs lose at least this much
# from their peak in a majority of seeds
TANKING_MIN_DEPTH = 0.02


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return emit


# 1. gradients


def _mlp_case(seed):
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in rng.integers(1, 5, size=int(rng.integers(0, 3))))
    spec = MlpSpec(int(rng.integers(1, 5)), widths, int(rng.integers(1, 4)),
                   activate_output=bool(rng.integers(2)))
    params = init_mlp(spec, rng)
    x, c = rng.standard_normal(spec.input_dim), rng.standard_normal(spec.output_dim)
    g, gx = mlp_backward(spec, params, x, c)
    assert_grad_close(g.values, fd_grad(lambda v: float(c @ mlp_forward(spec, params.with_values(v), x)),
                                        params.values))
    assert_grad_close(gx, fd_grad(lambda v: float(c @ mlp_forward(spec, params, v)), x))


def _logprob_case(seed):
    policy = tiny_policy(seed)
    rng = np.random.default_rng(seed)
    prompt, y = random_prompt(rng, policy.arch), random_response(rng, policy.arch)
    _, g = logprob_and_grad(policy, prompt, y)
    f = lambda v: logprob_and_grad(policy.with_params(policy.params.with_values(v)), prompt, y)[0]
    assert_grad_close(g.values, fd_grad(f, policy.params.values))


def _distinct(rng, arch):
    a = random_response(rng, arch)
    b = random_response(rng, arch)
    while b == a:
        b = random_response(rng, arch)
    return a, b


def _reward_case(seed):
    policy = tiny_policy(seed)
    rm = init_reward_model(policy, stream(seed, "rm"), () if seed % 2 else (3,))
    rng = np.random.default_rng(seed)
    prompt = random_prompt(rng, rm.arch)
    w, l = _distinct(rng, rm.arch)
    g = reward_grad(rm, prompt, w, l)

    def f(v):
        m = rm.with_params(rm.params.with_values(v))
        return math.log(choice_prob(reward(m, prompt, w), reward(m, prompt, l)))

    assert_grad_close(g.values, fd_grad(f, rm.params.values))


def _policy_case(seed):
    policy = tiny_policy(seed, output_scale=2.0)
    rng = np.random.default_rng(seed)
    prompt = random_prompt(rng, policy.arch)
    y, y2 = _distinct(rng, policy.arch)
    p = float(rng.uniform(0, 1))
    hyper = UpdateHyper(beta=float(rng.uniform(0, 1)), epsilon=float(rng.uniform(0, 0.1)))
    g = policy_grad(policy, AnchorState(policy.params.copy(), 0.99), lambda *_: p, prompt, y, y2, hyper)
    anchor_probs = [straight_next_dist(policy, prompt, y[:s])[t] for s, t in enumerate(y)]

    def objective(v):
        pol = policy.with_params(policy.params.with_values(v))
        lps = [math.log(next_token_dist(pol, prompt, y[:s])[t]) for s, t in enumerate(y)]
        return (p - 0.5 + hyper.epsilon) * sum(lps) + hyper.beta * sum(
            a * lp for a, lp in zip(anchor_probs, lps))

    assert_grad_close(g.values, fd_grad(objective, policy.params.values))


def test_criterion_1_gradients(report):
    start = time.perf_counter()
    failures = {}
    for name, case in [("mlp_backward", _mlp_case), ("logprob_and_grad", _logprob_case),
                       ("reward_grad", _reward_case), ("policy_grad", _policy_case)]:
        for seed in range(100):
            try:
                case(seed)
            except AssertionError:
                failures.setdefault(name, []).append(seed)
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    report(1, ok, f"4 x 100 seeds, failures {failures or 'none'}, {elapsed:.1f}s")
    assert ok


# 2. Bradley-Terry


def test_criterion_2_bradley_terry(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 5, 1000), rng.normal(0, 5, 1000)
    anti = np.max(np.abs(choice_prob(a, b) + choice_prob(b, a) - 1.0))
    grid = np.linspace(-20, 20, 2001)
    p = choice_prob(grid, 0.0)
    mono = bool(np.all(np.diff(p) > 0))
    values = [choice_prob(1.0, 1.0), choice_prob(math.log(3), 0.0), choice_prob(2.0, 0.0)]
    expected = [0.5, 0.75, 0.8807970779778823]
    err = max(abs(v - e) for v, e in zip(values, expected))
    elapsed = time.perf_counter() - start
    ok = anti <= 1e-9 and mono and err <= 1e-9 and elapsed < 1
    report(2, ok, f"antisymmetry {anti:.1e}, monotone {mono}, analytic error {err:.1e}, {elapsed:.3f}s")
    assert ok


# 3. infomax


def _instance(rng, m=16):
    n = int(rng.integers(2, 12))
    r = rng.standard_normal((n, m)) * rng.choice([0.1, 1.0, 5.0])
    kind = rng.integers(4)
    if kind == 1:
        for _ in range(int(rng.integers(1, 6))):
            i, j = rng.choice(m, 2, replace=False)
            r[:, j] = r[:, i]
    elif kind == 2:
        r[:] = r[0]
    elif kind == 3:
        r = np.round(r * 2) / 2
    return r


def test_criterion_3_infomax(report):
    start = time.perf_counter()
    rng = np.random.default_rng(31337)
    mismatches = 0
    for _ in range(1000):
        r = _instance(rng)
        i, j, _ = select_infomax(r)
        mismatches += (i, j) != brute_force_infomax(r)[0]
    # the same check through the model: particle rewards of real responses
    enn = init_enn(tiny_policy(0), stream(0, "enn"), 6, (3,), (2,), (3,))
    prompt_rng = np.random.default_rng(1)
    prompt = random_prompt(prompt_rng, enn.arch)
    ys = [random_response(prompt_rng, enn.arch) for _ in range(16)]
    r = ensemble_rewards(enn, SequenceBatch(enn.arch, [prompt] * 16, ys))[1:]
    mismatches += select_infomax(r)[:2] != brute_force_infomax(r)[0]
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    report(3, ok, f"1001 instances with m = 16, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


# 4. structural fidelity


def _desk(algorithm, **kw):
    return from_flat({"run.algorithm": algorithm, "run.num_batches": 50, "run.period": 25,
                      "run.offline_policy_steps": 50, **kw}, "desk-scale")


def test_criterion_4_structure(report):
    checks = {}
    cfg = _desk("ids")
    env = make_environment(cfg)
    e = cfg.enn
    initial = init_enn(env.policy0, stream(cfg.run.seed, "init", "reward"), e.ensemble_size,
                       cfg.head_widths, e.prior_widths, e.diff_widths, e.prior_scale)
    ids = run(cfg, env)
    checks["prior hash"] = ids.reward_model.prior_params.digest() == initial.prior_params.digest()

    enn = ids.reward_model
    prompts = [p.tokens for p in env.corpus.test]
    ys = [r.pair[0] for r in ids.records[:len(prompts)]]
    z0 = all(enn_reward(enn, x, y, 0) == reward(enn.base, x, y) for x, y in zip(prompts, ys))
    # batched and single-row evaluation may differ in the last bit, so compare like with like
    batch = SequenceBatch(enn.arch, prompts, ys)
    z0 &= ensemble_rewards(enn, batch)[0].tobytes() == reward_batch(enn.base, batch).tobytes()
    checks["Z=0 bitwise"] = z0

    off = run(_desk("offline"))
    per = run(_desk("periodic", **{"run.period": 50}))
    checks["periodic tau=T"] = (per.records == off.records and per.entries == off.entries
                                and per.policy.params.values.tobytes() == off.policy.params.values.tobytes())

    budget = True
    for alg, rec in (("offline", off), ("periodic", run(_desk("periodic"))), ("online", run(_desk("online"))),
                     ("ids", ids)):
        b, t = rec.config["run.batch_size"], rec.config["run.num_batches"]
        choices = len(rec.entries_of("choice"))
        budget &= rec.num_choices == choices == b * t == rec.final.num_choices
        budget &= rec.curve()[-1][0] == b * t
    checks["query budget"] = budget
    ok = all(checks.values())
    report(4, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok


# 5. scaling law


def _law(a, b, n):
    return 1.0 - 0.5 * (n / a) ** (-b)


def test_criterion_5_scaling_law(report):
    start = time.perf_counter()
    grid = np.array([2e3, 1e4, 1e5, 1e6])
    worst = 0.0
    for a, b in [(1000.0, 0.3), (50.0, 0.1), (2e4, 0.6)]:
        fit = fit_scaling(list(zip(grid * a / 1000, _law(a, b, grid * a / 1000))))
        worst = max(worst, abs(fit.a / a - 1), abs(fit.b / b - 1))
    bs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        w = _law(1000.0, 0.3, grid) + rng.normal(0, 0.005, grid.size)
        bs.append(fit_scaling(list(zip(grid, w))).b)
    median_err = abs(np.median(bs) / 0.3 - 1)
    f, off = ScalingFit(700.0, 0.4, 0.0, 4), ScalingFit(7000.0, 0.4, 0.0, 4)
    same = max(abs(project_gain(f, f, n) - 1) for n in (1e3, 1e5, 1e7))
    ratio = max(abs(project_gain(f, off, n) / 10 - 1) for n in (1e4, 1e5, 1e7))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and median_err <= 0.1 and same <= 1e-12 and ratio <= 1e-12 and elapsed < 10
    report(5, ok, f"noiseless rel err {worst:.1e}, noisy median b err {median_err:.1%}, "
                  f"identity err {same:.1e}, ratio err {ratio:.1e}, {elapsed:.2f}s")
    assert ok


# 6 and 7. desk-scale experiments


@pytest.fixture(scope="module")
def desk_runs():
    start = time.perf_counter()
    results = {}
    for seed in SEEDS:
        for alg in ("offline", "online", "ids"):
            results[alg, seed] = run(from_flat({"run.algorithm": alg, "run.seed": seed}, "desk-scale"))
        results["online-eps0", seed] = run(from_flat(
            {"run.algorithm": "online", "run.seed": seed, "update.epsilon": 0.0}, "desk-scale"))
    return results, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_6_directional(report, desk_runs):
    runs, elapsed = desk_runs
    final = {k: r.final.win_rate for k, r in runs.items()}
    assert all(runs[k].final.split == "eval" for k in runs)
    assert all(runs["offline", s].final.num_choices == runs["online", s].final.num_choices for s in SEEDS)
    a = sum(final["online", s] > final["offline", s] for s in SEEDS)
    b = sum(final["ids", s] >= final["online", s] for s in SEEDS)
    c = sum(all(final[alg, s] > 0.5 for alg in ("offline", "online", "ids")) for s in SEEDS)
    table = "; ".join(f"seed {s}: off {final['offline', s]:.3f} on {final['online', s]:.3f} "
                      f"ids {final['ids', s]:.3f}" for s in SEEDS)
    ok = a >= 4 and b >= 3 and c == 5
    report(6, ok, f"(a) online > offline {a}/5, (b) ids >= online {b}/5, (c) all > 0.5 {c}/5; "
                  f"{table}; {elapsed / 60:.1f} min for all desk runs")
    assert a >= 4, "online should beat offline in at least 4 of 5 seeds"
    assert b >= 3, "ids should match or beat online in at least 3 of 5 seeds"
    assert c == 5


def _depth(rec):
    curve = [w for _, w in rec.curve("test")]
    return max(curve) - curve[-1]


@pytest.mark.slow
def test_criterion_7_nudge(report, desk_runs):
    runs, _ = desk_runs
    d0 = [_depth(runs["online-eps0", s]) for s in SEEDS]
    d1 = [_depth(runs["online", s]) for s in SEEDS]
    tanking = sum(d >= TANKING_MIN_DEPTH for d in d0) >= 3
    if tanking:
        count = sum(x >= y for x, y in zip(d0, d1))
        ok = count >= 4
        detail = f"tanking branch: depth(eps=0) >= depth(eps>0) in {count}/5"
    else:
        count = sum(runs["online", s].final.win_rate >= runs["online-eps0", s].final.win_rate for s in SEEDS)
        ok = count >= 3
        detail = f"degraded branch (no tanking): final(eps>0) >= final(eps=0) in {count}/5"
    depths = ", ".join(f"{x:.3f}/{y:.3f}" for x, y in zip(d0, d1))
    report(7, ok, f"{detail}; depths eps=0/eps>0 {depths}")
    assert ok


# 8. reproducibility


def test_criterion_8_reproducibility(report, tmp_path):
    same_logs = True
    for alg in ALGORITHMS:
        paths = []
        for tag in ("a", "b"):
            cfg = _desk(alg, **{"run.num_batches": 10, "run.period": 5, "run.offline_policy_steps": 10})
            path = tmp_path / f"{alg}_{tag}.jsonl"
            with RunLog(path, cfg.to_flat(), "desk-scale") as log:
                rec = run(cfg, sink=log.write)
            paths.append(path)
        same_logs &= comparable_lines(paths[0]) == comparable_lines(paths[1])
    round_trip = True
    for model in (rec.policy, rec.reward_model, init_enn(rec.policy, stream(0, "e"), 3, (4,), (2,), (3,))):
        data = encode(model)
        round_trip &= encode(decode(data)[0]) == data
    ok = same_logs and round_trip
    report(8, ok, f"byte-identical logs for 4 algorithms {same_logs}, checkpoint round-trip {round_trip}")
    assert ok
