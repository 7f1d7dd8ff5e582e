"""Win rates against the frozen baseline, scaling-law fits and gain projection.

The scaling law is ``w(n) = 1 - 0.5 * (n / a) ** (-b)``.  Taking
``ln(2 (1 - w)) = -b ln n + b ln a`` turns the fit into ordinary linear
regression, which is what :func:`fit_scaling` does.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted, column_or_1d

from .errors import FitError, GainUndefinedError
from .oracle import Oracle, oracle_reward_batch, preference_prob
from .policy import TokenPolicy, generate_batch

CURVE_HEADER = ("n_choices", "win_rate", "algorithm", "seed")


@dataclass
class WinRateReport:
    num_choices: int
    win_rate: float
    split: str
    policy_checkpoint_id: str = ""
    per_prompt: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"num_choices": self.num_choices, "win_rate": self.win_rate,
                "split": self.split, "policy_checkpoint_id": self.policy_checkpoint_id}


def preference_probs(policy: TokenPolicy, baseline_responses: Sequence, prompts: Sequence,
                     oracle: Oracle) -> np.ndarray:
    """Per-prompt P(policy's top-1 response beats the baseline's)."""
    ours = generate_batch(policy, prompts, 1)
    r1 = oracle_reward_batch(oracle, prompts, ours)
    r2 = oracle_reward_batch(oracle, prompts, baseline_responses)
    return np.asarray(preference_prob(r1, r2), dtype=np.float64)


def win_rate(policy: TokenPolicy, baseline: TokenPolicy, prompts: Sequence, oracle: Oracle, *,
             num_choices: int = 0, split: str = "eval", checkpoint_id: str = "",
             baseline_responses: Sequence | None = None) -> WinRateReport:
    """Mean oracle preference for top-1 responses of ``policy`` over those of ``baseline``."""
    if len(prompts) == 0:
        raise ValueError("win_rate needs at least one prompt")
    if baseline_responses is None:
        baseline_responses = generate_batch(baseline, prompts, 1)
    probs = preference_probs(policy, baseline_responses, prompts, oracle)
    return WinRateReport(int(num_choices), float(np.mean(probs)), split, checkpoint_id, probs)


class WinRateEvaluator:
    """Caches the baseline's top-1 responses per split."""

    def __init__(self, baseline: TokenPolicy, oracle: Oracle, splits: dict[str, Sequence]):
        self.baseline = baseline
        self.oracle = oracle
        self.splits = splits
        self._cache: dict[str, list] = {}

    def __call__(self, policy: TokenPolicy, split: str, num_choices: int = 0,
                 checkpoint_id: str = "") -> WinRateReport:
        prompts = self.splits[split]
        if split not in self._cache:
            self._cache[split] = generate_batch(self.baseline, prompts, 1)
        return win_rate(policy, self.baseline, prompts, self.oracle, num_choices=num_choices,
                        split=split, checkpoint_id=checkpoint_id,
                        baseline_responses=self._cache[split])


def best_checkpoint(checkpoints: Sequence[tuple[int, TokenPolicy]], test_prompts: Sequence,
                    baseline: TokenPolicy, oracle: Oracle,
                    evaluator: WinRateEvaluator | None = None) -> int:
    """Checkpoint id with the highest test win rate; ties go to the smallest id."""
    if not checkpoints:
        raise ValueError("best_checkpoint needs at least one checkpoint")
    base_resp = None if evaluator is not None else generate_batch(baseline, test_prompts, 1)
    best = None
    for cid, policy in checkpoints:
        if evaluator is not None:
            w = evaluator(policy, "test").win_rate
        else:
            w = win_rate(policy, baseline, test_prompts, oracle,
                         baseline_responses=base_resp).win_rate
        key = (-w, cid)
        if best is None or key < best[0]:
            best = (key, cid)
    return best[1]


# --------------------------------------------------------------------------
# Scaling law


@dataclass
class ScalingFit:
    a: float
    b: float
    residual: float
    n_points: int
    excluded: list = field(default_factory=list)

    def predict(self, n):
        n = np.asarray(n, dtype=np.float64)
        return 1.0 - 0.5 * (n / self.a) ** (-self.b)

    def to_record(self) -> dict:
        return {"a": self.a, "b": self.b, "residual": self.residual,
                "n_points": self.n_points, "excluded": [list(p) for p in self.excluded]}


def fit_scaling(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Least-squares fit of ``w(n) = 1 - 0.5 (n/a)^-b`` in log space.

    Points with ``w <= 0.5`` (or ``w >= 1``, or ``n <= 0``) cannot be
    transformed; they are left out and listed in ``excluded``.
    """
    usable, excluded = [], []
    for n, w in points:
        n, w = float(n), float(w)
        (usable if (n > 0 and 0.5 < w < 1.0) else excluded).append((n, w))
    if len({n for n, _ in usable}) < 2:
        raise FitError(f"need at least 2 usable points with distinct n, got {len(usable)}")
    n = np.array([p[0] for p in usable])
    w = np.array([p[1] for p in usable])
    x = np.log(n)
    y = np.log(2.0 * (1.0 - w))
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    intercept = float(ym - slope * xm)
    b = -slope
    if not b > 0:
        raise FitError(f"win rate does not increase with n (fitted b = {b:.4g})")
    a = math.exp(intercept / b)
    fit = ScalingFit(a, b, 0.0, len(usable), excluded)
    fit.residual = float(np.sum((fit.predict(n) - w) ** 2))
    return fit


class ScalingLaw(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_scaling`; ``X`` holds choice counts."""

    def fit(self, X, y):
        n = column_or_1d(np.asarray(X, dtype=np.float64).reshape(len(X), -1)[:, 0])
        w = column_or_1d(y)
        check_consistent_length(n, w)
        fit = fit_scaling(list(zip(n, w)))
        self.a_, self.b_, self.residual_ = fit.a, fit.b, fit.residual
        self.excluded_ = fit.excluded
        self.fit_ = fit
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        n = np.asarray(X, dtype=np.float64).reshape(len(X), -1)[:, 0]
        return self.fit_.predict(n)


def project_gain(fit_explore: ScalingFit, fit_offline: ScalingFit, n: float) -> float:
    """Choices offline needs to match ``fit_explore`` at ``n``, divided by ``n``.

    Uses the exact inverse ``n_off = a_off * (2 (1 - w))^(-1/b_off)`` with
    ``w = w_explore(n)``, evaluated in log space.
    """
    n = float(n)
    if not n > fit_explore.a:
        raise GainUndefinedError(
            f"explored win rate at n={n:g} is {float(fit_explore.predict(n)):.4f} <= 0.5")
    log_two_gap = -fit_explore.b * math.log(n / fit_explore.a)  # ln(2 (1 - w))
    log_n_off = math.log(fit_offline.a) - log_two_gap / fit_offline.b
    return math.exp(log_n_off - math.log(n))


# --------------------------------------------------------------------------
# Export


def write_curve_csv(path, rows: Sequence[tuple], append: bool = False) -> None:
    """Rows are ``(n_choices, win_rate, algorithm, seed)``."""
    mode = "a" if append else "w"
    new = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CURVE_HEADER)
        for row in rows:
            writer.writerow([int(row[0]), repr(float(row[1])), row[2], int(row[3])])


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CURVE_HEADER)}")
        return [{"n_choices": int(r["n_choices"]), "win_rate": float(r["win_rate"]),
                 "algorithm": r["algorithm"], "seed": int(r["seed"])} for r in reader]


def fit_record_text(fit: ScalingFit, algorithm: str = "") -> str:
    rec = {"algorithm": algorithm, **asdict(fit)}
    rec["excluded"] = [list(p) for p in fit.excluded]
    return json.dumps(rec, sort_keys=True)
