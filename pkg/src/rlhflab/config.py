"""Run configuration: typed dotted keys, named profiles, validation.

Config files are flat TOML with dotted keys::

    run.algorithm = "online"
    run.num_batches = 200
    update.epsilon = 0.0

Every key belongs to a section dataclass below.  Unknown keys, wrong types
and violated invariants are reported together, one line per field.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_type_hints

from .errors import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = ("offline", "periodic", "online", "ids")


@dataclass(frozen=True)
class RunSection:
    algorithm: str = "online"
    seed: int = 0
    num_batches: int = 500
    batch_size: int = 16
    responses_per_prompt: int = 8
    period: int = 50
    query_top_k: int = 5
    eval_every: int = 10
    checkpoint_interval: int = 50
    offline_policy_steps: int = 500
    offline_reward_epochs: int = 1
    offline_eval_points: tuple[int, ...] = ()
    offline_epsilon: float = 0.0
    record_query_models: bool = False


@dataclass(frozen=True)
class CorpusSection:
    train: int = 16000
    test: int = 128
    eval: int = 256
    prompt_len: int = 4


@dataclass(frozen=True)
class PolicySection:
    vocab_size: int = 32
    terminator_token: int = 0
    window: int = 4
    embed_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    max_response_len: int = 16
    init_output_scale: float = 0.1


@dataclass(frozen=True)
class RewardSection:
    head: str = "auto"
    mlp_widths: tuple[int, ...] = (32, 32)


@dataclass(frozen=True)
class EnnSection:
    ensemble_size: int = 10
    prior_widths: tuple[int, ...] = (16, 16)
    diff_widths: tuple[int, ...] = (32, 32)
    prior_scale: float = 1.0
    query: str = "infomax"


@dataclass(frozen=True)
class OracleSection:
    kind: str = "task"
    calibration_target: float = 0.2
    calibration_pairs: int = 2000
    w_position: float = 1.0
    w_overlap: float = 0.5
    w_length: float = 0.5
    width_factor: int = 4


@dataclass(frozen=True)
class UpdateSection:
    beta: float = 0.1
    epsilon: float = 0.02
    eta: float = 0.99
    full_kl: bool = False
    policy_clip: float = 1.0
    reward_clip: float = 1.0


@dataclass(frozen=True)
class OptimSection:
    policy_lr: float = 1e-3
    reward_lr: float = 1e-3
    enn_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


SECTIONS = {
    "run": RunSection, "corpus": CorpusSection, "policy": PolicySection,
    "reward": RewardSection, "enn": EnnSection, "oracle": OracleSection,
    "update": UpdateSection, "optim": OptimSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    policy: PolicySection = field(default_factory=PolicySection)
    reward: RewardSection = field(default_factory=RewardSection)
    enn: EnnSection = field(default_factory=EnnSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    update: UpdateSection = field(default_factory=UpdateSection)
    optim: OptimSection = field(default_factory=OptimSection)

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for sec in SECTIONS:
            for f in fields(SECTIONS[sec]):
                v = getattr(getattr(self, sec), f.name)
                out[f"{sec}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return out

    def replace(self, **flat) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``cfg.replace(**{"run.seed": 3})``."""
        merged = self.to_flat()
        merged.update(flat)
        return from_flat(merged)

    @property
    def head_widths(self) -> tuple[int, ...]:
        head = self.reward.head
        if head == "auto":
            head = "mlp" if self.run.algorithm == "ids" else "linear"
        return self.reward.mlp_widths if head == "mlp" else ()


PROFILES: dict[str, dict[str, Any]] = {
    # At desk scale the anchor term sharpens the policy faster than the reward
    # signal can steer it unless the policy learning rate is lowered.
    "desk-scale": {"optim.policy_lr": 1e-4},
    # 3200 batches of 64 is ~205K choices; T has to be a multiple of tau = 400.
    "paper-scale": {
        "run.batch_size": 64,
        "run.responses_per_prompt": 16,
        "run.num_batches": 3200,
        "run.period": 400,
        "run.checkpoint_interval": 160,
        "run.offline_policy_steps": 3200,
        "enn.ensemble_size": 100,
        "enn.prior_widths": [256, 256],
        "enn.diff_widths": [1024, 1024],
        "reward.mlp_widths": [1024, 1024],
        "corpus.train": 200_000,
        "corpus.test": 1000,
        "corpus.eval": 1000,
    },
}


def _coerce(sec: str, f: dataclasses.Field, hint, value, errors: list[str]):
    key = f"{sec}.{f.name}"
    if hint is bool:
        if not isinstance(value, bool):
            errors.append(f"{key}: expected bool, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{key}: expected integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{key}: expected number, got {value!r}")
            return value
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            errors.append(f"{key}: expected string, got {value!r}")
        return value
    # tuple[int, ...]
    if not isinstance(value, (list, tuple)) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value):
        errors.append(f"{key}: expected list of integers, got {value!r}")
        return value
    return tuple(value)


def from_flat(flat: dict[str, Any], profile: str = "desk-scale") -> RunConfig:
    """Build and validate a config from dotted keys layered over a profile."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    merged = dict(PROFILES[profile])
    merged.update(flat)
    errors: list[str] = []
    values: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    for key, value in merged.items():
        sec, _, name = key.partition(".")
        cls = SECTIONS.get(sec)
        names = {f.name: f for f in fields(cls)} if cls else {}
        if name not in names:
            errors.append(f"{key}: unknown config key")
            continue
        hint = get_type_hints(cls)[name]
        values[sec][name] = _coerce(sec, names[name], hint, value, errors)
    if errors:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(errors))
    cfg = RunConfig(**{s: SECTIONS[s](**values[s]) for s in SECTIONS})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    errs = []
    r, c, p, e, u = cfg.run, cfg.corpus, cfg.policy, cfg.enn, cfg.update

    def need(cond, msg):
        if not cond:
            errs.append(msg)

    need(r.algorithm in ALGORITHMS, f"run.algorithm: must be one of {ALGORITHMS}")
    need(r.num_batches >= 0, "run.num_batches: must be >= 0")
    need(r.batch_size >= 1, "run.batch_size: must be >= 1")
    need(r.responses_per_prompt >= 2, "run.responses_per_prompt: must be >= 2")
    if r.algorithm in ("online", "ids"):
        need(r.responses_per_prompt >= 4, "run.responses_per_prompt: online and ids need >= 4")
    need(r.period >= 1, "run.period: must be >= 1")
    if r.algorithm == "periodic":
        need(r.period >= 1 and r.num_batches % r.period == 0,
             "run.period: must divide run.num_batches")
    need(1 <= r.query_top_k <= p.vocab_size, "run.query_top_k: must lie in [1, policy.vocab_size]")
    need(r.eval_every >= 1, "run.eval_every: must be >= 1")
    need(r.checkpoint_interval >= 1, "run.checkpoint_interval: must be >= 1")
    need(r.offline_policy_steps >= 0, "run.offline_policy_steps: must be >= 0")
    need(r.offline_reward_epochs >= 1, "run.offline_reward_epochs: must be >= 1")
    need(all(0 < t <= r.num_batches for t in r.offline_eval_points),
         "run.offline_eval_points: entries must lie in [1, run.num_batches]")
    need(min(c.train, c.test, c.eval) >= 1, "corpus: split sizes must be >= 1")
    need(c.prompt_len >= 1, "corpus.prompt_len: must be >= 1")
    need(p.vocab_size >= 2, "policy.vocab_size: must be >= 2")
    need(0 <= p.terminator_token < p.vocab_size, "policy.terminator_token: must be a token id")
    need(p.max_response_len >= 1, "policy.max_response_len: must be >= 1")
    need(len(p.hidden) >= 1 and min(p.hidden, default=0) >= 1, "policy.hidden: positive widths")
    need(cfg.reward.head in ("auto", "linear", "mlp"), "reward.head: auto, linear or mlp")
    need(e.query in ("infomax", "random"), "enn.query: infomax or random")
    need(e.ensemble_size >= 0, "enn.ensemble_size: must be >= 0")
    if r.algorithm == "ids" and e.query == "infomax":
        need(e.ensemble_size >= 2, "enn.ensemble_size: infomax queries need >= 2")
    need(cfg.oracle.kind in ("task", "network"), "oracle.kind: task or network")
    need(0 < cfg.oracle.calibration_target < 0.5, "oracle.calibration_target: must lie in (0, 0.5)")
    need(cfg.oracle.width_factor >= 4, "oracle.width_factor: must be >= 4")
    need(u.beta >= 0, "update.beta: must be >= 0")
    need(0 <= u.eta <= 1, "update.eta: must lie in [0, 1]")
    need(u.policy_clip > 0 and u.reward_clip > 0, "update.*_clip: must be > 0")
    if errs:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(errs))


def flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_text(text: str) -> dict[str, Any]:
    try:
        return flatten(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid key-value text: {exc}") from exc


def load_config(path=None, overrides: dict[str, Any] | None = None, profile: str = "desk-scale") -> RunConfig:
    flat = parse_text(Path(path).read_text(encoding="utf-8")) if path else {}
    flat.update(overrides or {})
    return from_flat(flat, profile)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def dump_text(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in cfg.to_flat().items())


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` from the command line; the value uses config-file syntax."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigurationError(f"override {text!r} is not key=value")
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value
