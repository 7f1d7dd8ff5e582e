"""Command line entry point: ``rlhflab {run,eval,fit,compare}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PROFILES, RunConfig, dump_text, load_config, parse_override
from .errors import FitError, GainUndefinedError, RLHFLabError
from .evaluation import (fit_record_text, fit_scaling, project_gain, read_curve_csv, win_rate,
                         write_curve_csv)
from .oracle import export_corpus, import_corpus
from .runlog import RunLog, log_curve, log_header
from .schedulers import RunRecord, make_environment, run

log = logging.getLogger("rlhflab")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value config file (dotted keys, TOML syntax)")
    p.add_argument("--seed", type=int, default=None, help="overrides run.seed")
    p.add_argument("--out", required=True, help="output directory or file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk-scale")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlhflab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one algorithm and write log, checkpoints and curve")
    _common(p)
    p.add_argument("--algorithm", choices=("offline", "periodic", "online", "ids"))

    p = sub.add_parser("eval", help="win rate of a policy checkpoint against a baseline")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--corpus", required=True, help="directory with train/test/eval prompt files")
    p.add_argument("--split", default="eval", choices=("train", "test", "eval"))

    p = sub.add_parser("fit", help="scaling-law fits and gain table from run logs or curve files")
    _common(p)
    p.add_argument("inputs", nargs="+", help="run directories, run.jsonl files or curve CSVs")
    p.add_argument("--reference", default="offline",
                   help="series the gains are measured against (default: offline, else the first input)")
    p.add_argument("--grid", default="1000,10000,100000,1000000",
                   help="comma separated choice counts for the gain table")

    p = sub.add_parser("compare", help="run several algorithms over several seeds")
    _common(p)
    p.add_argument("--algorithms", default="offline,online,ids")
    p.add_argument("--num-seeds", type=int, default=3)
    return parser


def _config(args, **extra) -> RunConfig:
    overrides = dict(parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    overrides.update(extra)
    return load_config(args.config, overrides, args.profile)


def _write_run(cfg: RunConfig, profile: str, out: Path) -> RunRecord:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_text(cfg), encoding="utf-8")
    env = make_environment(cfg)
    export_corpus(env.corpus, out / "corpus")
    with RunLog(out / "run.jsonl", cfg.to_flat(), profile) as sink:
        record = run(cfg, env, sink)
    alg, seed = cfg.run.algorithm, cfg.run.seed
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    meta = {"algorithm": alg, "seed": seed, "n_choices": record.num_choices}
    save_checkpoint(ck / "baseline.ckpt", record.baseline, {**meta, "n_choices": 0})
    save_checkpoint(ck / "policy.ckpt", record.policy, meta)
    save_checkpoint(ck / "reward.ckpt", record.reward_model, meta)
    for name, params in record.checkpoints.items():
        save_checkpoint(ck / f"{name}.ckpt", record.policy.with_params(params), meta)
    write_curve_csv(out / "curve.csv", [(n, w, alg, seed) for n, w in record.curve()])
    return record


def cmd_run(args) -> int:
    extra = {"run.algorithm": args.algorithm} if args.algorithm else {}
    cfg = _config(args, **extra)
    record = _write_run(cfg, args.profile, Path(args.out))
    print(f"{cfg.run.algorithm} seed {cfg.run.seed}: {record.num_choices} choices, "
          f"eval win rate {record.final.win_rate:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    policy, meta = load_checkpoint(args.checkpoint, expected_kind="policy")
    baseline, _ = load_checkpoint(args.baseline, expected_kind="policy")
    corpus = import_corpus(args.corpus)
    env = make_environment(cfg, corpus=corpus)
    report = win_rate(policy, baseline, corpus.split(args.split), env.oracle,
                      num_choices=meta.get("n_choices", 0), split=args.split,
                      checkpoint_id=Path(args.checkpoint).name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    row = (report.num_choices, report.win_rate, meta.get("algorithm", cfg.run.algorithm),
           meta.get("seed", cfg.run.seed))
    write_curve_csv(out / f"eval_{args.split}.csv", [row], append=True)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


GAIN_HEADER = ("algorithm", "reference", "n_choices", "gain")


def _collect_series(inputs) -> list[tuple[str, str, list[tuple[int, float]]]]:
    """``(label, source, points)`` per algorithm per input; CSV inputs pool seeds."""
    series = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            path = path / "run.jsonl"
        if path.suffix == ".csv":
            grouped: dict[str, list] = {}
            for row in read_curve_csv(path):
                grouped.setdefault(row["algorithm"], []).append((row["n_choices"], row["win_rate"]))
            series += [(alg, str(path), pts) for alg, pts in grouped.items()]
        else:
            alg = log_header(path)["config"]["run.algorithm"]
            series.append((alg, str(path), log_curve(path)))
    labels: dict[str, int] = {}
    out = []
    for alg, src, pts in series:
        labels[alg] = labels.get(alg, 0) + 1
        out.append((alg if labels[alg] == 1 else f"{alg}#{labels[alg]}", src, pts))
    return out


def cmd_fit(args) -> int:
    grid = [float(x) for x in args.grid.split(",") if x]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fits = {}
    for label, src, pts in _collect_series(args.inputs):
        try:
            fits[label] = fit_scaling(pts)
        except FitError as exc:
            raise FitError(f"{src}: {exc}") from exc
    ref = args.reference if args.reference in fits else next(iter(fits))
    (out / "fits.jsonl").write_text("".join(fit_record_text(f, label) + "\n"
                                            for label, f in fits.items()), encoding="utf-8")
    with open(out / "gains.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GAIN_HEADER)
        for label, fit in fits.items():
            for n in grid:
                try:
                    gain = repr(project_gain(fit, fits[ref], n))
                except GainUndefinedError:
                    gain = ""
                writer.writerow([label, ref, repr(n), gain])
    for label, fit in fits.items():
        print(f"{label:>12}: a = {fit.a:.6g}  b = {fit.b:.6g}  residual = {fit.residual:.3g}  "
              f"points = {fit.n_points}")
    print(f"gains relative to {ref} written to {out / 'gains.csv'}")
    return 0


def cmd_compare(args) -> int:
    base = _config(args)
    out = Path(args.out)
    algorithms = [a for a in args.algorithms.split(",") if a]
    seeds = [base.run.seed + i for i in range(args.num_seeds)]
    summary = {}
    rows = []
    failed = 0
    for alg in algorithms:
        finals = []
        for seed in seeds:
            try:
                cfg = base.replace(**{"run.algorithm": alg, "run.seed": seed})
                record = _write_run(cfg, args.profile, out / f"{alg}_seed{seed}")
            except Exception as exc:  # one failing cell must not sink the matrix
                failed += 1
                print(f"{alg} seed {seed}: FAILED: {exc}", file=sys.stderr, flush=True)
                continue
            finals.append(record.final.win_rate)
            rows.append((record.num_choices, record.final.win_rate, alg, seed))
            print(f"{alg} seed {seed}: eval win rate {record.final.win_rate:.4f}", flush=True)
        if finals:
            summary[alg] = {"seeds": seeds, "final": finals, "mean": float(np.mean(finals)),
                            "min": float(np.min(finals)), "max": float(np.max(finals))}
    write_curve_csv(out / "final.csv", rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    for alg, s in summary.items():
        print(f"{alg:>9}: mean {s['mean']:.4f}  min {s['min']:.4f}  max {s['max']:.4f}")
    return 1 if failed else 0


COMMANDS = {"run": cmd_run, "eval": cmd_eval, "fit": cmd_fit, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (RLHFLabError, OSError) as exc:
        print(f"rlhflab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
