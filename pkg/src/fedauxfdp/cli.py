"""Command-line entry point.

    fedauxfdp run --config cfg.json [--set key=value ...] --out results/
    fedauxfdp verify-sensitivity --trials 200 --out sensitivity.json
    fedauxfdp stats --config cfg.json [--set key=value ...]

Exit codes: 0 success, 2 configuration or usage error, 3 some cells (or
sensitivity checks) failed.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import experiment, privacy
from .config import ConfigError, ExperimentConfig, parse_config
from .datamodel import HeadParams
from .partition import PartitionConfig, PartitionError, heterogeneity_stats, partition_dirichlet

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3

HEAD_FORMAT = "HEAD1"

# (C, lambda, N, binary) grid for the sensitivity oracle
SENSITIVITY_GRID = (
    (2, 0.1, 10, False),
    (2, 1.0, 20, False),
    (3, 1.0, 10, False),
    (3, 10.0, 50, False),
    (4, 0.1, 50, False),
    (4, 1.0, 20, False),
    (4, 10.0, 10, False),
    (2, 10.0, 10, True),
    (2, 1.0, 20, True),
)


# --- head serialization -----------------------------------------------------


def head_to_json(head: HeadParams) -> str:
    """Bit-exact text form: every entry as a C99 hex float."""
    rows, cols = head.shape
    doc = {"format": HEAD_FORMAT, "rows": rows, "cols": cols,
           "values": [float(v).hex() for v in head.matrix.ravel()]}
    return json.dumps(doc)


def head_from_json(text: str) -> HeadParams:
    doc = json.loads(text)
    if doc.get("format") != HEAD_FORMAT:
        raise ValueError(f"not a {HEAD_FORMAT} document")
    values = np.array([float.fromhex(v) for v in doc["values"]], dtype=np.float64)
    if values.size != doc["rows"] * doc["cols"]:
        raise ValueError("value count does not match the declared shape")
    return HeadParams(values.reshape(doc["rows"], doc["cols"]))


# --- subcommands ------------------------------------------------------------


def _load_config(path: str | None, overrides) -> ExperimentConfig:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides or ())


def cmd_run(args) -> int:
    config = _load_config(args.config, args.set)
    start = time.perf_counter()
    result = experiment.run_sweep(config)
    csv_path, json_path = experiment.write_outputs(args.out, config, result)
    print(f"{len(result.records)} cells ok, {len(result.failures)} failed "
          f"in {time.perf_counter() - start:.1f}s -> {csv_path}, {json_path}")
    for failure in result.failures:
        print(f"FAILED {failure.method} alpha={failure.alpha} eps={failure.eps_class} "
              f"lambda={failure.lam} seed={failure.seed}: {failure.reason}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_FAILED


def sensitivity_report(trials: int, seed: int = 0, grid=SENSITIVITY_GRID) -> list[dict]:
    rows = []
    for i, (c, lam, n, binary) in enumerate(grid):
        rng = np.random.default_rng([seed, i])
        row = {"class_count": c, "lambda": lam, "n": n, "binary": binary}
        for adversarial in (False, True):
            template = privacy.SensitivityTemplate(c, lam, n, binary=binary, adversarial=adversarial)
            observed = privacy.empirical_sensitivity(template, trials, rng)
            row["adversarial_max" if adversarial else "random_max"] = observed
        row["bound"] = template.bound().value
        row["ok"] = max(row["random_max"], row["adversarial_max"]) <= row["bound"] + 1e-6
        rows.append(row)
    return rows


def cmd_verify(args) -> int:
    if args.trials < 1:
        print("--trials must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    rows = sensitivity_report(args.trials, args.seed)
    doc = {"trials": args.trials, "seed": args.seed, "configurations": rows, "all_ok": all(r["ok"] for r in rows)}
    experiment.atomic_write_text(args.out, json.dumps(doc, indent=2) + "\n")
    for r in rows:
        kind = "binary" if r["binary"] else f"C={r['class_count']}"
        print(f"{'ok  ' if r['ok'] else 'FAIL'} {kind:7s} lambda={r['lambda']:<5g} N={r['n']:<3d} "
              f"bound={r['bound']:.6g} random={r['random_max']:.6g} adversarial={r['adversarial_max']:.6g}")
    return EXIT_OK if doc["all_ok"] else EXIT_FAILED


def partition_table(config: ExperimentConfig, k: int = 3) -> list[dict]:
    raw = experiment.load_data(config)
    rows = []
    for alpha in config.alpha:
        means = []
        for seed in config.seeds():
            assignment = partition_dirichlet(raw.train, PartitionConfig(config.n_clients, alpha, seed))
            means.append(heterogeneity_stats(assignment, raw.train, k).mean)
        means = np.array(means)
        rows.append({"alpha": alpha, "mean": means.mean(axis=0).tolist(), "std": means.std(axis=0).tolist()})
    return rows


def cmd_stats(args) -> int:
    config = _load_config(args.config, args.set)
    rows = partition_table(config, args.top)
    print("alpha   " + "  ".join(f"class{i + 1:<2d}" for i in range(args.top)))
    for row in rows:
        print(f"{row['alpha']:<7g} " + "  ".join(f"{m:7.3f}" for m in row["mean"]))
    if args.out:
        experiment.atomic_write_text(args.out, json.dumps({"n_clients": config.n_clients,
                                                           "seeds": config.seeds(), "rows": rows}, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedauxfdp", description="Private federated ensemble distillation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep and write metrics.csv and summary.json")
    run.add_argument("--config", help="JSON config file (omit for defaults)")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify-sensitivity", help="brute-force check of the sensitivity bound")
    verify.add_argument("--trials", type=int, default=200)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", required=True, help="JSON report path")
    verify.set_defaults(func=cmd_verify)

    stats = sub.add_parser("stats", help="partition heterogeneity report (ranked top-k class fractions)")
    stats.add_argument("--config", help="JSON config file (omit for defaults)")
    stats.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    stats.add_argument("--top", type=int, default=3)
    stats.add_argument("--out", help="optional JSON report path")
    stats.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PartitionError as exc:
        print(f"partition error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
