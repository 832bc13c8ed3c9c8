"""Shared bits for the experiment scripts: argument parsing and table printing."""
from __future__ import annotations

import argparse
import os

from fedauxfdp import experiment
from fedauxfdp.config import ExperimentConfig


def parser(description: str, repeats: int = 5) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--repeats", type=int, default=repeats, help="seeds per cell")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", help="directory for metrics.csv and summary.json")
    return p


def run(config: ExperimentConfig, out: str | None) -> experiment.SweepResult:
    result = experiment.run_sweep(config)
    if out:
        os.makedirs(out, exist_ok=True)
        experiment.write_outputs(out, config, result)
    for f in result.failures:
        print(f"FAILED {f.method} alpha={f.alpha} eps={f.eps_class} lambda={f.lam} seed={f.seed}: {f.reason}")
    return result


def print_table(result: experiment.SweepResult, row_key, row_label: str, alphas) -> None:
    """One row per ``row_key(cell)``, one column per alpha, entries ``mean +- std`` in percent."""
    cells = experiment.summarize(result.records)
    rows: dict = {}
    for c in cells:
        rows.setdefault(row_key(c), {})[c["alpha"]] = c
    print(f"{row_label:<24s}" + "".join(f"alpha={a:<10g}" for a in alphas))
    for key, by_alpha in rows.items():
        entries = []
        for a in alphas:
            c = by_alpha.get(a)
            entries.append(f"{100 * c['mean']:5.1f} +- {100 * c['std']:4.1f}" if c else f"{'-':>12s}")
        print(f"{str(key):<24s}" + "  ".join(entries))
