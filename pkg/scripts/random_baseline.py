#!/usr/bin/env python3
"""Empirical random-guess baselines on synthetic exam sets.

Runs the uniform single-option stub over a 4-option single-answer set and
the uniform-over-combinations stub over a 4-option multi-answer set, then
prints the observed accuracy next to the analytic expectation (1/4 and
1/(2^4-4-1) = 1/11; the latter is 9.09%, not the 10% round figure that
often gets quoted for random multi-answer guessing).
"""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from finrag.gateway import Gateway, ModelHandle
from finrag.harness import RunConfig, run_benchmark
from finrag.synth import write_synthetic_dataset


def run_one(n: int, seed: int, multi: bool, workdir: Path) -> float:
    subject = "ma" if multi else "sa"
    category = "CPA-MA" if multi else "CPA-SA"
    stub = "random_combo" if multi else "random_choice"
    root = workdir / f"data-{subject}"
    write_synthetic_dataset(root, subject, n, option_count=4, multi=multi, seed=seed)
    gateway = Gateway(
        [ModelHandle(id="m", kind="scored_completion", endpoint=f"stub:{stub}", options={"seed": seed})]
    )
    cfg = RunConfig(
        dataset_root=str(root),
        subjects=(subject,),
        categories={subject: category},
        model_handle_id="m",
        output_dir=str(workdir / f"out-{subject}"),
        workers=4,
        seed=seed,
    )
    return run_benchmark(cfg, gateway).total.accuracy


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("-n", type=int, default=2000, help="questions per set")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as td:
        workdir = Path(td)
        single = run_one(args.n, args.seed, multi=False, workdir=workdir)
        multi = run_one(args.n, args.seed, multi=True, workdir=workdir)
    print(f"single-answer (4 options): observed {single:.4f}   expected 0.2500")
    print(f"multi-answer  (11 combos): observed {multi:.4f}   expected {1 / 11:.4f} (= 9.09%, not 10%)")


if __name__ == "__main__":
    main()
