#!/usr/bin/env python3
"""Compare PLL losses against the BS imitation baseline over expert iteration.

For each loss and seed block, runs a full guided-search training loop on a
fresh benchmark set and records solved counts per iteration.  Results go to
a CSV plus an aligned table on stdout.

Example:
    python scripts/run_learning_direction.py --problems 200 --seeds 3 \
        --iterations 3 --out runs/direction.csv
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tabpll.cli import render_table
from tabpll.logic import generate_ra_problem
from tabpll.loop import expert_iteration
from tabpll.losses import parse_loss
from tabpll.model import TrainConfig
from tabpll.search import MctsConfig

DEFAULT_LOSSES = ["nll", "uniform", "merit:0.5", "libra", "bs"]


def benchmark(n, base_seed, operand_bound):
    return [
        generate_ra_problem(base_seed + i,
                            n_operators=1 if i % 2 == 0 else 2,
                            operand_bound=operand_bound)
        for i in range(n)
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--losses", nargs="+", default=DEFAULT_LOSSES)
    ap.add_argument("--problems", type=int, default=200)
    ap.add_argument("--operand-bound", type=int, default=6)
    ap.add_argument("--seeds", type=int, default=3,
                    help="number of disjoint seed blocks")
    ap.add_argument("--iterations", type=int, default=3)
    ap.add_argument("--budget", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("direction.csv"))
    args = ap.parse_args(argv)

    rows = []
    for block in range(args.seeds):
        base = 1000 * block
        problems = benchmark(args.problems, base, args.operand_bound)
        for name in args.losses:
            t0 = time.perf_counter()
            reports = expert_iteration(
                problems,
                TrainConfig(loss=parse_loss(name), epochs=args.epochs,
                            rng_seed=base),
                MctsConfig(inference_budget=args.budget, rng_seed=base),
                args.iterations,
                workers=args.workers,
            )
            dt = time.perf_counter() - t0
            for r in reports:
                rows.append({
                    "loss": name, "seed_block": base,
                    "iteration": r.iteration, "solved": r.solved,
                    "avg_proofs": f"{r.avg_proofs_per_solved:.3f}",
                    "mean_len": f"{r.mean_proof_length:.3f}",
                })
            print(f"seed {base:5d} {name:10s} "
                  f"solved {[r.solved for r in reports]}  {dt:.1f}s",
                  flush=True)

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

    # mean solved over seed blocks, losses x iterations
    display = []
    for name in args.losses:
        for it in range(args.iterations):
            vals = [r["solved"] for r in rows
                    if r["loss"] == name and r["iteration"] == it]
            display.append({"loss": name, "iteration": it,
                            "solved": f"{sum(vals) / len(vals):.1f}"})
    print()
    print(render_table(display, "solved"))
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
