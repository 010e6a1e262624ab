#!/usr/bin/env python3
"""Export the full tableau search DAG of a problem as Graphviz and JSON.

Either reads a clause file or generates an arithmetic problem by seed.
Useful for inspecting how alternative proofs share structure.

Example:
    python scripts/export_search_dag.py --seed 3 --out dag
    python scripts/export_search_dag.py --file problem.p --out dag
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tabpll.logic import generate_ra_problem, parse_problem
from tabpll.tableau import (
    BudgetExceeded,
    dag_to_dot,
    dag_to_json,
    enumerate_search_dag,
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--file", type=Path, help="clause file to load")
    src.add_argument("--seed", type=int, default=0,
                     help="generate an arithmetic problem with this seed")
    ap.add_argument("--n-operators", type=int, default=1)
    ap.add_argument("--operand-bound", type=int, default=5)
    ap.add_argument("--max-depth", type=int, default=20)
    ap.add_argument("--max-nodes", type=int, default=10000)
    ap.add_argument("--out", type=Path, default=Path("dag"),
                    help="output basename (.dot and .json are appended)")
    args = ap.parse_args(argv)

    if args.file is not None:
        problem = parse_problem(args.file.read_text(), name=args.file.stem)
    else:
        problem = generate_ra_problem(args.seed, args.n_operators,
                                      args.operand_bound)

    try:
        dag = enumerate_search_dag(problem, max_depth=args.max_depth,
                                   max_nodes=args.max_nodes)
    except BudgetExceeded as e:
        sys.exit(f"search space too large: {e}; raise --max-nodes "
                 f"or lower --max-depth")
    nodes, proofs, failures = dag.counts()
    print(f"{problem.name}: {nodes} nodes, {proofs} proofs, "
          f"{failures} failures")

    dot_path = args.out.with_suffix(".dot")
    json_path = args.out.with_suffix(".json")
    dot_path.write_text(dag_to_dot(dag))
    json_path.write_text(dag_to_json(dag))
    print(f"wrote {dot_path} and {json_path}")


if __name__ == "__main__":
    main()
