"""Command-line entry point.

Subcommands: gen-ra (problem generation), prove (single-problem MCTS),
dag (exhaustive search-space enumeration with DOT export), loop (expert
iteration), report (render a run directory's aggregate CSV as a table).

Exit codes: 0 success, 1 budget exhaustion without a proof, 2 parse / IO /
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .dataset import _action_tuple
from .logic import generate_ra_problem, parse_problem, problem_to_str
from .loop import cp_sweep, expert_iteration
from .losses import parse_loss
from .model import ModelConfig, TrainConfig, load_model
from .search import MctsConfig, UniformGuidance, proofs_in_tree, run_mcts
from .tableau import (
    Status,
    check_proof,
    dag_to_dot,
    dag_to_json,
    enumerate_search_dag,
)

EXIT_OK = 0
EXIT_EXHAUSTED = 1
EXIT_ERROR = 2


class CliError(Exception):
    pass


def _load_problem(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e}") from e
    name = os.path.splitext(os.path.basename(path))[0]
    try:
        return parse_problem(text, name=name)
    except ValueError as e:
        raise CliError(f"cannot parse {path}: {e}") from e


def cmd_gen_ra(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        p = generate_ra_problem(
            args.seed + i, n_operators=args.n_operators,
            operand_bound=args.operand_bound)
        with open(os.path.join(args.out_dir, f"{p.name}.p"), "w") as f:
            f.write(problem_to_str(p))
    print(f"wrote {args.count} problems to {args.out_dir}")
    return EXIT_OK


def cmd_prove(args) -> int:
    problem = _load_problem(args.problem)
    if args.model is not None:
        try:
            guidance = load_model(args.model)
        except (OSError, ValueError) as e:
            raise CliError(f"cannot load model {args.model}: {e}") from e
    else:
        guidance = UniformGuidance()
    cfg = MctsConfig(cp=args.cp, inference_budget=args.budget,
                     max_depth=args.max_depth, rng_seed=args.seed)
    tree = run_mcts(problem, guidance, cfg)
    proofs = proofs_in_tree(tree)
    stats = tree.stats()
    if not proofs:
        print(f"no proof within budget {args.budget} "
              f"({stats['expansions']} expansions)")
        return EXIT_EXHAUSTED
    best = min(proofs, key=lambda d: d.sort_key())
    assert check_proof(problem, best.actions)
    record = {
        "problem": problem.name,
        "actions": [list(_action_tuple(a)) for a in best.actions],
        "length": best.length,
        "proofs_found": len(proofs),
        "expansions": stats["expansions"],
    }
    out = json.dumps(record, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(out + "\n")
    print(out)
    return EXIT_OK


def cmd_dag(args) -> int:
    problem = _load_problem(args.problem)
    dag = enumerate_search_dag(problem, max_depth=args.max_depth,
                               max_nodes=args.max_nodes)
    statuses = [st for _, st in dag.nodes]
    stats = {
        "problem": problem.name,
        "nodes": len(dag.nodes),
        "proofs": sum(1 for st in statuses if st is Status.PROOF),
        "failures": sum(1 for st in statuses if st is Status.FAILURE),
        "edges": len(dag.edges),
    }
    with open(args.out + ".dot", "w") as f:
        f.write(dag_to_dot(dag))
    with open(args.out + ".json", "w") as f:
        f.write(dag_to_json(dag))
    print(json.dumps(stats))
    return EXIT_OK


def cmd_loop(args) -> int:
    try:
        loss = parse_loss(args.loss if args.beta is None
                          else f"merit:{args.beta}")
    except ValueError as e:
        raise CliError(str(e)) from e
    problems = _gather_problems(args)
    train_cfg = TrainConfig(
        loss=loss, epochs=args.epochs, learning_rate=args.lr,
        optimizer=args.optimizer, rng_seed=args.seed,
        accumulate_data=not args.no_accumulate, max_depth=args.max_depth)
    mcts_cfg = MctsConfig(cp=args.cp, inference_budget=args.budget,
                          max_depth=args.max_depth, rng_seed=args.seed)
    reports = expert_iteration(
        problems, train_cfg, mcts_cfg, args.iterations,
        run_dir=args.run_dir, workers=args.workers, resume=args.resume)
    for r in reports:
        print(f"iteration {r.iteration}: solved {r.solved} "
              f"(cumulative {r.cumulative_solved}), "
              f"avg proofs {r.avg_proofs_per_solved:.2f}, "
              f"mean length {r.mean_proof_length:.2f}, "
              f"{r.wall_time:.1f}s")
    return EXIT_OK


def _gather_problems(args):
    if args.problems:
        paths = sorted(
            os.path.join(args.problems, n)
            for n in os.listdir(args.problems) if n.endswith(".p"))
        if not paths:
            raise CliError(f"no .p files in {args.problems}")
        return [_load_problem(p) for p in paths]
    return [
        generate_ra_problem(args.seed + i, n_operators=args.n_operators,
                            operand_bound=args.operand_bound)
        for i in range(args.count)
    ]


def cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "aggregate.csv")
    if not os.path.exists(path):
        raise CliError(f"no aggregate.csv in {args.run_dir}")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise CliError(f"empty aggregate.csv in {args.run_dir}")
    print(render_table(rows, args.column))
    return EXIT_OK


def render_table(rows, column: str = "solved") -> str:
    """Losses as rows, iterations as columns, one CSV column as cells."""
    iters = sorted({int(r["iteration"]) for r in rows})
    losses = []
    cells = {}
    for r in rows:
        if r["loss"] not in losses:
            losses.append(r["loss"])
        cells[(r["loss"], int(r["iteration"]))] = r[column]
    header = ["loss"] + [f"iter {i}" for i in iters]
    body = [
        [name] + [cells.get((name, i), "-") for i in iters]
        for name in losses
    ]
    widths = [
        max(len(row[c]) for row in [header] + body)
        for c in range(len(header))
    ]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabpll",
        description="Connection-tableau proving with MCTS guidance trained "
                    "from alternative proofs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_search_flags(p):
        p.add_argument("--cp", type=float, default=1.0,
                       help="PUCT exploration constant (default 1.0)")
        p.add_argument("--budget", type=int, default=2000,
                       help="MCTS simulation budget (default 2000)")
        p.add_argument("--max-depth", type=int, default=20,
                       help="tableau depth limit (default 20)")
        p.add_argument("--seed", type=int, default=0,
                       help="base RNG seed (default 0)")

    def add_gen_flags(p):
        p.add_argument("--n-operators", type=int, default=3,
                       help="operators per generated expression (default 3)")
        p.add_argument("--operand-bound", type=int, default=10,
                       help="exclusive bound on operands (default 10)")

    p = sub.add_parser("gen-ra", help="generate Robinson Arithmetic problems")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=1000,
                   help="number of problems (default 1000)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed of the first problem (default 0)")
    add_gen_flags(p)
    p.set_defaults(func=cmd_gen_ra)

    p = sub.add_parser("prove", help="search one problem for a proof")
    p.add_argument("problem", help="matrix file")
    p.add_argument("--model", default=None, help="trained model .npz")
    p.add_argument("--out", default=None, help="write the proof JSON here")
    add_search_flags(p)
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("dag", help="enumerate the full search DAG")
    p.add_argument("problem", help="matrix file")
    p.add_argument("--out", default="dag",
                   help="output prefix for .dot and .json (default 'dag')")
    p.add_argument("--max-depth", type=int, default=20)
    p.add_argument("--max-nodes", type=int, default=100000,
                   help="enumeration cap (default 100000)")
    p.set_defaults(func=cmd_dag)

    p = sub.add_parser("loop", help="run expert iteration")
    p.add_argument("run_dir", help="snapshot directory")
    p.add_argument("--problems", default=None,
                   help="directory of .p files (default: generate)")
    p.add_argument("--count", type=int, default=200,
                   help="generated problem count when --problems is unset")
    p.add_argument("--iterations", type=int, default=4,
                   help="search+train passes incl. unguided (default 4)")
    p.add_argument("--loss", default="nll",
                   help="bs | nll | uniform | merit:<beta> | libra | "
                        "short | long | rand (default nll)")
    p.add_argument("--beta", type=float, default=None,
                   help="shorthand for --loss merit:<beta>")
    p.add_argument("--epochs", type=int, default=10,
                   help="training epochs per iteration (default 10)")
    p.add_argument("--lr", type=float, default=0.05,
                   help="learning rate (default 0.05)")
    p.add_argument("--optimizer", default="sgd", choices=["sgd", "adam"])
    p.add_argument("--workers", type=int, default=1,
                   help="search processes; 1 is bit-reproducible (default 1)")
    p.add_argument("--no-accumulate", action="store_true",
                   help="train on the latest iteration's data only")
    p.add_argument("--resume", action="store_true",
                   help="continue after the last snapshot in run_dir")
    add_search_flags(p)
    add_gen_flags(p)
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("report", help="render a run directory's results")
    p.add_argument("run_dir")
    p.add_argument("--column", default="solved",
                   choices=["solved", "cumulative", "avg_proofs",
                            "mean_len", "seconds"],
                   help="CSV column to tabulate (default solved)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
