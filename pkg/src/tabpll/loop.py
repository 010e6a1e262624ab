"""Expert-iteration orchestration.

One iteration runs guided MCTS over every problem (iteration 0 is unguided:
uniform policy, constant value), extracts a PLL sample per solved problem,
and trains the model on the collected samples; the next iteration searches
with the updated model.  Every iteration is snapshotted into the run
directory (model, samples, report) together with an aggregate CSV row, so a
run directory fully determines a rerun.

Training data accumulates across iterations by default; pass
``accumulate_data=False`` in the TrainConfig to train on the latest
iteration's trees only.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .dataset import extract_sample, load_samples, save_samples
from .model import (
    ModelConfig,
    PolicyModel,
    TrainConfig,
    load_model,
    save_model,
    train,
)
from .search import MctsConfig, UniformGuidance, run_mcts

AGGREGATE_CSV_FIELDS = (
    "iteration", "loss", "solved", "cumulative", "avg_proofs", "mean_len",
    "seconds",
)


@dataclass
class IterationReport:
    iteration: int
    solved: int
    cumulative_solved: int
    avg_proofs_per_solved: float
    mean_proof_length: float
    wall_time: float
    loss_stats: Optional[dict] = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json(obj) -> "IterationReport":
        return IterationReport(**obj)


def _search_one(args):
    problem, guidance, cfg = args
    tree = run_mcts(problem, guidance, cfg)
    sample = extract_sample(tree)
    return problem.name, sample, tree.stats()


def _run_searches(problems, guidance, mcts_cfg: MctsConfig, workers: int = 1):
    """Per-problem trees in problem order; each problem's tree gets its own
    seed derived from the base seed so runs are reproducible per problem."""
    jobs = []
    for i, p in enumerate(problems):
        cfg = dataclasses.replace(mcts_cfg, rng_seed=mcts_cfg.rng_seed + i)
        jobs.append((p, guidance, cfg))
    if workers <= 1:
        return [_search_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_search_one, jobs, chunksize=4))


def run_iteration(problems, model, mcts_cfg: MctsConfig, iteration: int = 0,
                  workers: int = 1):
    """(samples, per-problem stats, report) for one search pass.  ``model``
    None means unguided (uniform policy, constant value 0.5)."""
    if not problems:
        raise ValueError("no problems")
    guidance = model if model is not None else UniformGuidance()
    t0 = time.time()
    results = _run_searches(problems, guidance, mcts_cfg, workers)
    wall = time.time() - t0
    samples = [s for _, s, _ in results if s is not None]
    stats = {name: st for name, s, st in results}
    report = _make_report(iteration, samples, len(samples), wall)
    return samples, stats, report


def _make_report(iteration, samples, cumulative, wall, loss_stats=None):
    n_solved = len(samples)
    total_proofs = sum(len(s.proofs) for s in samples)
    lengths = [d.length for s in samples for d in s.proofs]
    return IterationReport(
        iteration=iteration,
        solved=n_solved,
        cumulative_solved=cumulative,
        avg_proofs_per_solved=(total_proofs / n_solved) if n_solved else 0.0,
        mean_proof_length=(sum(lengths) / len(lengths)) if lengths else 0.0,
        wall_time=wall,
        loss_stats=loss_stats,
    )


def expert_iteration(problems, train_cfg: TrainConfig, mcts_cfg: MctsConfig,
                     n_iterations: int, run_dir=None,
                     model_cfg: Optional[ModelConfig] = None,
                     workers: int = 1, resume: bool = False):
    """Alternate search and training for ``n_iterations`` passes (iteration
    0 is unguided); returns the per-iteration reports.  With ``resume`` the
    run continues after the last snapshot already present in ``run_dir``."""
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        _write_config(run_dir, train_cfg, mcts_cfg, n_iterations, workers)

    model = PolicyModel(model_cfg or ModelConfig(
        learning_rate=train_cfg.learning_rate,
        optimizer=train_cfg.optimizer,
        rng_seed=train_cfg.rng_seed,
    ))
    by_name = {p.name: p for p in problems}
    reports = []
    pool: list = []  # training samples (accumulated or latest)
    solved_ever: set = set()
    first = 0

    if resume:
        if run_dir is None:
            raise ValueError("resume requires a run directory")
        reports = load_reports(run_dir)
        if reports:
            first = len(reports)
            model = load_model(os.path.join(
                run_dir, f"model_{first - 1}.npz"))
            for past in reports:
                solved_ever.update(_snapshot_solved(run_dir, past.iteration))
            if train_cfg.accumulate_data:
                for past in reports:
                    pool.extend(load_samples(os.path.join(
                        run_dir, f"samples_{past.iteration}.jsonl")))
            else:
                pool = load_samples(os.path.join(
                    run_dir, f"samples_{first - 1}.jsonl"))

    for it in range(first, n_iterations):
        guidance = None if it == 0 else model
        samples, _, report = run_iteration(
            problems, guidance, mcts_cfg, iteration=it, workers=workers)
        solved_ever.update(s.problem for s in samples)
        report.cumulative_solved = len(solved_ever)

        if train_cfg.accumulate_data:
            pool.extend(samples)
        else:
            pool = list(samples)
        if pool:
            stats = train(model, pool, train_cfg, by_name)
            report.loss_stats = {
                "policy": stats.epoch_policy_loss,
                "value": stats.epoch_value_loss,
            }
        reports.append(report)
        if run_dir is not None:
            _snapshot(run_dir, it, model, samples, report, train_cfg)
    return reports


def _snapshot_solved(run_dir, it):
    path = os.path.join(run_dir, f"samples_{it}.jsonl")
    if not os.path.exists(path):
        return set()
    return {s.problem for s in load_samples(path)}


def _write_config(run_dir, train_cfg, mcts_cfg, n_iterations, workers):
    cfg = {
        "loss": str(train_cfg.loss),
        "epochs": train_cfg.epochs,
        "learning_rate": train_cfg.learning_rate,
        "optimizer": train_cfg.optimizer,
        "rng_seed": train_cfg.rng_seed,
        "accumulate_data": train_cfg.accumulate_data,
        "cp": mcts_cfg.cp,
        "inference_budget": mcts_cfg.inference_budget,
        "max_depth": mcts_cfg.max_depth,
        "mcts_rng_seed": mcts_cfg.rng_seed,
        "n_iterations": n_iterations,
        "workers": workers,
    }
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)


def _snapshot(run_dir, it, model, samples, report, train_cfg):
    save_model(model, os.path.join(run_dir, f"model_{it}.npz"))
    save_samples(samples, os.path.join(run_dir, f"samples_{it}.jsonl"))
    with open(os.path.join(run_dir, f"report_{it}.json"), "w") as f:
        json.dump(report.to_json(), f, indent=2)
    csv_path = os.path.join(run_dir, "aggregate.csv")
    new = not os.path.exists(csv_path)
    with open(csv_path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=AGGREGATE_CSV_FIELDS)
        if new:
            w.writeheader()
        w.writerow({
            "iteration": report.iteration,
            "loss": str(train_cfg.loss),
            "solved": report.solved,
            "cumulative": report.cumulative_solved,
            "avg_proofs": f"{report.avg_proofs_per_solved:.6f}",
            "mean_len": f"{report.mean_proof_length:.6f}",
            "seconds": f"{report.wall_time:.3f}",
        })


def load_reports(run_dir):
    out = []
    it = 0
    while True:
        path = os.path.join(run_dir, f"report_{it}.json")
        if not os.path.exists(path):
            return out
        with open(path) as f:
            out.append(IterationReport.from_json(json.load(f)))
        it += 1


def cp_sweep(problems, cp_values, mcts_cfg: MctsConfig, workers: int = 1):
    """Unguided iteration per cp with shared seeds; rows of
    (cp, solved_0, proofs_0) where proofs_0 is the mean number of distinct
    proofs per solved problem."""
    if not cp_values:
        raise ValueError("no cp values")
    rows = []
    for cp in cp_values:
        cfg = dataclasses.replace(mcts_cfg, cp=cp)
        _, _, report = run_iteration(problems, None, cfg, workers=workers)
        rows.append((cp, report.solved, report.avg_proofs_per_solved))
    return rows


def evaluate(model, problems, mcts_cfg: MctsConfig, workers: int = 1):
    """Names of the problems solved by guided search, without data
    extraction or training."""
    if not problems:
        return set()
    guidance = model if model is not None else UniformGuidance()
    results = _run_searches(problems, guidance, mcts_cfg, workers)
    return {name for name, s, _ in results if s is not None}
