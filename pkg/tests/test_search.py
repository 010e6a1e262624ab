"""MCTS invariants: budgets, backup conservation, determinism."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabpll.logic import generate_ra_problem, parse_problem
from tabpll.search import (
    MctsConfig,
    UniformGuidance,
    extract_targets,
    failures_in_tree,
    proofs_in_tree,
    run_mcts,
)
from tabpll.tableau import Status, check_proof

FIG_MATRIX = """#start: 2
p | ~f(a).
f(b) | ~p.
p | f(X).
~p | ~f(X).
"""


def _fig():
    return parse_problem(FIG_MATRIX, name="fig")


def _walk(root):
    stack = [root]
    while stack:
        n = stack.pop()
        yield n
        if n.children:
            stack.extend(c for c in n.children if c is not None)


def test_config_validation():
    with pytest.raises(ValueError):
        MctsConfig(inference_budget=0)
    with pytest.raises(ValueError):
        MctsConfig(cp=-1.0)


def test_budget_adherence():
    p = generate_ra_problem(1, n_operators=1, operand_bound=6)
    t = run_mcts(p, UniformGuidance(), MctsConfig(inference_budget=50))
    assert t.simulations == 50  # space is far larger than the budget
    assert t.expansions <= t.simulations
    assert t.root.visits == t.simulations


def test_exhaustion_stops_early():
    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=10000))
    assert t.root.exhausted
    assert t.expansions < 10000


def test_visit_conservation():
    """Parent visits = sum of child visits + its own expansion visit."""
    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=500))
    for n in _walk(t.root):
        if n.children is None:
            continue
        child_visits = sum(c.visits for c in n.children if c is not None)
        assert n.visits == child_visits + 1


def test_reward_bounds():
    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=500))
    for n in _walk(t.root):
        assert 0.0 <= n.total_reward <= n.visits + 1e-12
        assert 0.0 <= n.value_estimate <= 1.0


def test_terminal_classification_matches_status():
    from tabpll.tableau import apply_action, initial_state, status

    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=500))
    for n in _walk(t.root):
        if n.terminal_status in (Status.PROOF, Status.FAILURE):
            assert status(n.state) is n.terminal_status


@given(st.integers(min_value=0, max_value=30))
@settings(max_examples=10, deadline=None)
def test_determinism(seed):
    p = generate_ra_problem(seed, n_operators=1, operand_bound=5)
    cfg = MctsConfig(inference_budget=150, rng_seed=seed)
    t1 = run_mcts(p, UniformGuidance(), cfg)
    t2 = run_mcts(p, UniformGuidance(), cfg)
    assert t1.stats() == t2.stats()
    assert [d.actions for d in proofs_in_tree(t1)] == [
        d.actions for d in proofs_in_tree(t2)]


def test_all_tree_proofs_pass_checker():
    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=2000))
    proofs = proofs_in_tree(t)
    assert proofs
    for d in proofs:
        assert d.status is Status.PROOF
        assert check_proof(t.problem, d.actions)
    assert len({tuple(d.actions) for d in proofs}) == len(proofs)


def test_failures_are_disjoint_from_proofs():
    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=2000))
    pset = {tuple(d.actions) for d in proofs_in_tree(t)}
    fset = {tuple(d.actions) for d in failures_in_tree(t)}
    assert not pset & fset
    for d in failures_in_tree(t):
        assert not check_proof(t.problem, d.actions)


def test_cp_zero_exploits():
    """cp = 0 keeps re-descending the max-Q child, so the budget is spent
    on revisits and far fewer distinct nodes get expanded than with
    exploration on."""
    p = generate_ra_problem(2, n_operators=1, operand_bound=6)
    lo = run_mcts(p, UniformGuidance(), MctsConfig(cp=0.0, inference_budget=300))
    hi = run_mcts(p, UniformGuidance(), MctsConfig(cp=5.0, inference_budget=300))
    assert lo.expansions < hi.expansions
    assert lo.stats()["nodes"] < hi.stats()["nodes"]


def test_more_cp_more_proofs():
    p = _fig()
    lo = run_mcts(p, UniformGuidance(), MctsConfig(cp=0.5, inference_budget=23))
    hi = run_mcts(p, UniformGuidance(), MctsConfig(cp=5.0, inference_budget=23))
    assert hi.stats()["proofs"] >= lo.stats()["proofs"]


def test_extract_targets():
    t = run_mcts(_fig(), UniformGuidance(), MctsConfig(inference_budget=200))
    targets = extract_targets(t)
    assert targets
    for nt in targets:
        assert len(nt.policy_target) == len(nt.actions)
        assert abs(sum(nt.policy_target) - 1.0) < 1e-12
        assert 0.0 <= nt.value_target <= 1.0
    # root-first ordering: the first entry is the virtual root
    assert targets[0].state is t.root.state


def test_dirichlet_noise_changes_priors_only_at_root():
    p = parse_problem(
        "#start: 0 1\n~q(a).\n~q(b).\nq(X).\n", name="two_starts")
    base = run_mcts(p, UniformGuidance(), MctsConfig(inference_budget=20))
    noisy = run_mcts(p, UniformGuidance(), MctsConfig(
        inference_budget=20, dirichlet_noise=(0.3, 0.25), rng_seed=7))
    assert base.root.prior != noisy.root.prior
    assert abs(sum(noisy.root.prior) - 1.0) < 1e-9
    # non-root priors stay noise-free (uniform guidance)
    for n in _walk(noisy.root):
        if n is not noisy.root and n.prior:
            assert all(abs(x - n.prior[0]) < 1e-12 for x in n.prior)


def test_terminal_revisits_consume_budget():
    """Playouts that re-reach a terminal count against the budget, so
    expansions can undershoot it on proof-dense problems."""
    p = generate_ra_problem(1, n_operators=1, operand_bound=5)
    t = run_mcts(p, UniformGuidance(), MctsConfig(inference_budget=400))
    assert t.simulations == 400 or t.root.exhausted
    assert t.expansions <= t.simulations
