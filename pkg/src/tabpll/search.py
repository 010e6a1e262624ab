"""Policy/value-guided Monte Carlo Tree Search over tableau states.

The tree is both the proof-finding mechanism and the training-data source:
terminal Proof leaves are the alternative proofs, terminal Failure leaves the
negative derivations, and per-node visit statistics the imitation targets.

Selection is PUCT-style: argmax over Q(a) + cp * prior(a) * sqrt(N) / (1 + n(a))
with Q(a) = w(a) / max(1, n(a)), ties broken by action order.  Terminal nodes
keep returning their reward (Proof = 1, Failure = 0) when revisited, so search
continues past the first proof and alternative proofs accumulate.  The budget
counts *simulations* (playouts), terminal revisits included; search stops
early once the whole reachable space is exhausted.

The root is virtual: its state is the pre-start state, its actions the
start-clause choices, with a uniform prior.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .logic import Problem
from .tableau import (
    Status,
    TableauState,
    apply_action,
    initial_state,
    legal_actions,
)


class Guidance(Protocol):
    """Read-only policy/value oracle used by the search."""

    def policy(self, state: TableauState, actions): ...

    def value(self, state: TableauState) -> float: ...


class UniformGuidance:
    """Unguided search: uniform policy, constant value 0.5."""

    def policy(self, state, actions):
        n = len(actions)
        return [1.0 / n] * n

    def value(self, state):
        return 0.5


@dataclass
class MctsConfig:
    cp: float = 1.0
    inference_budget: int = 2000
    max_depth: int = 20
    dirichlet_noise: Optional[tuple] = None  # (alpha, weight), off by default
    rng_seed: int = 0

    def __post_init__(self):
        if self.inference_budget < 1:
            raise ValueError("inference_budget must be >= 1")
        if self.cp < 0:
            raise ValueError("cp must be >= 0")


class TreeNode:
    """One search-tree node.  ``children`` is a list aligned with ``actions``
    (None until the child is materialized), which keeps action order — and
    hence tie-breaking — deterministic."""

    __slots__ = (
        "state", "visits", "total_reward", "actions", "prior", "children",
        "terminal_status", "expanded", "exhausted",
    )

    def __init__(self, state: TableauState):
        self.state = state
        self.visits = 0
        self.total_reward = 0.0
        self.actions = None
        self.prior = None
        self.children = None
        self.terminal_status = None
        self.expanded = False
        self.exhausted = False

    @property
    def value_estimate(self) -> float:
        return self.total_reward / max(1, self.visits)


@dataclass
class SearchTree:
    problem: Problem
    root: TreeNode
    config: MctsConfig
    expansions: int = 0
    simulations: int = 0

    def stats(self) -> dict:
        """Summary used by the JSON export: solved flag, proof count,
        node count, and maximum action depth reached."""
        n_nodes = 0
        n_proofs = 0
        max_depth = 0
        stack = [(self.root, 0)]
        while stack:
            node, d = stack.pop()
            n_nodes += 1
            max_depth = max(max_depth, d)
            if node.terminal_status is Status.PROOF:
                n_proofs += 1
            if node.children:
                for c in node.children:
                    if c is not None:
                        stack.append((c, d + 1))
        return {
            "solved": n_proofs > 0,
            "proofs": n_proofs,
            "nodes": n_nodes,
            "depth": max_depth,
            "expansions": self.expansions,
            "simulations": self.simulations,
        }


def _expand(node: TreeNode, g: Guidance, rng, noise) -> float:
    """Compute a node's actions, priors, and terminal status; return its
    first-visit evaluation (terminal reward or the value model's estimate)."""
    s = node.state
    acts = legal_actions(s)
    node.actions = tuple(acts)
    node.expanded = True
    if s.started and not s.goals:
        node.terminal_status = Status.PROOF
        node.exhausted = True
        return 1.0
    if not acts:
        node.terminal_status = Status.FAILURE
        node.exhausted = True
        return 0.0
    node.terminal_status = Status.UNKNOWN
    node.children = [None] * len(acts)
    if s.started:
        node.prior = list(g.policy(s, acts))
    else:
        node.prior = [1.0 / len(acts)] * len(acts)
    if noise is not None:
        alpha, weight = noise
        dirichlet = [rng.gammavariate(alpha, 1.0) for _ in acts]
        total = sum(dirichlet) or 1.0
        node.prior = [
            (1 - weight) * p + weight * d / total
            for p, d in zip(node.prior, dirichlet)
        ]
    return g.value(s)


def _select_child(node: TreeNode, cp: float, skip_exhausted: bool) -> int:
    sqrt_n = math.sqrt(node.visits)
    best_i = -1
    best_score = -math.inf
    for i, prior in enumerate(node.prior):
        child = node.children[i]
        if child is None:
            q = 0.0
            n = 0
        elif skip_exhausted and child.exhausted:
            continue
        else:
            q = child.total_reward / max(1, child.visits)
            n = child.visits
        score = q + cp * prior * sqrt_n / (1 + n)
        if score > best_score:
            best_score = score
            best_i = i
    return best_i


def run_mcts(p: Problem, g: Guidance, cfg: MctsConfig) -> SearchTree:
    root = TreeNode(initial_state(p, cfg.max_depth))
    tree = SearchTree(p, root, cfg)
    rng = random.Random(cfg.rng_seed)

    # The budget counts simulations (playouts).  A playout that re-reaches
    # an already-expanded terminal repeats its reward and still consumes
    # budget: exploitation of a found proof therefore spends the budget,
    # and raising cp buys breadth — and alternative proofs — instead.
    while tree.simulations < cfg.inference_budget and not root.exhausted:
        tree.simulations += 1
        path = [root]
        node = root
        while node.expanded and node.terminal_status is Status.UNKNOWN:
            i = _select_child(node, cfg.cp, False)
            child = node.children[i]
            if child is None:
                child = TreeNode(apply_action(node.state, node.actions[i]))
                node.children[i] = child
            node = child
            path.append(node)

        if not node.expanded:
            noise = cfg.dirichlet_noise if node is root else None
            reward = _expand(node, g, rng, noise)
            tree.expansions += 1
        else:  # terminal revisit: the reward repeats
            reward = 1.0 if node.terminal_status is Status.PROOF else 0.0

        for n in reversed(path):
            n.visits += 1
            n.total_reward += reward
        for n in reversed(path):
            if n.exhausted or not n.expanded:
                continue
            if n.children is not None and all(
                c is not None and c.exhausted for c in n.children
            ):
                n.exhausted = True
    return tree


class NodeTargets:
    """Per-node MCTS statistics: visit-frequency policy target and average
    accumulated reward, the imitation targets of the BS baseline."""

    __slots__ = ("state", "actions", "policy_target", "value_target")

    def __init__(self, state, actions, policy_target, value_target):
        self.state = state
        self.actions = actions
        self.policy_target = policy_target
        self.value_target = value_target


def extract_targets(t: SearchTree):
    """Visit-frequency policy targets and value targets for every expanded
    internal node with at least one visited child."""
    out = []
    stack = [t.root]
    while stack:
        node = stack.pop()
        if not node.expanded or node.children is None:
            continue
        visits = [0 if c is None else c.visits for c in node.children]
        total = sum(visits)
        if total > 0:
            out.append(NodeTargets(
                node.state,
                node.actions,
                [v / total for v in visits],
                node.total_reward / max(1, node.visits),
            ))
        for c in node.children:
            if c is not None:
                stack.append(c)
    return out


def _terminal_paths(t: SearchTree, status: Status):
    out = []
    stack = [(t.root, ())]
    while stack:
        node, acts = stack.pop()
        if node.terminal_status is status:
            out.append(acts)
        if node.children:
            for i in range(len(node.children) - 1, -1, -1):
                c = node.children[i]
                if c is not None:
                    stack.append((c, acts + (node.actions[i],)))
    return out


def proofs_in_tree(t: SearchTree):
    """All distinct root-to-Proof action sequences, as Derivations."""
    from .dataset import Derivation

    seen = set()
    out = []
    for acts in _terminal_paths(t, Status.PROOF):
        if acts not in seen:
            seen.add(acts)
            out.append(Derivation(t.problem.name, list(acts), Status.PROOF))
    return out


def failures_in_tree(t: SearchTree):
    """All distinct root-to-Failure action sequences, as Derivations."""
    from .dataset import Derivation

    seen = set()
    out = []
    for acts in _terminal_paths(t, Status.FAILURE):
        if acts not in seen:
            seen.add(acts)
            out.append(Derivation(t.problem.name, list(acts), Status.FAILURE))
    return out
