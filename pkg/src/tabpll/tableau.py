"""Connection-tableau calculus: states, legal actions, proof checking, and
exhaustive search-space enumeration.

State discipline
----------------
Open goals form a stack (front = selected goal); an extension pushes the new
subgoals at the front, so a clause's subtree is fully explored before older
goals resurface.  Goals are stored *resolved*: the global substitution is
applied eagerly, so goal literals always show current bindings.

After every action a closure sweep runs on the front goal:
  * regularity: if the goal literal occurs verbatim on its own path the
    state is a dead end (no legal actions -> Failure);
  * complement: a goal whose exact complement lies on its path closes
    silently (a reduction that needs no binding);
  * lemma: a goal equal to a previously closed goal whose path is a subset
    of the current path closes silently.
Closed goals are recorded as lemmas.  Explicit Reduction actions therefore
always carry a binding.
"""

from __future__ import annotations

import json
from collections import deque
from itertools import islice
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Union

from .logic import (
    Clause,
    Literal,
    Problem,
    apply_subst,
    apply_subst_lit,
    clause_max_var,
    literal_to_str,
    rename_apart,
    unifiable_literals,
    unify_literals,
)


_EMPTY = frozenset()


class Goal(NamedTuple):
    literal: Literal
    path: tuple  # ancestor literals, root first
    pvars: frozenset = _EMPTY  # all variables in the literal and the path


class Start(NamedTuple):
    clause_id: int


class Extension(NamedTuple):
    clause_id: int
    literal_index: int


class Reduction(NamedTuple):
    path_index: int


Action = Union[Start, Extension, Reduction]


class Status(Enum):
    PROOF = "Proof"
    FAILURE = "Failure"
    UNKNOWN = "Unknown"


class TableauState(NamedTuple):
    problem: Problem
    goals: tuple  # of Goal; goals[0] is selected
    subst: dict  # accumulated global substitution (treat as frozen)
    lemmas: tuple  # (ground literal -> paths map, open-variable Goal tuple)
    var_offset: int
    depth: int  # max path length reached so far
    steps_taken: int
    max_depth: int
    started: bool


class IllegalAction(ValueError):
    pass


def _conn_index(p: Problem):
    """(pred, polarity) -> [(clause, literal_index)], plus per-clause var spans."""
    try:
        return p._conn_cache  # type: ignore[attr-defined]
    except AttributeError:
        pass
    index: dict = {}
    spans = {}
    for c in p.clauses:
        spans[c.id] = clause_max_var(c) + 1
        for i, lit in enumerate(c.literals):
            index.setdefault((lit.pred, lit.pol), []).append((c, i))
    p._conn_cache = (index, spans)  # type: ignore[attr-defined]
    return p._conn_cache


_NO_LEMMAS = ({}, ())


def _goal_vars(lit, path) -> frozenset:
    vs = set()
    for a in lit.args:
        if a.vars:
            vs |= a.vars
    for l in path:
        for a in l.args:
            if a.vars:
                vs |= a.vars
    return frozenset(vs)


def _delta_goal(g: Goal, delta, memo: dict) -> Goal:
    """Apply new bindings to a goal/lemma entry; one set probe when clean.
    ``memo`` caches rebuilt path tuples by identity for the current action,
    since paths are shared between sibling goals and lemma entries."""
    if g.pvars.isdisjoint(delta):
        return g
    lit = apply_subst_lit(g.literal, delta)
    path = memo.get(id(g.path))
    if path is None:
        path = tuple(apply_subst_lit(l, delta) for l in g.path)
        memo[id(g.path)] = path
    return Goal(lit, path, _goal_vars(lit, path))


def _lemmas_delta(lemmas, delta, memo):
    """Fresh (ground dict, wet list) with the delta applied.  Fully-ground
    entries live in the dict and are shared by reference; only entries that
    still contain variables carry a variable set to probe."""
    ground, wet = lemmas
    g2 = dict(ground)
    if not delta:
        return g2, list(wet)
    w2 = []
    ap = w2.append
    for lem in wet:
        if lem.pvars.isdisjoint(delta):
            ap(lem)
            continue
        lem = _delta_goal(lem, delta, memo)
        if lem.pvars:
            ap(lem)
        else:
            g2[lem.literal] = g2.get(lem.literal, ()) + (lem.path,)
    return g2, w2


def _lemma_closes(glit, pathset, ground, wet) -> bool:
    for lpath in ground.get(glit, ()):
        if all(l in pathset for l in lpath):
            return True
    for lem in wet:
        if lem.literal == glit and all(l in pathset for l in lem.path):
            return True
    return False


def _add_lemma(ground: dict, wet: list, g: Goal):
    if g.pvars:
        wet.append(g)
    else:
        ground[g.literal] = ground.get(g.literal, ()) + (g.path,)


def _apply_delta(goals, delta, memo):
    if not delta:
        return list(goals)
    return [_delta_goal(g, delta, memo) for g in goals]


def initial_state(p: Problem, max_depth: int = 20) -> TableauState:
    """The pre-start state; its legal actions are the start-clause choices."""
    if not p.start_clause_ids:
        raise ValueError("problem has no start clauses")
    return TableauState(p, (), {}, _NO_LEMMAS, 0, 0, 0, max_depth, False)


def initial_states(p: Problem, max_depth: int = 20):
    """One started state per start clause (the states reached by Start)."""
    root = initial_state(p, max_depth)
    return [apply_action(root, Start(cid)) for cid in p.start_clause_ids]


def _sweep(goals: list, ground: dict, open_vars: list):
    """Eagerly close front goals; stops at a regularity violation (dead end)
    or at a goal needing a real action.  Mutates its list/dict arguments."""
    while goals:
        g = goals[0]
        if g.literal in g.path:
            return  # regularity dead end
        if g.literal.negated() in g.path or _lemma_closes(
            g.literal, set(g.path), ground, open_vars
        ):
            goals.pop(0)
            _add_lemma(ground, open_vars, g)
            continue
        return


def legal_actions(s: TableauState):
    if not s.started:
        return [Start(cid) for cid in s.problem.start_clause_ids]
    if not s.goals:
        return []
    g = s.goals[0]
    glit = g.literal
    if glit in g.path:
        return []  # dead end: the state is a Failure
    out: list = []
    neg = glit.negated()
    # reductions, by path position (binding-free ones were swept already)
    for i, plit in enumerate(g.path):
        if unifiable_literals(neg, plit, s.subst):
            out.append(Reduction(i))
    # extensions, by clause id then literal index; candidate clauses are
    # probed without renaming (their variables are shifted on the fly)
    if len(g.path) + 1 <= s.max_depth:
        index, _ = _conn_index(s.problem)
        for clause, i in index.get((glit.pred, not glit.pol), ()):
            if unifiable_literals(neg, clause.literals[i], s.subst,
                                  s.var_offset):
                out.append(Extension(clause.id, i))
    return out


def _new_bindings(mgu, base):
    """Bindings in ``mgu`` but not ``base``; unify appends new bindings at
    the end, so the tail of the insertion order is exactly the delta."""
    n_new = len(mgu) - len(base)
    if not n_new:
        return {}
    delta = {}
    for k, v in islice(reversed(mgu.items()), n_new):
        delta[k] = v
    return delta


def apply_action(s: TableauState, a: Action) -> TableauState:
    if isinstance(a, Start):
        if s.started:
            raise IllegalAction("already started")
        if a.clause_id not in s.problem.start_clause_ids:
            raise IllegalAction(f"clause {a.clause_id} is not a start clause")
        clause = s.problem.clause_by_id(a.clause_id)
        _, spans = _conn_index(s.problem)
        goals = [Goal(lit, (), _goal_vars(lit, ())) for lit in clause.literals]
        ground: dict = {}
        open_vars: list = []
        _sweep(goals, ground, open_vars)
        return TableauState(
            s.problem, tuple(goals), {}, (ground, tuple(open_vars)),
            spans[clause.id], 0, s.steps_taken + 1, s.max_depth, True,
        )

    if not s.started or not s.goals:
        raise IllegalAction("no selected goal")
    g = s.goals[0]
    glit = g.literal
    if glit in g.path:
        raise IllegalAction("state is a dead end (regularity)")
    neg = glit.negated()

    if isinstance(a, Reduction):
        if not 0 <= a.path_index < len(g.path):
            raise IllegalAction("path index out of range")
        mgu = unify_literals(g.path[a.path_index], neg, s.subst)
        if mgu is None:
            raise IllegalAction("reduction literal does not unify")
        delta = _new_bindings(mgu, s.subst)
        memo: dict = {}
        ground, open_vars = _lemmas_delta(s.lemmas, delta, memo)
        _add_lemma(ground, open_vars, _delta_goal(g, delta, memo))
        goals = _apply_delta(s.goals[1:], delta, memo)
        _sweep(goals, ground, open_vars)
        return TableauState(
            s.problem, tuple(goals), mgu, (ground, tuple(open_vars)),
            s.var_offset, s.depth, s.steps_taken + 1, s.max_depth, True,
        )

    if isinstance(a, Extension):
        if len(g.path) + 1 > s.max_depth:
            raise IllegalAction("depth limit")
        try:
            clause = s.problem.clause_by_id(a.clause_id)
        except KeyError:
            raise IllegalAction(f"unknown clause {a.clause_id}") from None
        if not 0 <= a.literal_index < len(clause.literals):
            raise IllegalAction("literal index out of range")
        _, spans = _conn_index(s.problem)
        renamed = rename_apart(clause, s.var_offset)
        mgu = unify_literals(renamed.literals[a.literal_index], neg, s.subst)
        if mgu is None:
            raise IllegalAction("extension literal does not unify")
        delta = _new_bindings(mgu, s.subst)
        memo: dict = {}
        gd = _delta_goal(g, delta, memo)
        new_path = (*gd.path, gd.literal)
        # gd.pvars is exactly the variable set of new_path
        new_goals = []
        for i, lit in enumerate(renamed.literals):
            if i == a.literal_index:
                continue
            nl = apply_subst_lit(lit, delta)
            nv = gd.pvars
            for t in nl.args:
                if t.vars:
                    nv = nv | t.vars
            new_goals.append(Goal(nl, new_path, nv))
        ground, open_vars = _lemmas_delta(s.lemmas, delta, memo)
        _add_lemma(ground, open_vars, gd)
        goals = new_goals + _apply_delta(s.goals[1:], delta, memo)
        _sweep(goals, ground, open_vars)
        return TableauState(
            s.problem, tuple(goals), mgu, (ground, tuple(open_vars)),
            s.var_offset + spans[clause.id],
            max(s.depth, len(new_path)), s.steps_taken + 1, s.max_depth, True,
        )

    raise IllegalAction(f"unknown action {a!r}")


def status(s: TableauState) -> Status:
    if s.started and not s.goals:
        return Status.PROOF
    if legal_actions(s):
        return Status.UNKNOWN
    return Status.FAILURE


# ---------------------------------------------------------------------------
# independent proof checking
#
# The checker replays the action sequence with its own small interpreter that
# builds the explicit tableau tree (it shares only the logic module with the
# prover).  Lemma closures keep a reference to the closed source goal's
# subtree; verification descends through those references, which amounts to
# grafting a copy of the source subtree under the lemma-closed leaf.


class _Node:
    __slots__ = ("lit", "children", "lemma_ref")

    def __init__(self, lit):
        self.lit = lit
        self.children = []
        self.lemma_ref = None  # _Node of the lemma source when lemma-closed


def _branch_closed(branch) -> bool:
    seen = set()
    for lit in branch:
        if lit.negated() in seen:
            return True
        seen.add(lit)
    return False


def check_proof(p: Problem, actions) -> bool:
    try:
        return _check_proof(p, list(actions))
    except (ValueError, KeyError, IndexError):
        return False


def _check_proof(p: Problem, actions) -> bool:
    if not actions or not isinstance(actions[0], Start):
        return False
    a0 = actions[0]
    if a0.clause_id not in p.start_clause_ids:
        return False
    start = p.clause_by_id(a0.clause_id)

    subst: dict = {}
    offset = clause_max_var(start) + 1
    root = _Node(None)
    # goal stack entries: (literal, path literal tuple, tree node)
    stack = []
    # lemmas: (literal, path, tree node); literals re-resolved on inspection
    lemmas = []
    for lit in reversed(start.literals):
        node = _Node(lit)
        root.children.insert(0, node)
        stack.insert(0, (lit, (), node))

    def res(lit):
        return apply_subst_lit(lit, subst)

    def sweep():
        while stack:
            lit, path, node = stack[0]
            rlit = res(lit)
            rpath = tuple(res(l) for l in path)
            if rlit in rpath:
                return False  # regularity dead end inside a claimed proof
            closed = rlit.negated() in rpath
            if not closed:
                for llit, lpath, lnode in lemmas:
                    if res(llit) == rlit and set(res(l) for l in lpath) <= set(rpath):
                        node.lemma_ref = lnode
                        closed = True
                        break
            if not closed:
                return True
            stack.pop(0)
            lemmas.append((lit, path, node))
        return True

    if not sweep():
        return False

    for a in actions[1:]:
        if not stack:
            return False  # actions past closure
        lit, path, node = stack[0]
        rlit = res(lit)
        rpath = tuple(res(l) for l in path)
        if rlit in rpath:
            return False
        neg = rlit.negated()
        if isinstance(a, Reduction):
            if not 0 <= a.path_index < len(rpath):
                return False
            new = unify_literals(rpath[a.path_index], neg, subst)
            if new is None:
                return False
            if all(v in subst for v in new):
                return False  # binding-free reductions happen in the sweep
            subst = new
            stack.pop(0)
            lemmas.append((lit, path, node))
        elif isinstance(a, Extension):
            clause = p.clause_by_id(a.clause_id)
            if not 0 <= a.literal_index < len(clause.literals):
                return False
            renamed = rename_apart(clause, offset)
            offset += clause_max_var(clause) + 1
            new = unify_literals(renamed.literals[a.literal_index], neg, subst)
            if new is None:
                return False
            subst = new
            stack.pop(0)
            lemmas.append((lit, path, node))
            new_path = (*path, lit)
            pushed = []
            for i, clit in enumerate(renamed.literals):
                child = _Node(clit)
                node.children.append(child)
                if i != a.literal_index:
                    pushed.append((clit, new_path, child))
            for entry in reversed(pushed):
                stack.insert(0, entry)
        else:
            return False
        if not sweep():
            return False

    if stack:
        return False  # open goals remain

    # final structural check: every branch of the tableau tree must contain
    # a complementary pair under the final substitution
    def verify(node, branch):
        if node.lit is not None:
            branch = branch + [res(node.lit)]
        kids = node.children
        ref = node.lemma_ref
        while not kids and ref is not None:
            kids = ref.children
            ref = ref.lemma_ref
        if not kids:
            return _branch_closed(branch)
        return all(verify(c, branch) for c in kids)

    return verify(root, [])


# ---------------------------------------------------------------------------
# exhaustive enumeration


@dataclass
class SearchDag:
    nodes: list = field(default_factory=list)  # (canonical key, Status)
    edges: list = field(default_factory=list)  # (from index, label, to index)

    def counts(self):
        proofs = sum(1 for _, st in self.nodes if st is Status.PROOF)
        failures = sum(1 for _, st in self.nodes if st is Status.FAILURE)
        return len(self.nodes), proofs, failures


class BudgetExceeded(RuntimeError):
    pass


def canonical_key(s: TableauState) -> str:
    """Printed goals+paths with variables renumbered in first-occurrence
    order; lemma stores are deliberately left out so that converging
    derivations with different closure histories merge."""
    if not s.started:
        return "<root>"
    ren: dict = {}

    def pr(lit: Literal) -> str:
        lit = apply_subst_lit(lit, s.subst)
        args = tuple(_renumber(a, ren) for a in lit.args)
        return literal_to_str(Literal(lit.pol, lit.pred, args))

    parts = []
    for g in s.goals:
        parts.append(pr(g.literal) + "[" + ";".join(pr(l) for l in g.path) + "]")
    return " | ".join(parts) if parts else "<closed>"


def _renumber(t, ren):
    from .logic import VAR, Term, mkvar

    if not t.vars:
        return t
    if t.head is VAR:
        vid = t.args[0]
        if vid not in ren:
            ren[vid] = len(ren)
        return mkvar(ren[vid])
    return Term(t.head, tuple(_renumber(a, ren) for a in t.args))


def action_label(p: Problem, s: TableauState, a: Action) -> str:
    if isinstance(a, Reduction):
        return "red"
    cid = a.clause_id
    clause = p.clause_by_id(cid)
    if isinstance(a, Start):
        lits = list(clause.literals)
    else:
        sel = clause.literals[a.literal_index]
        lits = [sel] + [l for i, l in enumerate(clause.literals) if i != a.literal_index]
    return " & ".join(literal_to_str(l) for l in lits)


def enumerate_search_dag(p: Problem, max_depth: int = 20, max_nodes: int = 10000) -> SearchDag:
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    dag = SearchDag()
    root = initial_state(p, max_depth)
    key_to_idx = {canonical_key(root): 0}
    dag.nodes.append([canonical_key(root), Status.UNKNOWN])
    queue = deque([(root, 0)])
    while queue:
        s, idx = queue.popleft()
        acts = legal_actions(s)
        if s.started and not s.goals:
            dag.nodes[idx][1] = Status.PROOF
            continue
        if not acts:
            dag.nodes[idx][1] = Status.FAILURE
            continue
        for a in acts:
            child = apply_action(s, a)
            key = canonical_key(child)
            # terminal states stay distinct (one leaf per derivation, as in a
            # search tree); only in-progress states merge on the canonical key
            terminal = not child.goals or not legal_actions(child)
            if not terminal and key in key_to_idx:
                cidx = key_to_idx[key]
            else:
                if len(dag.nodes) >= max_nodes:
                    raise BudgetExceeded(f"node cap {max_nodes} exceeded")
                cidx = len(dag.nodes)
                if not terminal:
                    key_to_idx[key] = cidx
                dag.nodes.append([key, Status.UNKNOWN])
                if terminal:
                    dag.nodes[cidx][1] = Status.PROOF if not child.goals else Status.FAILURE
                else:
                    queue.append((child, cidx))
            dag.edges.append((idx, action_label(p, s, a), cidx))
    dag.nodes = [(k, st) for k, st in dag.nodes]
    return dag


_DOT_FILL = {Status.PROOF: "palegreen", Status.FAILURE: "lightcoral", Status.UNKNOWN: "gray90"}


def dag_to_dot(dag: SearchDag) -> str:
    lines = ["digraph search {", "  node [style=filled];"]
    for i, (key, st) in enumerate(dag.nodes):
        label = key.replace('"', r"\"")
        lines.append(f'  n{i} [label="{i}: {label}", fillcolor={_DOT_FILL[st]}];')
    for src, label, dst in dag.edges:
        esc = label.replace('"', r"\"")
        lines.append(f'  n{src} -> n{dst} [label="{esc}"];')
    lines.append("}")
    return "\n".join(lines)


def dag_to_json(dag: SearchDag) -> str:
    return json.dumps(
        {
            "nodes": [{"id": i, "key": k, "status": st.value} for i, (k, st) in enumerate(dag.nodes)],
            "edges": [{"from": a, "label": l, "to": b} for a, l, b in dag.edges],
        },
        indent=2,
    )
