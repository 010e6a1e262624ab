"""First-order syntax, unification, matrix parsing and arithmetic problem generation.

Terms are immutable objects carrying their free-variable set and a cached
structural hash.  Robinson Arithmetic numerals are deep ground successor
chains, so groundness short-circuits (``not t.vars``) are what keep
substitution application, occurs checks and equality tests cheap.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from random import Random
from typing import Iterable, NamedTuple, Optional

# Successor-notation numerals nest deeply (a 3-operator expression over
# operands < 10 can evaluate to several hundred), so the recursive helpers
# need more headroom than CPython's default.
if sys.getrecursionlimit() < 20000:
    sys.setrecursionlimit(20000)

VAR = "$var"  # head marker for variable terms; never a parseable symbol

_EMPTY: frozenset = frozenset()


class Term:
    """A variable (head is VAR, args = (id,)) or an application."""

    __slots__ = ("head", "args", "vars", "_hash")

    def __init__(self, head, args=()):
        self.head = head
        self.args = args
        if head is VAR:
            self.vars = frozenset((args[0],))
        else:
            vs = _EMPTY
            for a in args:
                av = a.vars
                if av:
                    vs = vs | av if vs else av
            self.vars = vs
        self._hash = None

    def __hash__(self):
        h = self._hash
        if h is None:
            if self.head is VAR:
                h = hash((VAR, self.args[0]))
            else:
                h = hash((self.head, *(hash(a) for a in self.args)))
            self._hash = h
        return h

    def __eq__(self, other):
        if self is other:
            return True
        if type(other) is not Term:
            return NotImplemented
        if self.head is VAR:
            return other.head is VAR and self.args[0] == other.args[0]
        if other.head is VAR or self.head != other.head:
            return False
        if hash(self) != hash(other):
            return False
        return self.args == other.args

    def __repr__(self):
        return f"Term<{term_to_str(self)}>"


Subst = dict  # var id -> Term


def mkvar(i: int) -> Term:
    return Term(VAR, (i,))


def is_var(t: Term) -> bool:
    return t.head is VAR


class Literal(NamedTuple):
    pol: bool  # True = positive
    pred: str
    args: tuple

    def negated(self) -> "Literal":
        return Literal(not self.pol, self.pred, self.args)


class Clause(NamedTuple):
    id: int
    literals: tuple  # non-empty tuple of Literal


@dataclass
class Problem:
    name: str
    clauses: tuple
    start_clause_ids: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.id for c in self.clauses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate clause ids")
        missing = set(self.start_clause_ids) - set(ids)
        if missing:
            raise ValueError(f"start clause ids not present: {sorted(missing)}")
        check_arities(self.clauses)

    def clause_by_id(self, cid: int) -> Clause:
        for c in self.clauses:
            if c.id == cid:
                return c
        raise KeyError(cid)


class ArityError(ValueError):
    pass


def check_arities(clauses: Iterable[Clause]) -> None:
    """Every function and predicate symbol must be used with one arity."""
    seen: dict = {}

    def visit(t: Term):
        if t.head is VAR:
            return
        key = ("f", t.head)
        ar = len(t.args)
        if seen.setdefault(key, ar) != ar:
            raise ArityError(f"symbol {t.head!r} used with arities {seen[key]} and {ar}")
        for a in t.args:
            visit(a)

    for c in clauses:
        for lit in c.literals:
            key = ("p", lit.pred)
            ar = len(lit.args)
            if seen.setdefault(key, ar) != ar:
                raise ArityError(
                    f"predicate {lit.pred!r} used with arities {seen[key]} and {ar}"
                )
            for a in lit.args:
                visit(a)


# ---------------------------------------------------------------------------
# substitutions


def walk(t: Term, s: Subst) -> Term:
    """Follow variable bindings until a non-variable or unbound variable."""
    while t.head is VAR:
        b = s.get(t.args[0])
        if b is None:
            return t
        t = b
    return t


def apply_subst(t: Term, s: Subst) -> Term:
    """Deep application of ``s`` to ``t``.

    Returns ``t`` itself (same object) when nothing changes, which keeps
    structure shared across states.
    """
    if not s or not t.vars:
        return t
    if t.head is VAR:
        b = s.get(t.args[0])
        return t if b is None else apply_subst(b, s)
    # probe per variable: t.vars is tiny, the substitution may be large
    for v in t.vars:
        if v in s:
            break
    else:
        return t
    changed = False
    args = []
    for a in t.args:
        a2 = apply_subst(a, s)
        if a2 is not a:
            changed = True
        args.append(a2)
    return Term(t.head, tuple(args)) if changed else t


def apply_subst_lit(lit: Literal, s: Subst) -> Literal:
    if not s:
        return lit
    for a in lit.args:
        if a.vars:
            break
    else:
        return lit  # ground literal: the common case in arithmetic proofs
    changed = False
    args = []
    for a in lit.args:
        a2 = apply_subst(a, s)
        if a2 is not a:
            changed = True
        args.append(a2)
    return Literal(lit.pol, lit.pred, tuple(args)) if changed else lit


def occurs(vid: int, t: Term, s: Subst) -> bool:
    stack = [t]
    while stack:
        x = stack.pop()
        if not x.vars:
            continue
        if x.head is VAR:
            b = s.get(x.args[0])
            if b is None:
                if x.args[0] == vid:
                    return True
            else:
                stack.append(b)
        else:
            stack.extend(x.args)
    return False


def _unify_into(out: Subst, stack: list) -> bool:
    """Unify the term pairs on ``stack`` extending ``out`` in place."""
    while stack:
        x, y = stack.pop()
        x = walk(x, out)
        y = walk(y, out)
        if x is y:
            continue
        if not x.vars and not y.vars:
            if x == y:
                continue
            return False
        if x.head is VAR:
            if y.head is VAR:
                if x.args[0] == y.args[0]:
                    continue
                out[x.args[0]] = y
            else:
                if occurs(x.args[0], y, out):
                    return False
                out[x.args[0]] = y
        elif y.head is VAR:
            if occurs(y.args[0], x, out):
                return False
            out[y.args[0]] = x
        else:
            if x.head != y.head or len(x.args) != len(y.args):
                return False
            stack.extend(zip(x.args, y.args))
    return True


def unify(a: Term, b: Term, s: Optional[Subst] = None) -> Optional[Subst]:
    """Most general unifier extending ``s``, or None.  Occurs check enforced.

    The input substitution is never mutated; on success a fresh dict is
    returned.  Existing bindings are never overwritten, so new bindings sit
    at the end of the result in insertion order.
    """
    out = dict(s) if s else {}
    return out if _unify_into(out, [(a, b)]) else None


def unify_literals(a: Literal, b: Literal, s: Optional[Subst]) -> Optional[Subst]:
    """Unify two literals of equal polarity and predicate."""
    if a.pol != b.pol or a.pred != b.pred or len(a.args) != len(b.args):
        return None
    out = dict(s) if s else {}
    return out if _unify_into(out, list(zip(a.args, b.args))) else None


def unifiable_literals(a: Literal, b: Literal, s: Subst,
                       shift_b: int = 0) -> bool:
    """True iff the literals unify under ``s`` with b's variables shifted
    by ``shift_b``.  Check only: neither renames b nor copies ``s`` —
    tentative bindings go to a throwaway overlay consulted before ``s``.
    Variables are tracked as (term, shift) pairs with global id
    ``var_id + shift``."""
    if a.pol != b.pol or a.pred != b.pred or len(a.args) != len(b.args):
        return False
    overlay: dict = {}

    def deref(t, sh):
        while t.head is VAR:
            v = t.args[0] + sh
            got = overlay.get(v)
            if got is None:
                bt = s.get(v)
                if bt is None:
                    return t, sh
                t, sh = bt, 0
            else:
                t, sh = got
        return t, sh

    def occ(v, t, sh) -> bool:
        stk = [(t, sh)]
        while stk:
            u, su = stk.pop()
            u, su = deref(u, su)
            if u.head is VAR:
                if u.args[0] + su == v:
                    return True
            else:
                for arg in u.args:
                    if arg.vars:
                        stk.append((arg, su))
        return False

    stack = [((x, 0), (y, shift_b)) for x, y in zip(a.args, b.args)]
    while stack:
        (x, sx), (y, sy) = stack.pop()
        if not x.vars and not y.vars:
            if x == y:
                continue
            return False
        x, sx = deref(x, sx)
        y, sy = deref(y, sy)
        if x.head is VAR:
            vx = x.args[0] + sx
            if y.head is VAR and y.args[0] + sy == vx:
                continue
            if y.vars and occ(vx, y, sy):
                return False
            overlay[vx] = (y, sy)
        elif y.head is VAR:
            vy = y.args[0] + sy
            if x.vars and occ(vy, x, sx):
                return False
            overlay[vy] = (x, sx)
        else:
            if x.head != y.head or len(x.args) != len(y.args):
                return False
            for pair in zip(x.args, y.args):
                stack.append(((pair[0], sx), (pair[1], sy)))
    return True


def term_vars(t: Term) -> frozenset:
    return t.vars


def rename_term(t: Term, offset: int) -> Term:
    if not t.vars:
        return t
    if t.head is VAR:
        return mkvar(t.args[0] + offset)
    return Term(t.head, tuple(rename_term(a, offset) for a in t.args))


def rename_apart(c: Clause, offset: int) -> Clause:
    """Copy of ``c`` with every variable id shifted by ``offset``."""
    lits = tuple(
        Literal(l.pol, l.pred, tuple(rename_term(a, offset) for a in l.args))
        for l in c.literals
    )
    return Clause(c.id, lits)


def clause_max_var(c: Clause) -> int:
    m = -1
    for lit in c.literals:
        for a in lit.args:
            if a.vars:
                m = max(m, max(a.vars))
    return m


# ---------------------------------------------------------------------------
# parsing / printing
#
# Matrix file format: one clause per line, literals separated by `|`,
# negation `~`, terms like f(a,X), clause ends with `.`; `%` starts a
# comment; optional header `#start: <ids>`.


class ParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


_TOKEN = re.compile(r"\s*(?:([A-Z_][A-Za-z0-9_]*)|([a-z0-9][A-Za-z0-9_]*)|([(),|~.]))")


def _tokenize(text: str, lineno: int):
    pos = 0
    toks = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == m.start():
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", lineno, pos + 1)
        if m.group(1):
            toks.append(("var", m.group(1), m.start(1) + 1))
        elif m.group(2):
            toks.append(("name", m.group(2), m.start(2) + 1))
        else:
            toks.append(("sym", m.group(3), m.start(3) + 1))
        pos = m.end()
    return toks


class _ClauseParser:
    def __init__(self, toks, lineno, varmap):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.varmap = varmap

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def error(self, msg):
        tok = self.peek()
        col = tok[2] if tok else (self.toks[-1][2] + 1 if self.toks else 1)
        raise ParseError(msg, self.lineno, col)

    def expect(self, val):
        tok = self.peek()
        if tok is None or tok[0] != "sym" or tok[1] != val:
            self.error(f"expected {val!r}")
        self.i += 1

    def term(self) -> Term:
        tok = self.peek()
        if tok is None:
            self.error("expected term")
        kind, val, _ = tok
        self.i += 1
        if kind == "var":
            if val not in self.varmap:
                self.varmap[val] = len(self.varmap)
            return mkvar(self.varmap[val])
        if kind != "name":
            self.error("expected term")
        nxt = self.peek()
        if nxt and nxt[0] == "sym" and nxt[1] == "(":
            self.i += 1
            args = [self.term()]
            while True:
                nxt = self.peek()
                if nxt and nxt[0] == "sym" and nxt[1] == ",":
                    self.i += 1
                    args.append(self.term())
                else:
                    break
            self.expect(")")
            return Term(val, tuple(args))
        return Term(val)

    def literal(self) -> Literal:
        pol = True
        tok = self.peek()
        if tok and tok[0] == "sym" and tok[1] == "~":
            pol = False
            self.i += 1
        t = self.term()
        if t.head is VAR:
            self.error("a variable cannot be a literal")
        return Literal(pol, t.head, t.args)

    def clause_literals(self):
        lits = [self.literal()]
        while True:
            tok = self.peek()
            if tok is None:
                self.error("expected '|' or '.'")
            if tok[0] == "sym" and tok[1] == "|":
                self.i += 1
                lits.append(self.literal())
            elif tok[0] == "sym" and tok[1] == ".":
                self.i += 1
                if self.peek() is not None:
                    self.error("trailing tokens after '.'")
                return lits
            else:
                self.error("expected '|' or '.'")


def parse_problem(text: str, name: str = "problem") -> Problem:
    clauses = []
    start_ids: Optional[tuple] = None
    metadata: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            head, _, rest = line[1:].partition(":")
            key = head.strip()
            if key == "start":
                try:
                    start_ids = tuple(int(x) for x in rest.split())
                except ValueError:
                    raise ParseError("bad #start ids", lineno, 1)
            else:
                metadata[key] = rest.strip()
            continue
        toks = _tokenize(line, lineno)
        varmap: dict = {}
        parser = _ClauseParser(toks, lineno, varmap)
        lits = parser.clause_literals()
        clauses.append(Clause(len(clauses), tuple(lits)))
    if not clauses:
        raise ParseError("no clauses", 1, 1)
    if start_ids is None:
        start_ids = tuple(c.id for c in clauses)
    return Problem(name, tuple(clauses), start_ids, metadata)


def term_to_str(t: Term) -> str:
    if t.head is VAR:
        return f"X{t.args[0]}"
    if not t.args:
        return t.head
    return f"{t.head}({','.join(term_to_str(a) for a in t.args)})"


def literal_to_str(lit: Literal) -> str:
    sign = "" if lit.pol else "~"
    if lit.args:
        return f"{sign}{lit.pred}({','.join(term_to_str(a) for a in lit.args)})"
    return f"{sign}{lit.pred}"


def clause_to_str(c: Clause) -> str:
    return " | ".join(literal_to_str(l) for l in c.literals) + "."


def problem_to_str(p: Problem) -> str:
    lines = [f"#{k}: {v}" for k, v in sorted(p.metadata.items())]
    lines.append("#start: " + " ".join(str(i) for i in p.start_clause_ids))
    lines.extend(clause_to_str(c) for c in p.clauses)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Robinson Arithmetic

ZERO: Term = Term("0")


def num(k: int) -> Term:
    t = ZERO
    for _ in range(k):
        t = Term("s", (t,))
    return t


def eval_ground(t: Term) -> int:
    """Value of a ground term over 0, s, plus, times."""
    n = 0
    while t.head == "s":  # iterative on successor chains; they get deep
        n += 1
        t = t.args[0]
    if t.head is VAR:
        raise ValueError("non-ground term")
    if t.head == "0":
        return n
    if t.head == "plus":
        return n + eval_ground(t.args[0]) + eval_ground(t.args[1])
    if t.head == "times":
        return n + eval_ground(t.args[0]) * eval_ground(t.args[1])
    raise ValueError(f"foreign symbol {t.head!r}")


_RA_AXIOM_TEXT = [
    "eq(X,X).",  # reflexivity: the closing clause
    "~eq(X,Y) | eq(Y,X).",
    "~eq(X,Y) | ~eq(Y,Z) | eq(X,Z).",
    "~eq(X,Y) | eq(s(X),s(Y)).",
    "~eq(X,Y) | eq(plus(X,Z),plus(Y,Z)).",
    "~eq(X,Y) | eq(plus(Z,X),plus(Z,Y)).",
    "~eq(X,Y) | eq(times(X,Z),times(Y,Z)).",
    "~eq(X,Y) | eq(times(Z,X),times(Z,Y)).",
    "eq(plus(X,0),X).",
    "eq(plus(X,s(Y)),s(plus(X,Y))).",
    "eq(times(X,0),0).",
    "eq(times(X,s(Y)),plus(times(X,Y),X)).",
]


def ra_axiom_clauses() -> list:
    clauses = []
    for i, line in enumerate(_RA_AXIOM_TEXT):
        toks = _tokenize(line, 0)
        parser = _ClauseParser(toks, 0, {})
        clauses.append(Clause(i, tuple(parser.clause_literals())))
    return clauses


def _random_expr(rng: Random, n_ops: int, bound: int):
    """Expression tree: ('num', k) leaves, ('plus'|'times', l, r) nodes."""
    if n_ops == 0:
        return ("num", rng.randrange(bound))
    left = rng.randint(0, n_ops - 1)
    op = rng.choice(("plus", "times"))
    return (op, _random_expr(rng, left, bound), _random_expr(rng, n_ops - 1 - left, bound))


def _expr_term(e) -> Term:
    if e[0] == "num":
        return num(e[1])
    return Term(e[0], (_expr_term(e[1]), _expr_term(e[2])))


def _expr_str(e) -> str:
    if e[0] == "num":
        return str(e[1])
    sym = "+" if e[0] == "plus" else "*"
    return f"({_expr_str(e[1])}{sym}{_expr_str(e[2])})"


def _expr_value(e) -> int:
    if e[0] == "num":
        return e[1]
    if e[0] == "plus":
        return _expr_value(e[1]) + _expr_value(e[2])
    return _expr_value(e[1]) * _expr_value(e[2])


def generate_ra_problem(rng_seed: int, n_operators: int = 3, operand_bound: int = 10) -> Problem:
    """Random true ground equation over +, * in successor notation, negated
    and appended to the arithmetic axiom matrix as the start clause."""
    if n_operators < 1 or operand_bound < 1:
        raise ValueError("n_operators and operand_bound must be >= 1")
    rng = Random(rng_seed)
    expr = _random_expr(rng, n_operators, operand_bound)
    lhs = _expr_term(expr)
    value = _expr_value(expr)
    assert eval_ground(lhs) == value  # generator oracle
    clauses = ra_axiom_clauses()
    conj = Clause(len(clauses), (Literal(False, "eq", (lhs, num(value))),))
    clauses.append(conj)
    return Problem(
        name=f"ra_{rng_seed}",
        clauses=tuple(clauses),
        start_clause_ids=(conj.id,),
        metadata={
            "expr": f"{_expr_str(expr)}={value}",
            "seed": str(rng_seed),
        },
    )
