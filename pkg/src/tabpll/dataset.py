"""Search trees to PLL training samples.

A sample groups every proof found in one tree (the allowed labels) with every
terminal failure (explicitly wrong derivations) and the per-node visit
statistics used by the imitation baseline.  Samples are *partial*: the loss
layer must treat derivations that are absent from the sample as unknown, not
as disallowed.

Storage is one JSON record per line with a schema version field; a version
mismatch or a syntactically broken record is a load error that names the
offending record index.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .tableau import Extension, Reduction, Start, Status

FORMAT_VERSION = 1


@dataclass
class Derivation:
    problem: str
    actions: list
    status: Status

    @property
    def length(self) -> int:
        return len(self.actions)

    def sort_key(self):
        """Length, then lexicographic action order — the deterministic
        tie-break used by the selection strategies."""
        return (self.length, tuple(_action_tuple(a) for a in self.actions))

    def __eq__(self, other):
        return (
            isinstance(other, Derivation)
            and self.problem == other.problem
            and self.actions == other.actions
            and self.status == other.status
        )


@dataclass
class PllSample:
    problem: str
    proofs: list  # non-empty, distinct action sequences
    failures: list = field(default_factory=list)
    tree_targets: Optional[list] = None  # per-node MCTS targets (for BS)

    def __post_init__(self):
        if not self.proofs:
            raise ValueError("a PllSample needs at least one proof")
        seen = set()
        for d in self.proofs:
            key = tuple(_action_tuple(a) for a in d.actions)
            if key in seen:
                raise ValueError("duplicate proof in sample")
            seen.add(key)
            if d.problem != self.problem:
                raise ValueError("proof from a different problem")


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str  # "short" | "long" | "rand"
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("short", "long", "rand"):
            raise ValueError(f"unknown selection strategy {self.kind!r}")


def extract_sample(tree) -> Optional[PllSample]:
    """All proof and failure derivations plus tree targets; absent (None)
    when the tree holds no proof."""
    from .search import extract_targets, failures_in_tree, proofs_in_tree

    proofs = proofs_in_tree(tree)
    if not proofs:
        return None
    return PllSample(
        problem=tree.problem.name,
        proofs=proofs,
        failures=failures_in_tree(tree),
        tree_targets=extract_targets(tree),
    )


def select_single(s: PllSample, strat: SelectionStrategy) -> Derivation:
    return _select(s.proofs, strat)


def _select(derivs: Sequence[Derivation], strat: SelectionStrategy) -> Derivation:
    if not derivs:
        raise ValueError("nothing to select from")
    if strat.kind == "short":
        return min(derivs, key=Derivation.sort_key)
    if strat.kind == "long":
        # longest, ties by lexicographically-first action sequence
        longest = max(d.length for d in derivs)
        return min(
            (d for d in derivs if d.length == longest), key=Derivation.sort_key
        )
    rng = random.Random(strat.rng_seed)
    return derivs[rng.randrange(len(derivs))]


def pair_with_failure(s: PllSample, strat: SelectionStrategy):
    """(proof to imitate, failure to avoid or None), both drawn with the
    same strategy kind."""
    proof = select_single(s, strat)
    failure = _select(s.failures, strat) if s.failures else None
    return proof, failure


# ---------------------------------------------------------------------------
# JSONL persistence


def _action_tuple(a):
    if isinstance(a, Start):
        return ("s", a.clause_id)
    if isinstance(a, Extension):
        return ("e", a.clause_id, a.literal_index)
    if isinstance(a, Reduction):
        return ("r", a.path_index)
    raise ValueError(f"unknown action {a!r}")


def _action_from(t):
    kind = t[0]
    if kind == "s":
        return Start(t[1])
    if kind == "e":
        return Extension(t[1], t[2])
    if kind == "r":
        return Reduction(t[1])
    raise MalformedRecord(-1, f"unknown action kind {kind!r}")


class MalformedRecord(ValueError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"record {index}: {reason}")
        self.index = index


def _derivation_to_json(d: Derivation):
    return {
        "problem": d.problem,
        "actions": [list(_action_tuple(a)) for a in d.actions],
        "status": d.status.value,
        "length": d.length,
    }


def _derivation_from_json(obj, index: int) -> Derivation:
    try:
        return Derivation(
            problem=obj["problem"],
            actions=[_action_from(t) for t in obj["actions"]],
            status=Status(obj["status"]),
        )
    except (KeyError, TypeError, IndexError) as e:
        raise MalformedRecord(index, f"bad derivation: {e}") from e


def save_samples(samples: Sequence[PllSample], path) -> None:
    """Tree targets are not persisted (they are only meaningful next to the
    in-memory tree); proofs and failures round-trip losslessly."""
    with open(path, "w") as f:
        for s in samples:
            rec = {
                "version": FORMAT_VERSION,
                "problem": s.problem,
                "proofs": [_derivation_to_json(d) for d in s.proofs],
                "failures": [_derivation_to_json(d) for d in s.failures],
            }
            f.write(json.dumps(rec) + "\n")


def load_samples(path) -> list:
    out = []
    with open(path) as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(i, f"bad JSON: {e}") from e
            if rec.get("version") != FORMAT_VERSION:
                raise MalformedRecord(
                    i, f"unsupported version {rec.get('version')!r}"
                )
            try:
                out.append(PllSample(
                    problem=rec["problem"],
                    proofs=[
                        _derivation_from_json(d, i) for d in rec["proofs"]
                    ],
                    failures=[
                        _derivation_from_json(d, i) for d in rec["failures"]
                    ],
                ))
            except (KeyError, TypeError) as e:
                raise MalformedRecord(i, f"bad sample: {e}") from e
    return out
