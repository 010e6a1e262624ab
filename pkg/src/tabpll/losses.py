"""Training objectives over sets of alternative proofs, with exact analytic
gradients.

A sample provides the probabilities the policy assigns to the enumerated
derivations (the proofs found for one problem).  The sample is partial: the
enumerated proofs are the allowed labels, everything else — explicit failures
and the unenumerated remainder alike — is unknown mass, and only the Libra
loss touches it, through its 1 - P_acc disallowed term.

Losses come in three layers:
  * probability level: value and dL/dp for a probability vector p and
    allowed mask y;
  * logit level: the same composed with softmax, p = softmax(z);
  * sequential level: p are products of per-step policy probabilities along
    derivations, and gradients are assembled per step via the chain rule,
    with shared prefixes receiving summed contributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .dataset import PllSample, SelectionStrategy, pair_with_failure, select_single
from .tableau import apply_action, initial_state, legal_actions

P_FLOOR = 1e-12  # probabilities clamped to >= this inside logs
P_ACC_CEIL = 1.0 - 1e-12  # P_acc clamped below 1 for the Libra term


# ---------------------------------------------------------------------------
# Loss kinds and CLI string parsing

_STRATS = ("short", "long", "rand")


@dataclass(frozen=True)
class LossKind:
    name: str  # bs | nll | uniform | merit | libra | single | single_pair
    beta: Optional[float] = None  # merit only
    strategy: Optional[str] = None  # single losses only
    lam_fail: float = 1.0  # single_pair only

    def __post_init__(self):
        if self.name == "merit":
            if self.beta is None or not 0.0 <= self.beta <= 1.0:
                raise ValueError("merit requires beta in [0, 1]")
        if self.name in ("single", "single_pair"):
            if self.strategy not in _STRATS:
                raise ValueError(f"strategy must be one of {_STRATS}")
        if self.lam_fail < 0:
            raise ValueError("lam_fail must be >= 0")

    def __str__(self):
        if self.name == "merit":
            return f"merit:{self.beta:g}"
        if self.name == "single":
            return self.strategy
        if self.name == "single_pair":
            return f"{self.strategy}_pm"
        return self.name


VALID_LOSS_STRINGS = (
    "bs | nll | uniform | merit:<beta> | libra | "
    "short | long | rand | short_pm | long_pm | rand_pm (aliases short± ...)"
)


def parse_loss(s: str, lam_fail: float = 1.0) -> LossKind:
    s = s.strip().lower().replace("±", "_pm")
    if s in ("bs", "nll", "uniform", "libra"):
        return LossKind(s)
    if s.startswith("merit:"):
        try:
            beta = float(s.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad merit beta in {s!r}; valid: {VALID_LOSS_STRINGS}")
        return LossKind("merit", beta=beta)
    if s in _STRATS:
        return LossKind("single", strategy=s)
    for st in _STRATS:
        if s == st + "_pm":
            return LossKind("single_pair", strategy=st, lam_fail=lam_fail)
    raise ValueError(f"unknown loss {s!r}; valid: {VALID_LOSS_STRINGS}")


# ---------------------------------------------------------------------------
# Probability-level losses: (value, dL/dp)


def _checked(p, y):
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ValueError("p and y must be aligned")
    if y.sum() < 1:
        raise ValueError("at least one allowed label required")
    return p, y


def nll_loss(p, y):
    """-log P_acc: maximize the total allowed mass."""
    p, y = _checked(p, y)
    p_acc = max(float((p * y).sum()), P_FLOOR)
    value = -math.log(p_acc)
    grad = -y / p_acc
    return value, grad


def uniform_loss(p, y):
    """-sum of allowed log-probabilities; minimized by the uniform split."""
    p, y = _checked(p, y)
    cp = np.maximum(p, P_FLOOR)
    value = -float((y * np.log(cp)).sum())
    grad = -y / cp
    return value, grad


def merit_weights(p, y, beta: float):
    p, y = _checked(p, y)
    cp = np.maximum(p, P_FLOOR)
    p_acc = max(float((p * y).sum()), P_FLOOR)
    raw = y * (cp / p_acc) ** beta
    return raw / raw.sum()


def merit_loss(p, y, beta: float, frozen_w=None):
    """Interpolates NLL (beta=1) and per-label Uniform (beta=0); the weights
    are treated as constants (no gradient flows through them).  Passing
    ``frozen_w`` evaluates the stop-gradient surrogate at fixed weights,
    which is what finite-difference checks must differentiate."""
    p, y = _checked(p, y)
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must be in [0, 1]")
    cp = np.maximum(p, P_FLOOR)
    w = merit_weights(p, y, beta) if frozen_w is None else np.asarray(frozen_w)
    value = -float((w * np.log(cp)).sum())
    grad = -w / cp
    return value, grad


def libra_loss(p, y):
    """Allowed term -(1/k) sum log p_i plus disallowed term log(1 - P_acc);
    under softmax this pushes every allowed logit equally (by 1/k)."""
    p, y = _checked(p, y)
    k = float(y.sum())
    cp = np.maximum(p, P_FLOOR)
    p_acc = float((p * y).sum())
    if p_acc <= 0:
        raise ValueError("libra requires P_acc > 0")
    p_acc = min(p_acc, P_ACC_CEIL)
    value = -float((y * np.log(cp)).sum()) / k + math.log(1.0 - p_acc)
    grad = -y / (k * cp) - y / (1.0 - p_acc)
    return value, grad


def prob_loss(kind: LossKind, p, y, merit_frozen_w=None):
    if kind.name == "nll":
        return nll_loss(p, y)
    if kind.name == "uniform":
        return uniform_loss(p, y)
    if kind.name == "merit":
        return merit_loss(p, y, kind.beta, frozen_w=merit_frozen_w)
    if kind.name == "libra":
        return libra_loss(p, y)
    raise ValueError(f"{kind} is not a probability-level loss")


# ---------------------------------------------------------------------------
# Logit-level composition: p = softmax(z)


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def logit_loss(kind: LossKind, z, y):
    """(value, dL/dz, p) for p = softmax(z)."""
    p = softmax(z)
    value, dp = prob_loss(kind, p, y)
    # softmax Jacobian: dz_i = p_i * (dp_i - sum_j p_j dp_j)
    dz = p * (dp - float((p * dp).sum()))
    return value, dz, p


# ---------------------------------------------------------------------------
# Sequential layer: derivation probabilities from per-step policies


class StepRecord:
    """One replayed derivation step: the state, its legal actions, the
    policy distribution over them, and the index of the taken action."""

    __slots__ = ("state", "actions", "dist", "taken")

    def __init__(self, state, actions, dist, taken):
        self.state = state
        self.actions = actions
        self.dist = dist
        self.taken = taken


class ReplayError(ValueError):
    pass


class _ReplayCache:
    """Replays derivations of one problem against a fixed policy, caching
    states and step distributions by action prefix so that shared prefixes
    are evaluated once and map to identical StepRecord objects."""

    def __init__(self, problem, guidance, max_depth: int = 20):
        self.guidance = guidance
        self.states = {(): initial_state(problem, max_depth)}
        self.steps = {}  # prefix -> StepRecord for the step taken at prefix

    def replay(self, actions):
        """StepRecords along a derivation; raises ReplayError on an illegal
        or unrecognized action."""
        out = []
        prefix = ()
        for a in actions:
            nxt = prefix + (a,)
            rec = self.steps.get(nxt)
            if rec is None:
                state = self.states[prefix]
                legal = legal_actions(state)
                try:
                    taken = legal.index(a)
                except ValueError:
                    raise ReplayError(f"action {a!r} illegal after {prefix!r}")
                dist = np.asarray(self.guidance.policy(state, legal), dtype=float)
                rec = StepRecord(state, legal, dist, taken)
                self.steps[nxt] = rec
                if nxt not in self.states:
                    self.states[nxt] = apply_action(state, a)
            out.append(rec)
            prefix = nxt
        return out


def derivation_logprob(d, g, problem=None, cache: Optional[_ReplayCache] = None):
    """(log probability, step records) of a derivation under policy g.

    The predicted probability of a derivation is the product of the stepwise
    policy probabilities of its actions."""
    if cache is None:
        if problem is None:
            raise ValueError("need a problem or a replay cache")
        cache = _ReplayCache(problem, g)
    steps = cache.replay(d.actions)
    logprob = 0.0
    for rec in steps:
        logprob += math.log(max(float(rec.dist[rec.taken]), P_FLOOR))
    return logprob, steps


class StepGradient:
    """Loss gradient with respect to one step's action logits."""

    __slots__ = ("state", "actions", "grad")

    def __init__(self, state, actions, grad):
        self.state = state
        self.actions = actions
        self.grad = grad


def assemble_sequential_gradient(contributions):
    """Per-step logit gradients from per-derivation log-probability
    gradients.

    ``contributions`` is a sequence of (steps, c) pairs where ``steps`` are
    the derivation's StepRecords and c = dL/d(log p_d).  For a step with
    distribution q and taken index t, d(log p_d)/d(logits) = e_t - q; steps
    shared between derivations (identical StepRecord objects) accumulate."""
    acc = {}
    order = []
    for steps, c in contributions:
        for rec in steps:
            key = id(rec)
            slot = acc.get(key)
            if slot is None:
                slot = StepGradient(rec.state, rec.actions, -c * rec.dist)
                slot.grad[rec.taken] += c
                acc[key] = slot
                order.append(slot)
            else:
                slot.grad -= c * rec.dist
                slot.grad[rec.taken] += c
    return order


def proof_logprobs(sample: PllSample, g, problem, max_depth: int = 20):
    """Log derivation probabilities of a sample's proofs under policy g."""
    cache = _ReplayCache(problem, g, max_depth)
    out = []
    for d in sample.proofs:
        lp, _ = derivation_logprob(d, g, cache=cache)
        out.append(lp)
    return np.asarray(out)


def sequential_merit_weights(sample: PllSample, beta: float, g, problem,
                             max_depth: int = 20):
    """Merit weights over a sample's proofs, computed stably from log
    probabilities: w_d is the softmax of beta times the log probability."""
    lp = proof_logprobs(sample, g, problem, max_depth)
    raw = np.exp(beta * (lp - lp.max()))
    return raw / raw.sum()


def pll_sequential_loss(sample: PllSample, kind: LossKind, g, problem,
                        max_depth: int = 20, merit_frozen_w=None):
    """(value, step gradients) of a probability-level PLL loss applied to
    the derivation probabilities of a sample's proofs.

    Computed in log space: derivation probabilities are products of dozens
    of step probabilities and underflow fast, but every loss here has a
    stable form in the log probabilities (P_acc via log-sum-exp)."""
    cache = _ReplayCache(problem, g, max_depth)
    steps_per_proof = []
    logps = []
    for d in sample.proofs:
        lp, steps = derivation_logprob(d, g, cache=cache)
        steps_per_proof.append(steps)
        logps.append(lp)
    lp = np.asarray(logps)
    k = len(lp)
    lse = float(logsumexp(lp))  # log P_acc (clamped to < 0 by construction?)
    # numerical guard: rounding can push the sum just over 1
    lse = min(lse, -P_FLOOR)
    rel = np.exp(lp - lse)  # p_d / P_acc
    rel /= rel.sum()
    if kind.name == "nll":
        value = -lse
        dlogp = -rel  # dL/d log p_d
    elif kind.name == "uniform":
        value = -float(lp.sum())
        dlogp = -np.ones(k)
    elif kind.name == "merit":
        if merit_frozen_w is None:
            raw = np.exp(kind.beta * (lp - lp.max()))
            w = raw / raw.sum()
        else:
            w = np.asarray(merit_frozen_w)
        value = -float((w * lp).sum())
        dlogp = -w
    elif kind.name == "libra":
        p_acc = min(math.exp(lse), P_ACC_CEIL)
        value = -float(lp.sum()) / k + math.log(1.0 - p_acc)
        dlogp = -np.ones(k) / k - p_acc * rel / (1.0 - p_acc)
    else:
        raise ValueError(f"{kind} is not a probability-level loss")
    contributions = [
        (steps, float(c)) for steps, c in zip(steps_per_proof, dlogp)
    ]
    return value, assemble_sequential_gradient(contributions)


def single_proof_loss(sample: PllSample, strat: SelectionStrategy,
                      lam_fail: float, g, problem, max_depth: int = 20):
    """Maximize one selected proof's log probability; when lam_fail > 0 and
    a failure is available, also minimize the selected failure's."""
    cache = _ReplayCache(problem, g, max_depth)
    if lam_fail > 0:
        proof, failure = pair_with_failure(sample, strat)
    else:
        proof, failure = select_single(sample, strat), None
    lp, steps = derivation_logprob(proof, g, cache=cache)
    value = -lp
    contributions = [(steps, -1.0)]
    if failure is not None and lam_fail > 0:
        lf, fsteps = derivation_logprob(failure, g, cache=cache)
        value += lam_fail * lf
        contributions.append((fsteps, lam_fail))
    return value, assemble_sequential_gradient(contributions)


def bs_imitation_loss(tree_targets, g):
    """Mean over expanded nodes of the cross-entropy between the node's
    MCTS visit-frequency target and the model policy; one tree is one
    sample, so per-node terms are averaged."""
    if not tree_targets:
        raise ValueError("tree has no expanded nodes with visits")
    n = len(tree_targets)
    value = 0.0
    grads = []
    for t in tree_targets:
        dist = np.asarray(g.policy(t.state, t.actions), dtype=float)
        target = np.asarray(t.policy_target, dtype=float)
        value += -float((target * np.log(np.maximum(dist, P_FLOOR))).sum())
        grads.append(StepGradient(t.state, t.actions, (dist - target) / n))
    return value / n, grads


def sample_loss(sample: PllSample, kind: LossKind, g, problem,
                max_depth: int = 20, rng_seed: int = 0,
                merit_frozen_w=None):
    """Dispatch a LossKind on one sample: (value, step gradients)."""
    if kind.name == "bs":
        if sample.tree_targets is None:
            raise ValueError("bs loss needs tree targets in the sample")
        return bs_imitation_loss(sample.tree_targets, g)
    if kind.name == "single":
        return single_proof_loss(
            sample, SelectionStrategy(kind.strategy, rng_seed), 0.0, g,
            problem, max_depth)
    if kind.name == "single_pair":
        return single_proof_loss(
            sample, SelectionStrategy(kind.strategy, rng_seed),
            kind.lam_fail, g, problem, max_depth)
    return pll_sequential_loss(sample, kind, g, problem, max_depth,
                               merit_frozen_w=merit_frozen_w)
