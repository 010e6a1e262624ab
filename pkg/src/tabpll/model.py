"""Hashed-feature linear policy/value model with analytic gradients.

Features are term walks: every root-to-descendant symbol path of length at
most 3, hashed with crc32 into a fixed dimension D.  Successor-numeral
chains are compressed into one log-bucketed pseudo-symbol so that deep
ground numerals neither blow up the walk nor the feature count.  The policy
scores (state, action) pairs linearly and softmaxes over the legal actions;
the value head is a sigmoid over state features with disjoint weights.

Per-literal walks are cached globally (literals are immutable and recur
across states), which keeps featurization cheap inside the search loop.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .losses import LossKind, sample_loss, sequential_merit_weights, softmax
from .tableau import Extension, Goal, Reduction, Start, TableauState
from .logic import VAR, Term

MODEL_FORMAT_VERSION = 1

DEFAULT_D = 1 << 18


def _hash(tag: str, path) -> int:
    return zlib.crc32((tag + "\x00" + "\x1f".join(path)).encode())


def _symbol(t: Term) -> str:
    if t.head is VAR:
        return "*V"
    return t.head


def _walk_term(t: Term, prefix, counts, tag: str, D: int):
    """Emit all suffix symbol paths of length <= 3 ending at each node;
    successor chains are compressed to one bucketed symbol."""
    if t.head == "s":
        k = 0
        while t.head == "s":
            k += 1
            t = t.args[0]
        sym = f"s~{k.bit_length()}"
        kids = (t,)
    else:
        sym = _symbol(t)
        kids = t.args if t.head is not VAR else ()
    here = prefix + (sym,)
    if len(here) > 3:
        here = here[-3:]
    for i in range(len(here)):
        idx = _hash(tag, here[i:]) % D
        counts[idx] = counts.get(idx, 0) + 1
    for c in kids:
        _walk_term(c, here[-2:], counts, tag, D)


def _literal_features(lit, tag: str, D: int, cache: dict) -> dict:
    key = (tag, lit)
    got = cache.get(key)
    if got is not None:
        return got
    counts: dict = {}
    root = ("~" if not lit.pol else "") + lit.pred
    counts[_hash(tag, (root,)) % D] = 1
    for a in lit.args:
        _walk_term(a, (root,), counts, tag, D)
    cache[key] = counts
    return counts


def _bucket(n: int) -> int:
    return n.bit_length()


def _merge(dst: dict, src: dict):
    for i, c in src.items():
        dst[i] = dst.get(i, 0) + c


@dataclass
class ModelConfig:
    D: int = DEFAULT_D
    H: int = 0  # 0 = linear; H > 0 adds one tanh hidden layer
    learning_rate: float = 0.05
    optimizer: str = "sgd"  # "sgd" | "adam"
    rng_seed: int = 0


class PolicyModel:
    """Linear (or one-hidden-layer) policy scorer plus a separate sigmoid
    value head over the same hashed feature space.  Implements the Guidance
    interface (policy / value) directly."""

    def __init__(self, cfg: Optional[ModelConfig] = None):
        self.cfg = cfg or ModelConfig()
        D, H = self.cfg.D, self.cfg.H
        rng = np.random.default_rng(self.cfg.rng_seed)
        if H > 0:
            scale = 1.0 / np.sqrt(H)
            self.w_hidden = rng.normal(0.0, 0.01, size=(H, D))
            self.w_out = rng.normal(0.0, scale, size=H)
        else:
            self.w_hidden = None
            self.w_out = None
        self.w_policy = np.zeros(D)
        self.w_value = np.zeros(D)
        self._lit_cache: dict = {}
        self._pdot_cache: dict = {}  # (tag, literal) -> policy-weight dot
        self._vdot_cache: dict = {}  # (tag, literal) -> value-weight dot
        self._adam_state = None

    def _invalidate(self):
        """Weights changed: cached per-literal dot products are stale."""
        self._pdot_cache.clear()
        self._vdot_cache.clear()

    def _lit_dot(self, tag, lit, weights, cache: dict) -> float:
        key = (tag, lit)
        got = cache.get(key)
        if got is None:
            feats = _literal_features(lit, tag, self.cfg.D, self._lit_cache)
            got = sum(weights[i] * c for i, c in feats.items())
            cache[key] = got
        return got

    # -- featurization ----------------------------------------------------

    def state_features(self, state: TableauState) -> dict:
        D = self.cfg.D
        counts: dict = {}
        if state.goals:
            g: Goal = state.goals[0]
            _merge(counts, _literal_features(g.literal, "g", D, self._lit_cache))
            for plit in g.path:
                _merge(counts, _literal_features(plit, "p", D, self._lit_cache))
            counts[_hash("d", (str(_bucket(len(g.path))),)) % D] = 1
        counts[_hash("n", (str(_bucket(len(state.goals))),)) % D] = 1
        return counts

    def action_features(self, state: TableauState, action) -> dict:
        D = self.cfg.D
        counts: dict = {}
        if isinstance(action, Start):
            counts[_hash("A", ("start", str(action.clause_id))) % D] = 1
        elif isinstance(action, Extension):
            clause = state.problem.clause_by_id(action.clause_id)
            lit = clause.literals[action.literal_index]
            _merge(counts, _literal_features(lit, "a", D, self._lit_cache))
            counts[_hash("A", ("ext", str(action.clause_id),
                               str(action.literal_index))) % D] = 1
        elif isinstance(action, Reduction):
            g = state.goals[0]
            plit = g.path[action.path_index]
            _merge(counts, _literal_features(plit, "a", D, self._lit_cache))
            counts[_hash("A", ("red",)) % D] = 1
        else:
            raise ValueError(f"unknown action {action!r}")
        return counts

    def featurize(self, state: TableauState, action) -> dict:
        """Sparse index -> count vector for one (state, action) pair."""
        counts = dict(self.state_features(state))
        _merge(counts, self.action_features(state, action))
        return counts

    # -- forward passes ---------------------------------------------------

    def _score(self, feats: dict) -> float:
        if self.cfg.H > 0:
            x = np.zeros(self.cfg.D)
            for i, c in feats.items():
                x[i] = c
            return float(self.w_out @ np.tanh(self.w_hidden @ x))
        w = self.w_policy
        return sum(w[i] * c for i, c in feats.items())

    def policy_forward(self, state: TableauState, actions):
        """(probabilities, logits) over the given legal actions."""
        if not actions:
            raise ValueError("actions must be non-empty")
        if self.cfg.H > 0:
            logits = np.array([
                self._score(self.featurize(state, a)) for a in actions
            ])
            return softmax(logits), logits
        w = self.w_policy
        pc = self._pdot_cache
        base = 0.0
        if state.goals:
            g = state.goals[0]
            base += self._lit_dot("g", g.literal, w, pc)
            for plit in g.path:
                base += self._lit_dot("p", plit, w, pc)
            base += w[_hash("d", (str(_bucket(len(g.path))),)) % self.cfg.D]
        base += w[_hash("n", (str(_bucket(len(state.goals))),)) % self.cfg.D]
        D = self.cfg.D
        logits = np.empty(len(actions))
        for j, a in enumerate(actions):
            z = base
            if isinstance(a, Start):
                z += w[_hash("A", ("start", str(a.clause_id))) % D]
            elif isinstance(a, Extension):
                clause = state.problem.clause_by_id(a.clause_id)
                z += self._lit_dot(
                    "a", clause.literals[a.literal_index], w, pc)
                z += w[_hash("A", ("ext", str(a.clause_id),
                                   str(a.literal_index))) % D]
            else:
                z += self._lit_dot(
                    "a", state.goals[0].path[a.path_index], w, pc)
                z += w[_hash("A", ("red",)) % D]
            logits[j] = z
        return softmax(logits), logits

    def value_forward(self, state: TableauState) -> float:
        wv = self.w_value
        vc = self._vdot_cache
        z = 0.0
        if state.goals:
            g = state.goals[0]
            z += self._lit_dot("g", g.literal, wv, vc)
            for plit in g.path:
                z += self._lit_dot("p", plit, wv, vc)
            z += wv[_hash("d", (str(_bucket(len(g.path))),)) % self.cfg.D]
        z += wv[_hash("n", (str(_bucket(len(state.goals))),)) % self.cfg.D]
        return float(1.0 / (1.0 + np.exp(-z)))

    # -- Guidance interface ----------------------------------------------

    def policy(self, state, actions):
        return self.policy_forward(state, actions)[0]

    def value(self, state):
        return self.value_forward(state)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    loss: LossKind = field(default_factory=lambda: LossKind("nll"))
    epochs: int = 10
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    rng_seed: int = 0
    accumulate_data: bool = True
    max_depth: int = 20

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainStats:
    epoch_policy_loss: list
    epoch_value_loss: list


def _policy_param_grads(model: PolicyModel, step_grads) -> dict:
    """Sparse parameter gradient of the policy loss: each step contributes
    dL/dz_a times that action's feature vector."""
    acc: dict = {}
    for sg in step_grads:
        sf = model.state_features(sg.state)
        total = float(np.sum(sg.grad))
        if abs(total) > 0:
            for i, c in sf.items():
                acc[i] = acc.get(i, 0.0) + total * c
        for a, ga in zip(sg.actions, sg.grad):
            ga = float(ga)
            if ga == 0.0:
                continue
            for i, c in model.action_features(sg.state, a).items():
                acc[i] = acc.get(i, 0.0) + ga * c
    return acc


def _value_param_grads(model: PolicyModel, sample) -> tuple:
    """Mean squared error of the sigmoid value head against the tree's
    value targets; returns (loss, sparse grads)."""
    targets = sample.tree_targets or []
    if not targets:
        return 0.0, {}
    acc: dict = {}
    loss = 0.0
    n = len(targets)
    for t in targets:
        v = model.value_forward(t.state)
        err = v - t.value_target
        loss += err * err
        coeff = 2.0 * err * v * (1.0 - v) / n
        for i, c in model.state_features(t.state).items():
            acc[i] = acc.get(i, 0.0) + coeff * c
    return loss / n, acc


def _apply_update(model: PolicyModel, weights, grads: dict, lr: float,
                  cfg: TrainConfig, slot: int):
    model._invalidate()
    if cfg.optimizer == "sgd":
        for i, gv in grads.items():
            weights[i] -= lr * gv
        return
    if cfg.optimizer != "adam":
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    if model._adam_state is None:
        model._adam_state = {}
    st = model._adam_state.setdefault(slot, {
        "m": np.zeros_like(weights), "v": np.zeros_like(weights), "t": 0,
    })
    st["t"] += 1
    b1, b2, eps = 0.9, 0.999, 1e-8
    bc1 = 1 - b1 ** st["t"]
    bc2 = 1 - b2 ** st["t"]
    m, v = st["m"], st["v"]
    for i, gv in grads.items():  # sparse Adam: only touched coordinates move
        m[i] = b1 * m[i] + (1 - b1) * gv
        v[i] = b2 * v[i] + (1 - b2) * gv * gv
        weights[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


def train(model: PolicyModel, samples, cfg: TrainConfig, problems) -> TrainStats:
    """cfg.epochs seeded-shuffled passes, one gradient update per sample
    (one sample = one tree).  The policy head follows cfg.loss; the value
    head is always trained by squared error against the MCTS value targets.

    ``problems`` maps problem name to Problem (needed to replay stored
    derivations)."""
    if not samples:
        raise ValueError("no samples to train on")
    rng = np.random.default_rng(cfg.rng_seed)
    order = np.arange(len(samples))
    stats = TrainStats([], [])
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        ep_pol = 0.0
        ep_val = 0.0
        for idx in order:
            s = samples[int(idx)]
            problem = problems[s.problem]
            value, step_grads = sample_loss(
                s, cfg.loss, model, problem,
                max_depth=cfg.max_depth, rng_seed=cfg.rng_seed,
            )
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite policy loss on {s.problem}; "
                    "reduce the learning rate")
            ep_pol += value
            pgrads = _policy_param_grads(model, step_grads)
            _apply_update(model, model.w_policy, pgrads,
                          cfg.learning_rate, cfg, 0)
            vloss, vgrads = _value_param_grads(model, s)
            ep_val += vloss
            if vgrads:
                _apply_update(model, model.w_value, vgrads,
                              cfg.learning_rate, cfg, 1)
        stats.epoch_policy_loss.append(ep_pol / len(samples))
        stats.epoch_value_loss.append(ep_val / len(samples))
    return stats


def grad_check(model: PolicyModel, sample, loss: LossKind, problem,
               eps: float = 1e-6, n_coords: int = 50, rng_seed: int = 0,
               max_depth: int = 20) -> float:
    """Max relative error between analytic parameter gradients and central
    finite differences on randomly chosen touched coordinates."""
    frozen_w = None
    if loss.name == "merit":
        # the merit weights are stop-gradient constants: the finite
        # difference must probe the surrogate with the weights frozen at
        # the center point, which is what the analytic gradient is of
        frozen_w = sequential_merit_weights(sample, loss.beta, model,
                                            problem, max_depth)
    value, step_grads = sample_loss(sample, loss, model, problem,
                                    max_depth=max_depth, rng_seed=rng_seed,
                                    merit_frozen_w=frozen_w)
    grads = _policy_param_grads(model, step_grads)
    if not grads:
        return 0.0
    rng = np.random.default_rng(rng_seed)
    coords = sorted(grads)
    if len(coords) > n_coords:
        coords = [coords[i] for i in
                  rng.choice(len(coords), size=n_coords, replace=False)]
    # scale the step with the loss magnitude: central differences of a
    # large value lose ~16-|log10 value| digits to cancellation otherwise
    eps = eps * math.sqrt(1.0 + abs(value))
    worst = 0.0
    for i in coords:
        orig = model.w_policy[i]
        model.w_policy[i] = orig + eps
        model._invalidate()
        up = sample_loss(sample, loss, model, problem,
                         max_depth=max_depth, rng_seed=rng_seed,
                         merit_frozen_w=frozen_w)[0]
        model.w_policy[i] = orig - eps
        model._invalidate()
        dn = sample_loss(sample, loss, model, problem,
                         max_depth=max_depth, rng_seed=rng_seed,
                         merit_frozen_w=frozen_w)[0]
        model.w_policy[i] = orig
        model._invalidate()
        fd = (up - dn) / (2 * eps)
        scale = max(abs(fd), abs(grads[i]))
        if scale < 1e-7:
            # cancelled coordinate: softmax step gradients sum to zero, so
            # shared features can net out; require absolute agreement
            if abs(fd - grads[i]) > 1e-8:
                worst = max(worst, abs(fd - grads[i]))
            continue
        worst = max(worst, abs(fd - grads[i]) / scale)
    return worst


# ---------------------------------------------------------------------------
# Persistence (bit-exact round trip)


def save_model(model: PolicyModel, path) -> None:
    meta = {
        "version": MODEL_FORMAT_VERSION,
        "D": model.cfg.D,
        "H": model.cfg.H,
        "learning_rate": model.cfg.learning_rate,
        "optimizer": model.cfg.optimizer,
        "rng_seed": model.cfg.rng_seed,
    }
    arrays = {"w_policy": model.w_policy, "w_value": model.w_value,
              "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    if model.cfg.H > 0:
        arrays["w_hidden"] = model.w_hidden
        arrays["w_out"] = model.w_out
    np.savez(path, **arrays)


class ModelFormatError(ValueError):
    pass


def load_model(path) -> PolicyModel:
    with np.load(path) as data:
        try:
            meta = json.loads(bytes(data["meta"]).decode())
        except KeyError:
            raise ModelFormatError("missing metadata")
        if meta.get("version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported model version {meta.get('version')!r}")
        cfg = ModelConfig(
            D=meta["D"], H=meta["H"], learning_rate=meta["learning_rate"],
            optimizer=meta["optimizer"], rng_seed=meta["rng_seed"],
        )
        model = PolicyModel(cfg)
        if data["w_policy"].shape != (cfg.D,):
            raise ModelFormatError("weight shape does not match D")
        model.w_policy = data["w_policy"].copy()
        model.w_value = data["w_value"].copy()
        if cfg.H > 0:
            model.w_hidden = data["w_hidden"].copy()
            model.w_out = data["w_out"].copy()
    return model
