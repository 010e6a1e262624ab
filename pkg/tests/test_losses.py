"""Loss values, analytic gradients, and the sequential composition."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabpll.dataset import SelectionStrategy, extract_sample
from tabpll.logic import parse_problem
from tabpll.losses import (
    LossKind,
    ReplayError,
    _ReplayCache,
    assemble_sequential_gradient,
    bs_imitation_loss,
    derivation_logprob,
    libra_loss,
    logit_loss,
    merit_loss,
    merit_weights,
    nll_loss,
    parse_loss,
    pll_sequential_loss,
    prob_loss,
    proof_logprobs,
    sample_loss,
    sequential_merit_weights,
    single_proof_loss,
    softmax,
    uniform_loss,
)
from tabpll.search import MctsConfig, UniformGuidance, run_mcts
from tabpll.tableau import Start, apply_action, initial_state, legal_actions, status, Status

P = np.array([0.5, 0.3, 0.2])
Y = np.array([1.0, 1.0, 0.0])

FIG_MATRIX = """#start: 2
p | ~f(a).
f(b) | ~p.
p | f(X).
~p | ~f(X).
"""


# ---------------------------------------------------------------------------
# parse_loss / LossKind


def test_parse_loss():
    assert parse_loss("nll").name == "nll"
    assert parse_loss("bs").name == "bs"
    k = parse_loss("merit:0.25")
    assert k.name == "merit" and k.beta == 0.25
    assert parse_loss("short").strategy == "short"
    assert parse_loss("rand_pm").name == "single_pair"
    with pytest.raises(ValueError):
        parse_loss("bogus")
    with pytest.raises(ValueError):
        parse_loss("merit:1.5")


def test_losskind_str_roundtrip():
    for s in ["nll", "uniform", "libra", "merit:0.5", "bs", "short"]:
        assert str(parse_loss(s)) == s


# ---------------------------------------------------------------------------
# probability-level values


def test_reference_values():
    assert nll_loss(P, Y)[0] == pytest.approx(-math.log(0.8), abs=1e-12)
    assert uniform_loss(P, Y)[0] == pytest.approx(
        -math.log(0.5) - math.log(0.3), abs=1e-12)
    # merit beta=0.5: w_i = y_i (p_i/P_acc)^0.5, normalized
    w1 = math.sqrt(0.5 / 0.8)
    w2 = math.sqrt(0.3 / 0.8)
    expect = -(w1 * math.log(0.5) + w2 * math.log(0.3)) / (w1 + w2)
    assert merit_loss(P, Y, 0.5)[0] == pytest.approx(expect, abs=1e-12)
    assert libra_loss(P, Y)[0] == pytest.approx(
        -(math.log(0.5) + math.log(0.3)) / 2 + math.log(0.2), abs=1e-12)


def test_input_validation():
    with pytest.raises(ValueError):
        nll_loss([0.5, 0.5], [0.0, 0.0])  # no allowed label
    with pytest.raises(ValueError):
        nll_loss([0.5], [1.0, 0.0])  # misaligned
    with pytest.raises(ValueError):
        merit_loss(P, Y, 1.5)


def test_merit_weights_normalized():
    w = merit_weights(P, Y, 0.7)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w[2] == 0.0  # disallowed labels get no weight


# ---------------------------------------------------------------------------
# gradient checks (probability and logit level)

_KINDS = [parse_loss(s) for s in ["nll", "uniform", "merit:0.5", "libra"]]


def _rand_case(rng, n=4):
    z = rng.normal(size=n)
    p = softmax(z)
    y = np.zeros(n)
    k = rng.integers(2, n)
    y[rng.choice(n, size=k, replace=False)] = 1.0
    return z, p, y


@pytest.mark.parametrize("kind", _KINDS, ids=str)
def test_prob_gradients_fd(kind):
    rng = np.random.default_rng(0)
    for _ in range(25):
        _, p, y = _rand_case(rng)
        frozen = merit_weights(p, y, kind.beta) if kind.name == "merit" else None
        _, grad = prob_loss(kind, p, y, merit_frozen_w=frozen)
        eps = 1e-6
        for i in range(len(p)):
            d = np.zeros(len(p))
            d[i] = eps
            vp = prob_loss(kind, p + d, y, merit_frozen_w=frozen)[0]
            vm = prob_loss(kind, p - d, y, merit_frozen_w=frozen)[0]
            fd = (vp - vm) / (2 * eps)
            assert abs(fd - grad[i]) <= 1e-5 * max(1.0, abs(fd))


@pytest.mark.parametrize("kind", _KINDS, ids=str)
def test_logit_gradients_fd(kind):
    rng = np.random.default_rng(1)
    for _ in range(25):
        z, p, y = _rand_case(rng)
        if kind.name == "merit":
            # stop-gradient weights: freeze at the center point
            frozen = merit_weights(p, y, kind.beta)

            def f(zz):
                return merit_loss(softmax(zz), y, kind.beta, frozen_w=frozen)[0]

            _, dz = merit_loss(p, y, kind.beta, frozen_w=frozen)
            dz = p * (dz - float((p * dz).sum()))
        else:
            def f(zz):
                return prob_loss(kind, softmax(zz), y)[0]

            _, dz, _ = logit_loss(kind, z, y)
        eps = 1e-6
        for i in range(len(z)):
            d = np.zeros(len(z))
            d[i] = eps
            fd = (f(z + d) - f(z - d)) / (2 * eps)
            assert abs(fd - dz[i]) <= 1e-5 * max(1.0, abs(fd))


# ---------------------------------------------------------------------------
# exact identities


def _rand_cases(seed, n_cases=100):
    rng = np.random.default_rng(seed)
    return [_rand_case(rng) for _ in range(n_cases)]


def test_merit_beta1_equals_nll_logit_gradient():
    for z, p, y in _rand_cases(2):
        _, dz_nll, _ = logit_loss(parse_loss("nll"), z, y)
        _, dz_merit, _ = logit_loss(parse_loss("merit:1.0"), z, y)
        assert np.abs(dz_nll - dz_merit).max() <= 1e-9


def test_merit_beta0_equals_uniform_over_k():
    for z, p, y in _rand_cases(3):
        k = y.sum()
        _, dz_u, _ = logit_loss(parse_loss("uniform"), z, y)
        _, dz_m, _ = logit_loss(parse_loss("merit:0.0"), z, y)
        assert np.abs(dz_m - dz_u / k).max() <= 1e-9


def test_libra_equal_push():
    """Every allowed logit gradient is exactly -1/k and every disallowed one
    p_j / (1 - P_acc): the allowed labels are pushed up in lockstep."""
    for z, p, y in _rand_cases(4):
        k = y.sum()
        p_acc = float((p * y).sum())
        _, dz, _ = logit_loss(parse_loss("libra"), z, y)
        allowed = y > 0
        assert np.abs(dz[allowed] + 1.0 / k).max() <= 1e-9
        assert np.abs(dz[~allowed] - p[~allowed] / (1 - p_acc)).max() <= 1e-9


def test_libra_ratio_preservation():
    """100 plain gradient-descent steps: allowed pairwise probability ratios
    drift <= 1e-6 while P_acc increases monotonically."""
    rng = np.random.default_rng(5)
    z, p, y = _rand_case(rng, n=5)
    kind = parse_loss("libra")
    allowed = np.flatnonzero(y)
    p0 = softmax(z)
    ratios0 = [p0[allowed[0]] / p0[a] for a in allowed[1:]]
    last_acc = float((p0 * y).sum())
    for _ in range(100):
        _, dz, p = logit_loss(kind, z, y)
        z = z - 0.05 * dz
        p = softmax(z)
        acc = float((p * y).sum())
        assert acc >= last_acc - 1e-12
        last_acc = acc
    p = softmax(z)
    for r0, a in zip(ratios0, allowed[1:]):
        assert abs(p[allowed[0]] / p[a] - r0) <= 1e-6


def test_nll_winner_take_all_dynamics():
    """Single-sample descent under sequential NLL concentrates derivation
    probability on the initially most probable proof.  (At the pure logit
    level the dynamics freeze once P_acc reaches 1; the sequential setting
    keeps P_acc < 1, which is what drives winner-take-all.)"""
    from tabpll.logic import generate_ra_problem
    from tabpll.model import PolicyModel, TrainConfig, _apply_update, _policy_param_grads

    kind = parse_loss("nll")
    p = generate_ra_problem(1, n_operators=1, operand_bound=5)
    t = run_mcts(p, UniformGuidance(), MctsConfig(inference_budget=150))
    s = extract_sample(t)
    model = PolicyModel()
    leader = int(np.argmax(proof_logprobs(s, model, p)))
    tc = TrainConfig(loss=kind, epochs=1, learning_rate=0.5)
    for _ in range(500):
        _, grads = pll_sequential_loss(s, kind, model, p)
        _apply_update(model, model.w_policy,
                      _policy_param_grads(model, grads), 0.5, tc, 0)
    assert math.exp(proof_logprobs(s, model, p)[leader]) > 0.99


# ---------------------------------------------------------------------------
# sequential layer


def _fig_problem():
    return parse_problem(FIG_MATRIX, name="fig")


def _fig_sample():
    t = run_mcts(_fig_problem(), UniformGuidance(),
                 MctsConfig(inference_budget=2000))
    return extract_sample(t)


def test_derivation_probabilities_normalize():
    """Products of step probabilities over all complete derivations sum
    to one under any fixed policy."""
    p = _fig_problem()
    g = UniformGuidance()
    total = 0.0
    stack = [(initial_state(p), 1.0)]
    while stack:
        s, prob = stack.pop()
        acts = legal_actions(s)
        if s.started and (not s.goals or not acts):
            total += prob
            continue
        dist = g.policy(s, acts)
        for a, q in zip(acts, dist):
            stack.append((apply_action(s, a), prob * q))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_derivation_logprob_matches_product():
    p = _fig_problem()
    s = _fig_sample()
    g = UniformGuidance()
    for d in s.proofs:
        lp, steps = derivation_logprob(d, g, problem=p)
        manual = sum(
            math.log(rec.dist[rec.taken]) for rec in steps)
        assert lp == pytest.approx(manual, abs=1e-12)


def test_replay_cache_shares_prefixes():
    p = _fig_problem()
    s = _fig_sample()
    cache = _ReplayCache(p, UniformGuidance())
    steps = [cache.replay(d.actions) for d in s.proofs]
    # every proof starts with the same Start action -> identical record
    firsts = {id(st[0]) for st in steps}
    assert len(firsts) == 1


def test_replay_rejects_illegal():
    p = _fig_problem()
    cache = _ReplayCache(p, UniformGuidance())
    with pytest.raises(ReplayError):
        cache.replay([Start(0)])  # not a start clause


def test_sequential_merit_weights_normalize():
    p = _fig_problem()
    s = _fig_sample()
    w = sequential_merit_weights(s, 0.5, UniformGuidance(), p)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert len(w) == len(s.proofs)


@pytest.mark.parametrize("name", ["nll", "uniform", "merit:0.5", "libra"])
def test_sequential_loss_finite(name):
    p = _fig_problem()
    s = _fig_sample()
    value, grads = pll_sequential_loss(s, parse_loss(name), UniformGuidance(), p)
    assert np.isfinite(value)
    for sg in grads:
        assert np.isfinite(sg.grad).all()
        # logit gradients of a distribution-valued loss sum to ~0 per step
        assert abs(float(sg.grad.sum())) <= 1e-9


def test_assemble_gradient_accumulates_shared_steps():
    p = _fig_problem()
    cache = _ReplayCache(p, UniformGuidance())
    s = _fig_sample()
    st1 = cache.replay(s.proofs[0].actions)
    st2 = cache.replay(s.proofs[1].actions)
    grads = assemble_sequential_gradient([(st1, -1.0), (st2, -1.0)])
    # shared start step appears once, with both contributions folded in
    assert sum(1 for g in grads if g.state is st1[0].state) == 1


def test_single_proof_loss_runs():
    p = _fig_problem()
    s = _fig_sample()
    v, grads = single_proof_loss(s, SelectionStrategy("short"), 1.0,
                                 UniformGuidance(), p)
    assert np.isfinite(v) and grads


def test_bs_loss_uniform_policy():
    s = _fig_sample()
    v, grads = bs_imitation_loss(s.tree_targets, UniformGuidance())
    assert np.isfinite(v) and len(grads) == len(s.tree_targets)
    with pytest.raises(ValueError):
        bs_imitation_loss([], UniformGuidance())


def test_sample_loss_dispatch():
    p = _fig_problem()
    s = _fig_sample()
    for name in ["bs", "nll", "uniform", "merit:0.5", "libra", "short",
                 "long", "rand", "short_pm"]:
        v, grads = sample_loss(s, parse_loss(name), UniformGuidance(), p)
        assert np.isfinite(v)
