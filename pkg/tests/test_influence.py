import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flforensics.checkpoints import Checkpoint
from flforensics.influence import (
    ProbeInput,
    ProbeKind,
    gen_random_nontarget,
    influence_pairs,
    influence_scores,
    normalize_update,
)
from flforensics.model import Example, ModelKind, ModelSpec, ce_grad

LIN = ModelSpec(ModelKind.LINEAR_SOFTMAX, 1, 2)


def test_hand_example():
    # zero model, x = 1, label 1: grad = [(0.5, -0.5) (x), (0.5, -0.5) (bias)]
    w = np.zeros(4)
    g = np.array([0.0, 1.0, 0.0, 0.0])  # increases W[1], the target weight
    cp = Checkpoint(10, 1.0, w, {0: g})
    scores, counts = influence_scores([cp], ProbeInput(np.array([1.0]), 1), LIN)
    assert scores[0] == pytest.approx(0.5)
    assert counts == {0: 1}


def test_orthogonal_update_has_no_influence():
    cp = Checkpoint(1, 1.0, np.zeros(4), {0: np.array([1.0, 1.0, 0.0, 0.0])})
    scores, _ = influence_scores([cp], ProbeInput(np.array([1.0]), 1), LIN)
    assert scores[0] == pytest.approx(0.0, abs=1e-12)


def naive(checkpoints, probe, spec):
    out = {}
    for cp in checkpoints:
        grad = ce_grad(Example(probe.input, probe.label), cp.global_model.astype(np.float64), spec)
        for c, g in cp.updates.items():
            g = g.astype(np.float64)
            n = np.sqrt(sum(v * v for v in g))
            term = 0.0 if n <= 1e-12 else -cp.lr * sum(a * b for a, b in zip(grad, g)) / n
            out[c] = out.get(c, 0.0) + term
    return out


def random_store(rng, spec, rounds=4):
    cps = []
    for r in range(1, rounds + 1):
        ids = rng.choice(8, size=int(rng.integers(1, 8)), replace=False)
        cps.append(
            Checkpoint(
                10 * r,
                float(rng.uniform(0.1, 1.5)),
                rng.normal(size=spec.num_params),
                {int(c): rng.normal(size=spec.num_params) for c in ids},
            )
        )
    return cps


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(ModelKind)))
def test_matches_naive_loop(seed, kind):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(kind, 5, 3, 4 if kind is ModelKind.MLP1 else 0)
    cps = random_store(rng, spec)
    probe = ProbeInput(rng.uniform(size=5), int(rng.integers(3)))
    got, _ = influence_scores(cps, probe, spec)
    want = naive(cps, probe, spec)
    assert got.keys() == want.keys()
    for c in want:
        assert abs(got[c] - want[c]) <= 1e-9


def test_additive_over_checkpoints():
    rng = np.random.default_rng(4)
    spec = ModelSpec(ModelKind.LINEAR_SOFTMAX, 5, 3)
    cps = random_store(rng, spec, rounds=6)
    probe = ProbeInput(rng.uniform(size=5), 1)
    whole, _ = influence_scores(cps, probe, spec)
    a, _ = influence_scores(cps[:2], probe, spec)
    b, _ = influence_scores(cps[2:], probe, spec)
    for c in whole:
        assert whole[c] == pytest.approx(a.get(c, 0.0) + b.get(c, 0.0), abs=1e-12)


def test_invariant_to_update_magnitude():
    rng = np.random.default_rng(5)
    spec = ModelSpec(ModelKind.LINEAR_SOFTMAX, 5, 3)
    cp = random_store(rng, spec, rounds=1)[0]
    scaled = Checkpoint(cp.round, cp.lr, cp.global_model, {c: 8.0 * g for c, g in cp.updates.items()})
    probe = ProbeInput(rng.uniform(size=5), 0)
    a, _ = influence_scores([cp], probe, spec)
    b, _ = influence_scores([scaled], probe, spec)
    for c in a:
        assert a[c] == pytest.approx(b[c], rel=1e-6)


def test_zero_update_scores_zero():
    cp = Checkpoint(1, 1.0, np.zeros(4), {3: np.zeros(4)})
    scores, counts = influence_scores([cp], ProbeInput(np.array([0.3]), 0), LIN)
    assert scores == {3: 0.0} and counts == {3: 1}


def test_pairs_identical_probes():
    rng = np.random.default_rng(6)
    spec = ModelSpec(ModelKind.LINEAR_SOFTMAX, 5, 3)
    cps = random_store(rng, spec)
    x = rng.uniform(size=5)
    pairs = influence_pairs(cps, ProbeInput(x, 2), ProbeInput(x, 2, ProbeKind.TRUE_NONTARGET), spec, clients=range(10))
    assert [p.client for p in pairs] == list(range(10))
    assert all(p.s == p.s_prime for p in pairs)
    assert all(p.rounds_counted == 0 and p.s == 0.0 for p in pairs if p.client in (8, 9))


def test_pairs_errors():
    cp = Checkpoint(1, 1.0, np.zeros(4), {0: np.ones(4)})
    with pytest.raises(ValueError):
        influence_pairs([cp], ProbeInput(np.ones(1), 1), ProbeInput(np.ones(1), 0), LIN)
    with pytest.raises(ValueError):
        influence_scores([], ProbeInput(np.ones(1), 1), LIN)
    with pytest.raises(ValueError):
        influence_scores([cp], ProbeInput(np.ones(2), 1), LIN)
    with pytest.raises(ValueError):
        influence_scores([Checkpoint(1, 1.0, np.zeros(5))], ProbeInput(np.ones(1), 1), LIN)
    with pytest.raises(ValueError):
        influence_scores([Checkpoint(2, 1.0, np.zeros(4)), Checkpoint(1, 1.0, np.zeros(4))], ProbeInput(np.ones(1), 1), LIN)


def test_random_nontarget_probe():
    p = gen_random_nontarget(20000, 3, seed=1)
    assert p.label == 3 and p.kind is ProbeKind.RANDOM_NONTARGET
    assert np.all((p.input >= 0) & (p.input <= 1))
    assert 0.48 <= p.input.mean() <= 0.52
    assert np.array_equal(p.input, gen_random_nontarget(20000, 3, seed=1).input)
    with pytest.raises(ValueError):
        gen_random_nontarget(0, 1, 0)


def test_normalize_update():
    assert np.allclose(normalize_update([3.0, 4.0]), [0.6, 0.8])
    assert np.array_equal(normalize_update([0.0, 0.0]), [0.0, 0.0])
    assert np.array_equal(normalize_update([1e-13, 0.0]), [0.0, 0.0])
