import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flforensics.attacks import Schedule, TrainParams
from flforensics.checkpoints import CheckpointStore
from flforensics.fl import (
    AggKind,
    AggRule,
    PartitionConfig,
    RoundPlan,
    aggregate,
    client_groups,
    partition_noniid,
    plan_rounds,
    run_round,
    run_training,
)
from flforensics.model import Dataset, ModelKind, ModelSpec, init_model

FEDAVG = AggRule(AggKind.FEDAVG)
MEDIAN = AggRule(AggKind.MEDIAN)


def labels_dataset(n, C=10, seed=0):
    y = np.arange(n) % C
    return Dataset(np.zeros((n, 1)), np.random.default_rng(seed).permutation(y))


def own_group_fraction(data, parts, cfg):
    groups = client_groups(cfg)
    group_of = np.empty(cfg.n_clients, dtype=int)
    for g, members in enumerate(groups):
        group_of[members] = g
    owner = np.empty(len(data), dtype=int)
    for c, idx in enumerate(parts):
        owner[idx] = c
    return np.mean(group_of[owner] == data.y)


def test_partition_covers_every_example_once():
    data = labels_dataset(5000)
    parts = partition_noniid(data, PartitionConfig(100, 10, 0.5, seed=1))
    allidx = np.concatenate(parts)
    assert np.array_equal(np.sort(allidx), np.arange(5000))


@pytest.mark.parametrize("rho", [0.1, 0.5, 1.0])
def test_partition_label_skew(rho):
    data = labels_dataset(20000)
    cfg = PartitionConfig(100, 10, rho, seed=7)
    parts = partition_noniid(data, cfg)
    assert own_group_fraction(data, parts, cfg) == pytest.approx(rho, abs=0.03)


def test_partition_full_skew_keeps_labels_in_group():
    data = labels_dataset(3000)
    cfg = PartitionConfig(20, 10, 1.0, seed=2)
    parts = partition_noniid(data, cfg)
    for g, members in enumerate(client_groups(cfg)):
        for c in members:
            assert set(data.y[parts[c]]) == {g}


def test_partition_deterministic():
    data = labels_dataset(2000)
    a = partition_noniid(data, PartitionConfig(50, 10, 0.5, seed=3))
    b = partition_noniid(data, PartitionConfig(50, 10, 0.5, seed=3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_partition_errors():
    with pytest.raises(ValueError):
        PartitionConfig(100, 10, 0.05)
    with pytest.raises(ValueError):
        partition_noniid(labels_dataset(100), PartitionConfig(5, 10, 0.5))
    with pytest.raises(ValueError):
        partition_noniid(labels_dataset(20), PartitionConfig(100, 10, 0.5))


def test_aggregation_hand_examples():
    ups = [np.array([1.0, 10.0]), np.array([2.0, -4.0]), np.array([9.0, 0.0]), np.array([4.0, 2.0])]
    assert np.allclose(aggregate(FEDAVG, ups), [4.0, 2.0])
    assert np.allclose(aggregate(AggRule(AggKind.TRIM, 1), ups), [3.0, 1.0])
    assert np.allclose(aggregate(MEDIAN, ups), [3.0, 1.0])
    assert np.allclose(aggregate(MEDIAN, ups[:3]), [2.0, 0.0])


def test_trim_too_large():
    with pytest.raises(ValueError):
        aggregate(AggRule(AggKind.TRIM, 2), [np.zeros(2)] * 4)
    with pytest.raises(ValueError):
        aggregate(FEDAVG, [])
    with pytest.raises(ValueError):
        aggregate(FEDAVG, [np.zeros(2), np.zeros(3)])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([FEDAVG, MEDIAN, AggRule(AggKind.TRIM, 1)]))
def test_aggregation_permutation_invariant(seed, rule):
    rng = np.random.default_rng(seed)
    ups = list(rng.normal(size=(int(rng.integers(3, 9)), 6)))
    perm = [ups[i] for i in rng.permutation(len(ups))]
    assert np.array_equal(aggregate(rule, ups), aggregate(rule, perm))


def test_fedavg_linear_in_updates():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    a, b = 2.5, -0.75
    lhs = aggregate(FEDAVG, list(a * A + b * B))
    rhs = a * aggregate(FEDAVG, list(A)) + b * aggregate(FEDAVG, list(B))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_round_plan_validation():
    assert RoundPlan(1, (3, 1, 2), 0.5).selected == (1, 2, 3)
    with pytest.raises(ValueError):
        RoundPlan(1, (), 1.0)
    with pytest.raises(ValueError):
        RoundPlan(1, (1, 1), 1.0)
    with pytest.raises(ValueError):
        RoundPlan(1, (1,), 0.0)


def test_plan_rounds_selection():
    plans = plan_rounds(20, 10, 0.3, 1.0, seed=4, schedule=Schedule(every=5))
    assert [p.round for p in plans] == list(range(1, 21))
    assert all(len(p.selected) == 3 for p in plans)
    assert [p.round for p in plans if p.attack_active] == [5, 10, 15, 20]
    assert plans == plan_rounds(20, 10, 0.3, 1.0, seed=4, schedule=Schedule(every=5))


def small_setup(n_clients=4):
    rng = np.random.default_rng(0)
    spec = ModelSpec(ModelKind.LINEAR_SOFTMAX, 4, 3, seed=1)
    clients = [Dataset(rng.uniform(size=(10, 4)), rng.integers(0, 3, 10)) for _ in range(n_clients)]
    return spec, clients


def test_run_round_applies_global_update():
    spec, clients = small_setup()
    w = init_model(spec)
    plan = RoundPlan(1, (0, 1, 2, 3), 0.5)
    w_next, ups = run_round(w, plan, clients, spec, TrainParams(1, 4, 0.1))
    assert list(ups) == [0, 1, 2, 3]
    assert np.allclose(w_next, w + 0.5 * np.mean(list(ups.values()), axis=0), atol=1e-14)


@pytest.mark.parametrize("cadence", [10, 20])
def test_checkpoint_cadence(tmp_path, cadence):
    spec, clients = small_setup()
    store = CheckpointStore(tmp_path / "cp.bin")
    plans = plan_rounds(40, 4, 1.0, 1.0, seed=0)
    w = run_training(init_model(spec), plans, clients, spec, TrainParams(1, 4, 0.1), store=store, cadence=cadence)
    assert store.rounds == list(range(cadence, 41, cadence))
    cp = store.load(cadence)
    assert cp.selected == (0, 1, 2, 3)
    assert np.all(np.isfinite(w))


def test_checkpoint_holds_pre_update_model(tmp_path):
    spec, clients = small_setup()
    store = CheckpointStore(tmp_path / "cp.bin")
    plans = plan_rounds(2, 4, 1.0, 0.7, seed=0)
    w0 = init_model(spec)
    w2 = run_training(w0, plans, clients, spec, TrainParams(1, 4, 0.1), store=store, cadence=1)
    cp1, cp2 = store.load(1), store.load(2)
    assert np.allclose(cp1.global_model, w0, atol=1e-6)
    w1 = cp2.global_model.astype(np.float64)
    assert np.allclose(w1, w0 + 0.7 * np.mean(list(cp1.updates.values()), axis=0), atol=1e-5)
    assert np.allclose(w2, w1 + 0.7 * np.mean(list(cp2.updates.values()), axis=0), atol=1e-5)


def test_training_deterministic():
    spec, clients = small_setup()
    plans = plan_rounds(5, 4, 0.5, 1.0, seed=9)
    a = run_training(init_model(spec), plans, clients, spec, TrainParams(), seed=3)
    b = run_training(init_model(spec), plans, clients, spec, TrainParams(), seed=3)
    assert np.array_equal(a, b)


def test_checkpoint_write_failure_names_round(tmp_path):
    spec, clients = small_setup()
    store = CheckpointStore(tmp_path / "cp.bin")
    store.path = tmp_path / "missing" / "cp.bin"
    plans = plan_rounds(3, 4, 1.0, 1.0, seed=0)
    with pytest.raises(OSError, match="round 1"):
        run_training(init_model(spec), plans, clients, spec, TrainParams(), store=store, cadence=1)


@pytest.mark.parametrize("rule", [FEDAVG, MEDIAN, AggRule(AggKind.TRIM, 1)])
def test_doubling_rate_while_halving_updates_is_neutral(rule):
    rng = np.random.default_rng(8)
    w, ups = rng.normal(size=6), list(rng.normal(size=(5, 6)))
    a = w + 0.3 * aggregate(rule, ups)
    b = w + 0.6 * aggregate(rule, [u / 2 for u in ups])
    assert np.array_equal(a, b)
