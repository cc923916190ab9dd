import inspect
import math

import numpy as np
import pytest

from dpgen.data import TabularDataset
from dpgen.neural import generator_step
from dpgen.training import (
    PRESETS,
    BudgetExhausted,
    TrainConfig,
    generate,
    laplace_counts,
    noisy_class_ratio,
    partition,
    train,
)


def two_gaussians(n, seed, spread=0.1):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.normal(0, spread, size=(n, 2)) + np.where(y[:, None] == 1, 0.5, -0.5)
    return TabularDataset(x, ["a", "b"], y, "y")


SMALL = dict(num_teachers=3, batch_size=4, hidden=8, iterations=5, proj_dims=2, sigma1=2.0, sigma2=1.0, laplace_epsilon=1.0)


def test_partition_sizes():
    shards = partition(10, 3, seed=0)
    assert sorted(len(s) for s in shards) == [3, 3, 4]
    assert np.array_equal(partition(7, 1, seed=0)[0], np.arange(7))
    with pytest.raises(ValueError):
        partition(2, 3, seed=0)


@pytest.mark.parametrize("seed", range(20))
def test_partition_disjoint_cover(seed):
    rng = np.random.default_rng(seed)
    size = int(rng.integers(5, 60))
    n = int(rng.integers(1, size + 1))
    labels = rng.integers(0, 3, size=size) if seed % 2 else None
    shards = partition(size, n, seed, labels)
    seen = [i for s in shards for i in s]
    assert sorted(seen) == list(range(size))
    lengths = [len(s) for s in shards]
    assert max(lengths) - min(lengths) <= 1
    for a, b in zip(shards, partition(size, n, seed, labels)):
        assert np.array_equal(a, b)


def test_stratified_partition_spreads_classes():
    labels = np.array([0] * 30 + [1] * 6)
    for shard in partition(36, 6, seed=1, labels=labels):
        assert set(labels[shard]) == {0, 1}


def test_noise_free_class_ratio():
    labels = np.r_[np.zeros(492, int), np.ones(284315, int)]
    ratio = noisy_class_ratio(labels, math.inf, None)
    assert ratio == pytest.approx([492 / 284807, 284315 / 284807], rel=1e-12)
    assert ratio[0] == pytest.approx(0.001727, abs=1e-6)


@pytest.mark.filterwarnings("ignore:all noisy class counts")
def test_single_class_ratio_is_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert list(noisy_class_ratio(np.zeros(3, int), 0.01, rng)) == [1.0]


def test_laplace_noise_scale():
    rng = np.random.default_rng(7)
    eps = 0.5
    noise = laplace_counts(np.zeros(100_000), eps, rng)
    # E|Laplace(b)| = b
    assert np.mean(np.abs(noise)) == pytest.approx(1 / eps, rel=0.05)


def test_class_ratio_charges_ledger():
    from dpgen.accountant import PrivacyLedger

    ledger = PrivacyLedger()
    noisy_class_ratio(np.array([0, 1, 1]), 0.01, np.random.default_rng(0), ledger)
    assert ledger.laplace_epsilon == 0.01
    with pytest.raises(ValueError):
        noisy_class_ratio(np.array([0, 1]), math.inf, None, ledger)


def test_generate_examples():
    g = train(TrainConfig(**SMALL), two_gaussians(60, 0)).generator
    batch = generate(g, 500, [1.0, 0.0], seed=3)
    assert set(batch.labels) == {0}
    a, b = generate(g, 50, [0.3, 0.7], seed=9), generate(g, 50, [0.3, 0.7], seed=9)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    empty = generate(g, 0, [0.5, 0.5], seed=0)
    assert len(empty) == 0 and empty.features.shape == (0, 2)
    freq = np.bincount(generate(g, 100_000, [0.3, 0.7], seed=4).labels, minlength=2) / 100_000
    assert np.allclose(freq, [0.3, 0.7], atol=0.01)
    with pytest.raises(ValueError):
        generate(g, 5, [0.5, 0.6])


def test_target_below_one_iteration_gives_initial_generator():
    data = two_gaussians(60, 0)
    cfg = TrainConfig(**SMALL, epsilon_target=1.01)
    res = train(cfg, data)
    assert res.state.iteration == 0
    fresh = train(TrainConfig(**{**SMALL, "iterations": 0}), data).generator
    assert all(np.array_equal(a, b) for a, b in zip(res.generator.params, fresh.params))


def test_budget_exhausted_by_class_ratio():
    with pytest.raises(BudgetExhausted):
        train(TrainConfig(**SMALL, epsilon_target=1.0), two_gaussians(60, 0))


def test_stopping_rule_never_overshoots():
    data = two_gaussians(60, 1)
    full = train(TrainConfig(**{**SMALL, "iterations": 40}), data)
    target = full.state.metrics[19].epsilon + 1e-9
    res = train(TrainConfig(**{**SMALL, "iterations": 40}, epsilon_target=target), data)
    assert 0 < res.state.iteration < 40
    assert res.state.epsilon <= target


def test_epsilon_nondecreasing_and_finite():
    res = train(TrainConfig(**{**SMALL, "iterations": 30}), two_gaussians(80, 2))
    eps = [m.epsilon for m in res.state.metrics]
    assert all(math.isfinite(e) for e in eps)
    assert all(b >= a for a, b in zip(eps, eps[1:]))


def test_generate_consumes_no_budget():
    res = train(TrainConfig(**SMALL), two_gaussians(60, 3))
    before = res.state.ledger.dumps_report(1e-5)
    n = len(res.state.ledger)
    generate(res.generator, 10_000, res.class_ratios, seed=1)
    assert len(res.state.ledger) == n
    assert res.state.ledger.dumps_report(1e-5) == before


def test_teachers_read_only_their_shard():
    res = train(TrainConfig(**SMALL), two_gaussians(60, 4))
    for shard in res.shards:
        assert shard.access_log and set(shard.access_log) == {shard.shard_id}


def test_generator_update_sees_no_real_data():
    assert list(inspect.signature(generator_step).parameters) == ["g", "z_batch", "x_hat", "opt"]


def test_same_seed_same_run():
    data = two_gaussians(60, 5)
    a = train(TrainConfig(**SMALL), data)
    b = train(TrainConfig(**SMALL), data)
    assert a.state.log_text() == b.state.log_text()
    assert all(np.array_equal(p, q) for p, q in zip(a.generator.params, b.generator.params))
    c = train(TrainConfig(**SMALL, seed=1), data)
    assert c.state.log_text() != a.state.log_text()


def test_unconditional_training():
    data = two_gaussians(60, 6)
    res = train(TrainConfig(**SMALL, conditional=False), data)
    assert res.generator.cond_dim == 0 and res.class_ratios is None
    assert res.state.ledger.laplace_epsilon == 0.0
    assert generate(res.generator, 5, None, seed=0).labels is None


def test_noiseless_mode_reports_no_epsilon():
    res = train(TrainConfig(**SMALL, noiseless=True), two_gaussians(60, 7))
    assert len(res.state.ledger) == 0
    assert res.report["final"]["epsilon"] is None
    assert math.isinf(res.state.metrics[-1].epsilon)


def test_config_text_roundtrip():
    cfg = TrainConfig(num_teachers=7, sigma1=3.5, conditional=False, seed=11)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    cfg = TrainConfig.from_text("preset = credit\nseed = 4  # comment\n")
    assert cfg.num_teachers == 2100 and cfg.seed == 4
    with pytest.raises(ValueError):
        TrainConfig.from_text("nonsense = 1\n")
    with pytest.raises(ValueError):
        TrainConfig(threshold=0.0)
    with pytest.raises(ValueError):
        TrainConfig(sigma1=0.0)


def test_presets_carry_published_values():
    assert PRESETS["mnist-eps1"].sigma1 == 3000 and PRESETS["mnist-eps1"].sigma2 == 1000
    assert PRESETS["mnist-eps10"].sigma1 == 600 and PRESETS["mnist-eps10"].batch_size == 30
    assert PRESETS["credit"].num_teachers == 2100 and PRESETS["credit"].proj_dims == 5
    assert all(p.clip == 1e-4 and p.threshold == 0.5 and p.learning_rate == 1e-3 for p in PRESETS.values())


def test_noiseless_two_gaussians_recovers_means():
    """10 teachers, zero-noise aggregation, 2000 iterations."""
    data = two_gaussians(5000, 3)
    cfg = TrainConfig(iterations=2000, proj_dims=2, noiseless=True, teacher_steps=3, seed=3)
    res = train(cfg, data)
    batch = generate(res.generator, 4000, [0.5, 0.5], seed=1)
    for c, mean in ((0, -0.5), (1, 0.5)):
        assert np.all(np.abs(batch.features[batch.labels == c].mean(axis=0) - mean) < 0.2)
