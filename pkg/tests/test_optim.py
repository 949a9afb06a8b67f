import numpy as np
import pytest

from sgdvar import optim
from sgdvar.optim import Kind, LrSchedule, OptimizerConfig


def test_schedule():
    s = LrSchedule(0.4, 0.99)
    assert s.eta(0) == 0.4
    assert s.eta(10) == pytest.approx(0.4 * 0.99**10)
    e = LrSchedule(1.0, 0.5, per_epoch=True)
    assert [e.eta(t, 3) for t in range(7)] == [1, 1, 1, 0.5, 0.5, 0.5, 0.25]
    with pytest.raises(ValueError):
        LrSchedule(0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(kind="SGD", lambda1=0.1)
    with pytest.raises(ValueError):
        OptimizerConfig(kind="GD", noise_std=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(batch_size=0)
    with pytest.raises(ValueError):
        OptimizerConfig(kind="bogus")
    assert OptimizerConfig(kind="NoisyGD").kind is Kind.NOISY_GD


def test_gd_matches_manual_recursion(train):
    cfg = OptimizerConfig(kind="GD", iterations=15)
    tr = optim.run(train, cfg, np.array([2.0, 3.0]))
    th = np.array([2.0, 3.0])
    for t in range(15):
        th = th - cfg.schedule.eta(t) * train.grad(th)
    np.testing.assert_array_equal(tr.final, th)
    assert tr.iterates.shape == (16, 2)
    assert len(tr.diagnostics["train_loss"]) == 16


def test_sgd_uses_sampled_batches(train):
    cfg = OptimizerConfig(kind="SGD", batch_size=3, iterations=20, seed=4)
    tr = optim.run(train, cfg, np.array([4.0, 4.0]))
    seq = optim.batch_sequence(train.n_samples, cfg)
    for a, b in zip(tr.batch_indices, seq):
        np.testing.assert_array_equal(a, b)
    th = np.array([4.0, 4.0])
    for t, b in enumerate(seq):
        th = th - cfg.schedule.eta(t) * train.grad(th, np.sort(b))
    np.testing.assert_array_equal(tr.final, th)


def test_pinned_batches_are_replayed(train):
    cfg = OptimizerConfig(kind="SGD", iterations=10, seed=1)
    pinned = [np.array([t % 30]) for t in range(10)]
    tr = optim.run(train, cfg, np.array([1.0, 1.0]), batches=pinned)
    assert [int(b[0]) for b in tr.batch_indices] == list(range(10))


def test_without_replacement_epochs_cover_everything():
    sampler = optim.BatchSampler(12, 4, False, np.random.default_rng(0))
    for _ in range(3):
        seen = np.concatenate([sampler() for _ in range(3)])
        assert sorted(seen) == list(range(12))
    with pytest.raises(ValueError):
        optim.BatchSampler(10, 4, False, np.random.default_rng(0))


def test_noisy_gd_adds_noise(train):
    a = optim.run(train, OptimizerConfig(kind="NoisyGD", noise_std=0.5, iterations=5, seed=2), np.array([3.0, 3.0]))
    b = optim.run(train, OptimizerConfig(kind="GD", iterations=5), np.array([3.0, 3.0]))
    assert not np.array_equal(a.final, b.final)
    c = optim.run(train, OptimizerConfig(kind="NoisyGD", noise_std=0.5, iterations=5, seed=2), np.array([3.0, 3.0]))
    np.testing.assert_array_equal(a.final, c.final)


def test_divergence_is_reported(small_dln):
    cfg = OptimizerConfig(kind="GD", schedule=LrSchedule(50.0, 1.0), iterations=200)
    tr = optim.run(small_dln, cfg, np.ones(small_dln.dim))
    assert tr.diverged
    assert np.all(np.isfinite(tr.iterates))
    assert tr.n_steps < 200


def test_clip_bounds_step(train):
    cfg = OptimizerConfig(kind="GD", clip_norm=1e-3, iterations=1, schedule=LrSchedule(1.0, 1.0))
    th0 = np.array([6.0, 6.5])
    tr = optim.run(train, cfg, th0)
    assert np.linalg.norm(tr.final - th0) <= 1e-3 + 1e-15


def test_regularized_step_includes_penalties(train):
    th = np.array([3.0, 4.0])
    batch = np.array([0, 5])
    plain = optim.step_sgd(train, th, 0.1, batch)
    info = {}
    reg = optim.step_sgd_reg(train, th, 0.1, batch, 0.2, 0.3, info=info)
    assert not np.array_equal(plain, reg)
    assert set(info) == {"reg1", "reg2"}


def test_trailing_reference_runs(train):
    cfg = OptimizerConfig(kind="SGDwReg", lambda2=0.5, trailing_k=4, iterations=30, seed=0)
    tr = optim.run(train, cfg, np.array([2.0, 2.0]))
    assert not tr.diverged
    assert np.isfinite(tr.diagnostics["reg2"][:-1]).all()


def test_calibrated_noise_matches_trace(train):
    inits = [np.array([1.0, 1.0]), np.array([5.0, 2.0])]
    sigma = optim.calibrate_noise_std(train, inits, n_iter=1)
    from sgdvar import regvar
    traces = [regvar.minibatch_cov_trace(regvar.per_sample_grads(train, t), 1) for t in inits]
    assert 2 * sigma**2 == pytest.approx(np.mean(traces), rel=1e-12)


def test_csv_and_npz(tmp_path, train):
    tr = optim.run(train, OptimizerConfig(kind="SGDwReg", lambda1=0.1, iterations=4), np.array([2.0, 2.0]))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "iter,theta_0,theta_1,train_loss,grad_norm,reg1,reg2"
    assert len(lines) == 6
    tr.save_npz(tmp_path / "t.npz")
    back = optim.Trajectory.load_npz(tmp_path / "t.npz")
    np.testing.assert_array_equal(back.iterates, tr.iterates)
