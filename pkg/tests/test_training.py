import math

import numpy as np
import pytest

from walkback import checkpoint as ckpt
from walkback.data import gen_gmm
from walkback.diffnet import SGD, make_optimizer
from walkback.errors import ConfigError
from walkback.estimators import score_path
from walkback.operators import GaussianOperator, PriorMoments, TabularOperator
from walkback.schedule import TemperatureSchedule, make_heating
from walkback.training import (TrainConfig, cool, heat_trajectory, load_operator, resolve_tmax,
                               train, validation_bound, walkback_update)

EMPTY = TemperatureSchedule((), (), 0, 1.0)


def _gauss(dim=2, seed=0, alpha=0.5, n_steps=0):
    return GaussianOperator.create(dim, (8,), alpha=alpha, n_steps=n_steps,
                                   rng=np.random.default_rng(seed))


def _params(op):
    return [p.copy() for p in op.params()]


def test_empty_schedule_keeps_start_only():
    op = _gauss()
    x0 = np.array([[0.5, -1.0]])
    traj = heat_trajectory(op, EMPTY, x0, np.random.default_rng(0))
    assert len(traj.states) == 1 and traj.K == 0
    np.testing.assert_array_equal(traj.states[0], x0)


def test_trajectory_shapes_and_recomputed_densities():
    op = _gauss(n_steps=5)
    sched = make_heating(16, 2)
    traj = heat_trajectory(op, sched, np.zeros((7, 2)), np.random.default_rng(1))
    assert len(traj.states) == sched.K + 1
    assert traj.fwd_logp.shape == traj.bwd_logp.shape == (sched.K, 7)
    assert np.all(np.isfinite(traj.fwd_logp)) and np.all(np.isfinite(traj.bwd_logp))
    for t, T, level in sched.steps():
        again = op.log_density(traj.states[t - 1], traj.states[t], T, level)
        assert np.array_equal(again, traj.fwd_logp[t - 1])


def test_identity_operator_is_a_random_walk():
    op = _gauss(alpha=0.0)
    sched = make_heating(1, 6)
    n = 10_000
    traj = heat_trajectory(op, sched, np.zeros((n, 2)), np.random.default_rng(2))
    disp = traj.states[-1]
    se = disp.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(disp.mean(axis=0)) < 3 * se)


def test_empty_trajectory_loss_is_prior_and_no_update():
    op = _gauss()
    op.prior = PriorMoments(np.zeros(2), np.ones(2))
    x0 = np.array([[0.3, 0.4]])
    before = _params(op)
    traj = heat_trajectory(op, EMPTY, x0, np.random.default_rng(3))
    w = walkback_update(op, traj, make_optimizer("adam", 0.1))
    assert w[0] == pytest.approx(op.prior.log_density(x0)[0], abs=1e-15)
    assert all(np.array_equal(a, b) for a, b in zip(before, op.params()))


def test_single_step_gradient_is_normal_score():
    op = GaussianOperator.create(1, (), alpha=1.0, rng=np.random.default_rng(4))
    op.sigma_net.layers[-1].weight[...] = 0
    op.sigma_net.layers[-1].bias[...] = np.log(np.expm1(0.5))
    sched = TemperatureSchedule((1.0,), (0,), 1, 1.0)
    traj = heat_trajectory(op, sched, np.array([[0.2], [-0.4]]), np.random.default_rng(5))
    mu, std = op.mean_std(traj.states[1], 1.0)
    expected = -np.sum((traj.states[0] - mu) / std ** 2)

    class Recorder(SGD):
        def step(self, model):
            self.seen = [g.copy() for g in model.grads()]
            super().step(model)

    opt = Recorder(0.0)
    walkback_update(op, traj, opt)
    # weights are -1 per row, so the mean-net bias gradient is minus the summed score
    assert opt.seen[1][0] == pytest.approx(expected, rel=1e-12)


def test_update_returns_bound_matching_path_score():
    op = _gauss(n_steps=4)
    sched = make_heating(8, 1)
    traj = heat_trajectory(op, sched, np.random.default_rng(6).normal(size=(5, 2)),
                           np.random.default_rng(7))
    rescored = score_path(op, sched, traj.states).log_weights()
    w = walkback_update(op, traj, make_optimizer("adam", 1e-3))
    np.testing.assert_allclose(w, rescored, rtol=0, atol=1e-12)


@pytest.mark.parametrize("mode", ["online", "accumulated"])
def test_zero_learning_rate_leaves_parameters(mode):
    op = _gauss()
    before = _params(op)
    pts = np.random.default_rng(8).normal(size=(60, 2))
    cfg = TrainConfig(N1=2, tmax=8, lr=0.0, max_epochs=3, batch_size=20, optimizer="sgd",
                      update_mode=mode)
    train(op, pts[:40], pts[40:], cfg)
    assert all(np.array_equal(a, b) for a, b in zip(before, op.params()))


def test_mixture_training_improves_validation_bound():
    ds = gen_gmm(1200, [-2.0, 2.0], [0.3, 0.3], [0.5, 0.5], np.random.default_rng(9),
                 standardize=False)
    pts = ds.points
    op = GaussianOperator.create(1, (32, 32), n_steps=12, rng=np.random.default_rng(10))
    tmax = resolve_tmax(op, pts[:1000], TrainConfig())
    cfg = TrainConfig(N1=3, tmax=tmax, lr=3e-3, max_epochs=8, patience=8, batch_size=100)
    op.prior = PriorMoments.from_data(pts[:1000])
    initial = validation_bound(op, pts[1000:], tmax, cfg, np.random.default_rng(0))
    res = train(op, pts[:1000], pts[1000:], cfg)
    assert res.best_val_bound > initial


def test_early_stopping_restores_best(tmp_path):
    op = _gauss(n_steps=8)
    pts = np.random.default_rng(11).normal(size=(200, 2))
    cfg = TrainConfig(N1=2, lr=0.05, max_epochs=12, patience=2, batch_size=50)
    res = train(op, pts[:150], pts[150:], cfg, checkpoint_path=tmp_path / "c.npz")
    best = max(r["val_bound"] for r in res.log)
    assert res.best_val_bound == best
    again = validation_bound(op, pts[150:], res.Tmax, cfg,
                             np.random.default_rng(int(np.random.SeedSequence(0).generate_state(1)[0])))
    assert again == pytest.approx(best, abs=1e-9)
    stored, _ = load_operator(tmp_path / "c.npz")
    for a, b in zip(stored.params(), op.params()):
        np.testing.assert_array_equal(a, b)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    pts = np.random.default_rng(12).normal(size=(120, 2))
    cfg4 = TrainConfig(N1=2, tmax=8, lr=1e-2, max_epochs=4, patience=10, batch_size=40, seed=3)
    full = _gauss(n_steps=4, seed=5)
    r_full = train(full, pts[:80], pts[80:], cfg4)

    part = _gauss(n_steps=4, seed=5)
    cfg2 = TrainConfig(**{**cfg4.to_dict(), "max_epochs": 2})
    train(part, pts[:80], pts[80:], cfg2, checkpoint_path=tmp_path / "c.npz")
    resumed = _gauss(n_steps=4, seed=99)
    r_res = train(resumed, pts[:80], pts[80:], cfg4, resume_from=tmp_path / "c.npz")
    assert [r["val_bound"] for r in r_res.log] == [r["val_bound"] for r in r_full.log]
    for a, b in zip(full.params(), resumed.params()):
        np.testing.assert_array_equal(a, b)


def test_log_csv_written(tmp_path):
    op = TabularOperator.create(3, 3, rng=np.random.default_rng(0))
    pts = np.random.default_rng(1).integers(0, 3, 100).astype(float)
    cfg = TrainConfig(N1=1, tmax=4, max_epochs=2, batch_size=25, lr=0.01, diag_chain_length=80,
                      diag_burn_in=10, diag_chains=4)
    train(op, pts[:80], pts[80:], cfg, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_bound,val_bound,reversibility_kl,reversibility_ratio"
    assert len(lines) == 3


def test_config_validation_and_round_trip():
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1)
    with pytest.raises(ConfigError):
        TrainConfig(update_mode="sometimes")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(N1=3, rule="sqrt2")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_tmax_required_for_discrete_operators():
    op = TabularOperator.create(3)
    with pytest.raises(ConfigError):
        train(op, np.zeros(5), np.zeros(5), TrainConfig(max_epochs=1))


def test_cool_runs_schedule_and_dumps():
    op = _gauss(n_steps=4)
    sched = make_heating(8, 2)
    from walkback.schedule import make_cooling
    c = make_cooling(sched, 3)
    out, dump = cool(op, c, 11, np.random.default_rng(13), every_k=2)
    assert out.shape == (11, 2)
    assert [t for t, _ in dump] == [0] + list(range(2, c.K + 1, 2))
    again = cool(op, c, 11, np.random.default_rng(13))
    np.testing.assert_array_equal(again, out)


def test_checkpoint_rejects_foreign_files(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(ConfigError):
        ckpt.read_checkpoint(tmp_path / "x.npz")
