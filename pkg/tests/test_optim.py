import numpy as np
import pytest

from pathsgd import optim, pathnorm, tasks
from pathsgd.graph import GraphError, RnnSpec, build_feedforward, build_rnn
from pathsgd.optim import OptimizerState, TrainConfig


def test_rng_for_is_stateless():
    a = optim.rng_for(3, optim.STREAM_DATA, 7).uniform(size=4)
    b = optim.rng_for(3, optim.STREAM_DATA, 7).uniform(size=4)
    c = optim.rng_for(3, optim.STREAM_DATA, 8).uniform(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_uniform_range(rng):
    net = build_rnn(RnnSpec(2, (4,), 1, 3))
    p = optim.init_uniform(net, rng, 0.25)
    assert p.shape == (net.num_params,)
    assert np.all(np.abs(p) <= 0.25)


def test_init_uniform_per_block(rng):
    net = build_rnn(RnnSpec(2, (4,), 1, 3))
    p = optim.init_uniform(net, rng, 0.05, per_block={"rec1": 0.4})
    sl, _ = net.rnn.slices["rec1"]
    rec = p[sl]
    rest = np.delete(p, np.arange(sl.start, sl.stop))
    assert np.all(np.abs(rec) <= 0.4) and np.any(np.abs(rec) > 0.05)
    assert np.all(np.abs(rest) <= 0.05)


def test_init_uniform_per_block_stream_matches_plain():
    net = build_rnn(RnnSpec(2, (4,), 1, 3))
    a = optim.init_uniform(net, optim.rng_for(0, 0), 0.1)
    b = optim.init_uniform(net, optim.rng_for(0, 0), 0.1, per_block={"rec1": 0.1})
    assert np.array_equal(a, b)


def test_init_uniform_per_block_errors(rng):
    net = build_rnn(RnnSpec(2, (4,), 1, 3))
    with pytest.raises(GraphError):
        optim.init_uniform(net, rng, 0.1, per_block={"rec9": 0.2})
    with pytest.raises(GraphError):
        optim.init_uniform(build_feedforward([2, 2]), rng, 0.1,
                           per_block={"rec1": 0.2})


def test_init_identity(rng):
    net = build_rnn(RnnSpec(2, (4,), 1, 3))
    p = optim.init_identity(net, rng, 0.01)
    sl, shape = net.rnn.slices["rec1"]
    assert np.array_equal(p[sl].reshape(shape), np.eye(4))
    assert np.all(np.abs(np.delete(p, np.arange(sl.start, sl.stop))) <= 0.01)
    with pytest.raises(GraphError):
        optim.init_identity(build_feedforward([2, 2]), rng)


def test_sgd_step():
    p = np.array([1.0, 2.0])
    out = optim.sgd_step(p, np.array([0.5, -1.0]), 0.1)
    assert np.array_equal(out, [0.95, 2.1])
    assert np.array_equal(optim.sgd_step(p, np.zeros(2), 0.1), p)


def test_path_sgd_step_hand_value(single_unit_t2):
    p = np.full(3, 0.9)
    g = np.array([0.3, 0.1, 0.3])
    out = optim.path_sgd_step(single_unit_t2, p, g, 1.0,
                              kappa=np.array([3.0, 1.0, 3.0]))
    assert np.allclose(out, [0.8, 0.8, 0.8], rtol=1e-15)


def test_path_sgd_with_unit_kappa_is_sgd(single_unit_t2, rng):
    p = rng.uniform(-1, 1, 3)
    g = rng.uniform(-1, 1, 3)
    a = optim.path_sgd_step(single_unit_t2, p, g, 0.05, kappa=np.ones(3))
    assert np.array_equal(a, optim.sgd_step(p, g, 0.05))


def test_path_sgd_floors_kappa(single_unit_t2):
    p = np.zeros(3)
    g = np.array([1.0, 0.0, 0.0])
    out = optim.path_sgd_step(single_unit_t2, p, g, 1e-8)
    # kappa is 0 at p=0, so the floor eps=1e-8 caps the effective step at eta/eps
    assert np.allclose(out, [-1.0, 0.0, 0.0], rtol=1e-12)


def test_path_sgd_computes_kappa_at_current_point(single_unit_t2, monkeypatch):
    seen = []
    real = pathnorm.preconditioner

    def spy(net, p, mode):
        seen.append(p.copy())
        return real(net, p, mode)

    monkeypatch.setattr(pathnorm, "preconditioner", spy)
    p0 = np.ones(3)
    g = np.full(3, 0.1)
    p1 = optim.path_sgd_step(single_unit_t2, p0, g, 0.5)
    optim.path_sgd_step(single_unit_t2, p1, g, 0.5)
    assert np.array_equal(seen[0], p0)
    assert np.array_equal(seen[1], p1)


def test_adam_first_step_is_signlike():
    p = np.array([1.0, -1.0, 0.5])
    g = np.array([10.0, -0.01, 0.0])
    state = OptimizerState(kind="adam", eta=0.1)
    out, state = optim.adam_step(p, g, state)
    assert state.t == 1
    assert np.allclose(out[:2], p[:2] - 0.1 * np.sign(g[:2]), atol=1e-4)
    assert out[2] == p[2]


def test_adam_two_steps_match_hand_recurrence():
    p = np.array([2.0])
    state = OptimizerState(kind="adam", eta=0.1, beta1=0.9, beta2=0.999)
    g1, g2 = np.array([0.4]), np.array([-0.2])

    p1, state = optim.adam_step(p, g1, state)
    p2, state = optim.adam_step(p1, g2, state)

    m = 0.1 * g1
    v = 0.001 * g1 * g1
    e1 = p - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    m = 0.9 * m + 0.1 * g2
    v = 0.999 * v + 0.001 * g2 * g2
    e2 = e1 - 0.1 * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert np.allclose(p1, e1, rtol=1e-12)
    assert np.allclose(p2, e2, rtol=1e-12)


def test_path_adam_with_unit_kappa_is_adam(single_unit_t2, rng):
    p = rng.uniform(-1, 1, 3)
    sa = OptimizerState(kind="adam", eta=0.02)
    sp = OptimizerState(kind="path_adam", eta=0.02)
    qa, qp = p.copy(), p.copy()
    for _ in range(5):
        g = rng.uniform(-1, 1, 3)
        qa, sa = optim.adam_step(qa, g, sa)
        qp, sp = optim.path_adam_step(single_unit_t2, qp, g, sp, kappa=np.ones(3))
    assert np.array_equal(qa, qp)
    assert np.array_equal(sa.m1, sp.m1)
    assert np.array_equal(sa.m2, sp.m2)


def test_optimizer_state_validation():
    with pytest.raises(GraphError):
        OptimizerState(kind="rmsprop")
    with pytest.raises(GraphError):
        OptimizerState(kappa_mode="k3")
    with pytest.raises(GraphError):
        OptimizerState(eta=0.0)
    st = OptimizerState(kind="path_adam")
    assert st.uses_kappa and st.uses_adam
    assert not OptimizerState(kind="sgd").uses_kappa


def test_apply_update_dispatch(single_unit_t2, rng):
    p = rng.uniform(0.5, 1.0, 3)
    g = rng.uniform(-0.1, 0.1, 3)
    for kind in optim.OPTIMIZERS:
        state = OptimizerState(kind=kind, eta=0.01)
        out, state2 = optim.apply_update(single_unit_t2, p, g, state)
        assert out.shape == p.shape
        assert np.all(np.isfinite(out))


def test_train_config_validation():
    with pytest.raises(GraphError):
        TrainConfig(steps=-1).check()
    with pytest.raises(GraphError):
        TrainConfig(batch_size=0).check()
    with pytest.raises(GraphError):
        TrainConfig(eval_interval=0).check()
    with pytest.raises(GraphError):
        TrainConfig(kappa_every=0).check()


def test_train_loop_zero_steps_records_initial_row():
    task = tasks.LinRegTask()
    net = task.make_net()
    res = optim.train_loop(net, task, TrainConfig(steps=0), np.array([0.3]),
                           OptimizerState(kind="sgd", eta=0.1))
    assert res.status == "budget_exhausted"
    assert res.steps_done == 0
    assert len(res.history) == 1
    assert res.history[0]["step"] == 0


def test_train_loop_linreg_path_sgd_converges():
    task = tasks.LinRegTask()
    net = task.make_net()
    cfg = TrainConfig(steps=1000, batch_size=8, eval_interval=50,
                      target_loss=1e-8)
    res = optim.train_loop(net, task, cfg, np.array([0.1]),
                           OptimizerState(kind="path_sgd", eta=0.2))
    assert res.status == "converged"
    assert res.steps_done < 1000
    assert res.history[-1]["test_metric"] < 1e-6


def test_train_loop_history_agrees_with_metric_stream():
    task = tasks.LinRegTask()
    net = task.make_net()
    cfg = TrainConfig(steps=20, eval_interval=5, batch_size=4)
    res = optim.train_loop(net, task, cfg, np.array([0.5]),
                           OptimizerState(kind="sgd", eta=0.05))
    assert [r["step"] for r in res.history] == [0, 5, 10, 15, 20]
    for row in res.history:
        assert set(row) == {"step", "train_loss", "train_metric",
                            "test_metric", "wall_ms"}
        assert row["wall_ms"] == 0.0


def test_train_loop_divergence_has_no_nan_rows():
    task = tasks.LinRegTask(slope=1.7)
    net = task.make_net()
    cfg = TrainConfig(steps=200, eval_interval=10, batch_size=4)
    res = optim.train_loop(net, task, cfg, np.array([1e3]),
                           OptimizerState(kind="sgd", eta=10.0))
    assert res.status == "diverged"
    for row in res.history:
        assert np.isfinite(row["train_loss"])


def test_train_loop_kappa_every_amortizes(single_unit_t2, monkeypatch):
    calls = []
    real = pathnorm.preconditioner

    def spy(net, p, mode):
        calls.append(p.copy())
        return real(net, p, mode)

    task = tasks.LinRegTask()
    net = task.make_net()
    monkeypatch.setattr(pathnorm, "preconditioner", spy)
    cfg = TrainConfig(steps=6, eval_interval=100, kappa_every=3, batch_size=2)
    optim.train_loop(net, task, cfg, np.array([0.5]),
                     OptimizerState(kind="path_sgd", eta=0.01))
    assert len(calls) == 2

    calls.clear()
    cfg = TrainConfig(steps=6, eval_interval=100, kappa_every=1, batch_size=2)
    optim.train_loop(net, task, cfg, np.array([0.5]),
                     OptimizerState(kind="path_sgd", eta=0.01))
    assert len(calls) == 6


def test_train_loop_resume_matches_uninterrupted():
    task = tasks.LinRegTask()
    net = task.make_net()
    p0 = np.array([0.3])

    full = optim.train_loop(net, task, TrainConfig(steps=40, eval_interval=10),
                            p0, OptimizerState(kind="path_sgd", eta=0.05))

    half = optim.train_loop(net, task, TrainConfig(steps=20, eval_interval=10),
                            p0, OptimizerState(kind="path_sgd", eta=0.05))
    resumed = optim.train_loop(net, task, TrainConfig(steps=40, eval_interval=10),
                               half.params, half.opt, start_step=20)
    assert np.array_equal(resumed.params, full.params)
    assert resumed.history == full.history[2:]


def test_train_loop_resume_adam_state():
    task = tasks.LinRegTask()
    net = task.make_net()
    p0 = np.array([0.3])

    full = optim.train_loop(net, task, TrainConfig(steps=30, eval_interval=15),
                            p0, OptimizerState(kind="adam", eta=0.05))
    half = optim.train_loop(net, task, TrainConfig(steps=15, eval_interval=15),
                            p0, OptimizerState(kind="adam", eta=0.05))
    resumed = optim.train_loop(net, task, TrainConfig(steps=30, eval_interval=15),
                               half.params, half.opt, start_step=15)
    assert np.array_equal(resumed.params, full.params)
    assert np.array_equal(resumed.opt.m1, full.opt.m1)
    assert np.array_equal(resumed.opt.m2, full.opt.m2)
    assert resumed.opt.t == full.opt.t
