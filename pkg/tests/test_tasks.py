import json
import math

import numpy as np
import pytest

from pathsgd import compute, optim, tasks
from pathsgd.graph import GraphError, RnnSpec, build_rnn


# --- metrics -----------------------------------------------------------------

def test_metric_pins():
    assert tasks.metric_mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    logits = np.array([[2.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
    assert tasks.metric_error_rate(logits, [0, 1, 1]) == pytest.approx(1 / 3)
    zeros = np.zeros((5, 8))
    assert tasks.metric_bpc(zeros, np.zeros(5, dtype=int)) == pytest.approx(3.0, abs=1e-12)


def test_softmax_xent_grad():
    logits = np.zeros((1, 2))
    loss, d = tasks.softmax_xent_grad(logits, np.array([0]))
    assert loss == pytest.approx(math.log(2.0), abs=1e-15)
    assert np.allclose(d, [[-0.5, 0.5]], atol=1e-15)
    logits = np.array([[5.0, 1.0, -2.0], [0.0, 0.0, 900.0]])
    loss, d = tasks.softmax_xent_grad(logits, np.array([0, 2]))
    assert np.isfinite(loss)
    assert np.allclose(d.sum(axis=1), 0.0, atol=1e-12)


# --- addition ----------------------------------------------------------------

def test_gen_addition_invariants(rng):
    ds = tasks.gen_addition(12, 200, rng)
    assert ds.values.shape == ds.masks.shape == (200, 12)
    assert np.all(ds.masks.sum(axis=1) == 2.0)
    assert np.all(ds.masks[:, :6].sum(axis=1) == 1.0)
    assert np.all(ds.masks[:, 6:].sum(axis=1) == 1.0)
    marked = (ds.values * ds.masks).sum(axis=1)
    assert np.allclose(marked, ds.targets, rtol=1e-15)
    x = ds.inputs()
    assert x.shape == (200, 12, 2)
    assert np.array_equal(x[:, :, 0], ds.values)


def test_gen_addition_short_length_raises(rng):
    with pytest.raises(GraphError):
        tasks.gen_addition(1, 4, rng)


def test_gen_addition_seeded():
    a = tasks.gen_addition(8, 16, np.random.default_rng(5))
    b = tasks.gen_addition(8, 16, np.random.default_rng(5))
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.targets, b.targets)


def test_addition_roundtrip(tmp_path):
    ds = tasks.gen_addition(6, 10, np.random.default_rng(2))
    path = tmp_path / "add.jsonl"
    tasks.save_addition(ds, path)
    back = tasks.load_addition(path)
    assert np.array_equal(back.values, ds.values)
    assert np.array_equal(back.masks, ds.masks)
    assert np.array_equal(back.targets, ds.targets)


def test_addition_grad_matches_fd(rng):
    task = tasks.AdditionTask(length=5, eval_size=8)
    net = build_rnn(RnnSpec(2, (3,), 1, 5))
    p = rng.uniform(-0.5, 0.5, net.num_params)
    batch = task.train_batch(rng, 4)
    _, g, _ = task.loss_and_grad(net, p, batch)
    fd = compute.central_diff(lambda q: task.loss_and_grad(net, q, batch)[0], p, 1e-6)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_addition_eval_fixed_set():
    a = tasks.AdditionTask(length=6, eval_size=32, eval_seed=9)
    b = tasks.AdditionTask(length=6, eval_size=32, eval_seed=9)
    assert np.array_equal(a.eval_set.targets, b.eval_set.targets)


# --- sequential classification ----------------------------------------------

def test_synthetic_glyphs(rng):
    ds = tasks.synthetic_glyphs(50, 4, 3, rng)
    assert ds.pixels.shape == (50, 16)
    assert set(np.unique(ds.labels)) <= {0, 1, 2}
    assert ds.inputs().shape == (50, 16, 1)


def test_split_stratified(rng):
    ds = tasks.synthetic_glyphs(200, 3, 4, rng)
    train, test = tasks.split_stratified(ds, 0.25, rng)
    assert len(train) + len(test) == 200
    assert set(np.unique(train.labels)) == set(np.unique(ds.labels))
    assert set(np.unique(test.labels)) == set(np.unique(ds.labels))
    assert abs(len(test) / 200 - 0.25) < 0.05


def test_seq_class_roundtrip(tmp_path):
    ds = tasks.synthetic_glyphs(12, 3, 2, np.random.default_rng(0))
    path = tmp_path / "glyphs.jsonl"
    tasks.save_seq_class(ds, path)
    back = tasks.load_seq_class(path)
    assert np.array_equal(back.pixels, ds.pixels)
    assert np.array_equal(back.labels, ds.labels)


def test_seq_class_grad_matches_fd(rng):
    task = tasks.SeqClassTask(size=3, num_classes=3, n=64, data_seed=2)
    net = build_rnn(RnnSpec(1, (3,), 3, task.length))
    p = rng.uniform(-0.4, 0.4, net.num_params)
    batch = task.train_batch(rng, 4)
    _, g, _ = task.loss_and_grad(net, p, batch)
    fd = compute.central_diff(lambda q: task.loss_and_grad(net, q, batch)[0], p, 1e-6)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_seq_class_uniform_logit_metric(rng):
    task = tasks.SeqClassTask(size=3, num_classes=4, n=128, data_seed=3)
    net = build_rnn(RnnSpec(1, (2,), 4, task.length))
    err = task.evaluate(net, np.zeros(net.num_params))
    share0 = float(np.mean(task.test_set.labels == 0))
    assert err == pytest.approx(1.0 - share0)


# --- char-level language modelling -------------------------------------------

def test_corpus_is_regenerable():
    """The bundled corpus must equal the generator's output byte for byte."""
    bundled = tasks.bundled_corpus_path().read_text()
    assert bundled == tasks.make_synthetic_corpus(110_000, seed=7)
    assert len(bundled) == 110_000


def test_corpus_alphabet():
    corpus = tasks.load_char_corpus(tasks.bundled_corpus_path())
    assert corpus.alphabet == "\n .abcdefghijklmnopqrstuvwy"
    assert corpus.num_symbols == 27
    assert len(corpus.train) == 88_000
    assert len(corpus.valid) == 11_000
    assert len(corpus.test) == 11_000


def test_encode_text():
    ids = tasks.encode_text("abba", "ab")
    assert np.array_equal(ids, [0, 1, 1, 0])
    with pytest.raises(GraphError):
        tasks.encode_text("abc", "ab")


def test_load_char_corpus_validation():
    with pytest.raises(GraphError):
        tasks.load_char_corpus()
    with pytest.raises(GraphError):
        tasks.load_char_corpus(text="abc", fractions=(0.5, 0.5, 0.5))


def test_charlm_windows_shift_by_one(rng):
    corpus = tasks.load_char_corpus(text="abcdefgh" * 40)
    task = tasks.CharLmTask(corpus, unroll=6)
    X, ys = task.train_batch(rng, 5)
    assert X.shape == (5, 6, corpus.num_symbols)
    ids = np.argmax(X, axis=2)
    assert np.array_equal(ids[:, 1:], ys[:, :-1])


def test_charlm_uniform_predictor_bpc():
    corpus = tasks.load_char_corpus(text=tasks.make_synthetic_corpus(4000))
    task = tasks.CharLmTask(corpus, unroll=10, eval_windows=8)
    net = build_rnn(RnnSpec(task.input_dim, (4,), task.output_dim, 10))
    bpc = task.evaluate(net, np.zeros(net.num_params))
    assert bpc == pytest.approx(math.log2(corpus.num_symbols), abs=1e-12)


def test_charlm_grad_matches_fd(rng):
    corpus = tasks.load_char_corpus(text="the quick brown fox " * 30)
    task = tasks.CharLmTask(corpus, unroll=4)
    net = build_rnn(RnnSpec(task.input_dim, (3,), task.output_dim, 4))
    p = rng.uniform(-0.4, 0.4, net.num_params)
    batch = task.train_batch(rng, 3)
    _, g, _ = task.loss_and_grad(net, p, batch)
    fd = compute.central_diff(lambda q: task.loss_and_grad(net, q, batch)[0], p, 1e-6)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_charlm_validation():
    corpus = tasks.load_char_corpus(text="ab" * 100)
    with pytest.raises(GraphError):
        tasks.CharLmTask(corpus, unroll=0)
    with pytest.raises(GraphError):
        tasks.CharLmTask(corpus, unroll=50)


# --- linear regression --------------------------------------------------------

def test_linreg_task():
    task = tasks.LinRegTask(slope=1.7)
    net = task.make_net()
    assert task.evaluate(net, np.array([1.7])) == 0.0
    batch = task.train_batch(np.random.default_rng(0), 8)
    for x, y in batch:
        assert y[0] == pytest.approx(1.7 * x[0])
    loss, g, _ = task.loss_and_grad(net, np.array([0.0]), batch)
    assert loss > 0 and g.shape == (1,)
