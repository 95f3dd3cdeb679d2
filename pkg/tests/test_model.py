import copy
import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interest_clock.clock import ClockStrategy, clock_plan
from interest_clock.core import DimensionMismatch, DomainError, NonFiniteGradient, Vocabulary
from interest_clock.feature_store import HourlyTagStore
from interest_clock.model import StreamingMLP, loss, sigmoid

from oracles import random_events

VOCAB = Vocabulary()


def make_model(kind="gaussian", seed=0, **kw):
    kw.setdefault("n_user_buckets", 64)
    kw.setdefault("n_item_buckets", 64)
    return StreamingMLP(VOCAB, ClockStrategy(kind), seed=seed, **kw)


def sample(model, seed=0, cur=13.7):
    """(static rows, plan rows, plan weights) for a random user history."""
    rng = np.random.default_rng(seed)
    store = HourlyTagStore()
    store.ingest_many(random_events(rng, 300, n_users=1, max_gap=120))
    t = model.tables
    rows = t.clock_rows(store.extract_clock(0).tags)
    static = t.static_rows(0, int(rng.integers(100)), *(int(rng.integers(s)) for s in VOCAB.sizes))
    plan_rows, w = clock_plan(rows, cur, model.strategy, t.hour_row(int(cur)), t.day_row(3))
    return static, plan_rows, np.asarray(w)


def sample_loss(model, static, plan_rows, w, y):
    p = model.forward(model.build_input(static, plan_rows, w)).probability
    return -y * math.log(p) - (1 - y) * math.log(1 - p)


@pytest.mark.parametrize("y, yhat, want", [
    (1, 0.5, math.log(2)),
    (0, 0.5, math.log(2)),
    (1, 0.9, -math.log(0.9)),
    (0, 0.9, -math.log(0.1)),
])
def test_loss_examples(y, yhat, want):
    assert math.isclose(loss(y, yhat), want, rel_tol=1e-12)


def test_loss_near_edges_stays_finite():
    assert math.isclose(loss(1, 1 - 1e-7), 1e-7, rel_tol=1e-6)
    assert math.isfinite(loss(0, 1e-300))


@pytest.mark.parametrize("yhat", [0.0, 1.0, -0.1, float("nan")])
def test_loss_domain(yhat):
    with pytest.raises(DomainError):
        loss(1, yhat)


def test_zero_parameters_predict_half():
    m = make_model()
    m.theta[:] = 0
    m.tables.weights[:] = 0
    static, rows, w = sample(m)
    pred = m.forward(m.build_input(static, rows, w))
    assert pred.logit == 0.0 and pred.probability == 0.5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 24, exclude_max=True), st.sampled_from(["gaussian", "naive",
                                                                                       "adaptive", "time_encoding"]))
def test_probability_in_unit_interval(seed, cur, kind):
    m = make_model(kind, seed=seed % 7)
    static, rows, w = sample(m, seed, cur)
    p = m.forward(m.build_input(static, rows, w)).probability
    assert 0.0 < p < 1.0


def test_sigmoid_saturates_without_overflow():
    with np.errstate(all="raise"):
        assert sigmoid(-800) == 0.0 and sigmoid(800) == 1.0


def test_same_seed_same_model():
    a, b = make_model(seed=4), make_model(seed=4)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.tables.weights, b.tables.weights)
    assert not np.array_equal(a.theta, make_model(seed=5).theta)


@pytest.mark.parametrize("y", [0.0, 1.0])
def test_output_delta_is_p_minus_y(y):
    m = make_model()
    static, rows, w = sample(m)
    p = m.forward(m.build_input(static, rows, w)).probability
    _, grad, _, _ = m.gradients(static, rows, w, y)
    assert math.isclose(grad[-1], p - y, rel_tol=1e-12)


@pytest.mark.parametrize("kind", ["gaussian", "naive", "adaptive", "time_encoding"])
def test_gradients_match_finite_differences(kind):
    m = make_model(kind, hidden=(16, 8))
    static, rows, w = sample(m, seed=11)
    y = 1.0
    _, grad, urows, row_grads = m.gradients(static, rows, w, y)
    grad = grad.copy()
    rng = np.random.default_rng(0)
    h = 1e-6
    for i in rng.choice(m.theta.size, 25, replace=False):
        old = m.theta[i]
        m.theta[i] = old + h
        up = sample_loss(m, static, rows, w, y)
        m.theta[i] = old - h
        down = sample_loss(m, static, rows, w, y)
        m.theta[i] = old
        fd = (up - down) / (2 * h)
        assert abs(fd - grad[i]) <= 1e-6 + 1e-4 * abs(fd)
    E = m.tables.weights
    for j in rng.choice(urows.size, min(10, urows.size), replace=False):
        for k in range(E.shape[1]):
            r = urows[j]
            old = E[r, k]
            E[r, k] = old + h
            up = sample_loss(m, static, rows, w, y)
            E[r, k] = old - h
            down = sample_loss(m, static, rows, w, y)
            E[r, k] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - row_grads[j, k]) <= 1e-6 + 1e-4 * abs(fd)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 24, exclude_max=True))
def test_gaussian_chain_rule(seed, cur):
    """Each clock row's gradient is its slot weights times dL/d(aggregate)."""
    m = make_model("gaussian", seed=seed % 5, hidden=(8,))
    static, rows, w = sample(m, seed, cur)
    y = float(seed % 2)
    _, _, urows, row_grads = m.gradients(static, rows, w, y)
    # dL/dx by central differences on the network input
    x = m.build_input(static, rows, w)
    d = m.embedding_dim
    h = 1e-6

    def f(v):
        p = m.forward(v).probability
        return -y * math.log(p) - (1 - y) * math.log(1 - p)

    dx = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])
    d_static = dx[:5 * d].reshape(5, d)
    d_clock = dx[5 * d:].reshape(9, d)
    want = {}
    for i, r in enumerate(static):
        want[r] = want.get(r, 0) + d_static[i]
    for t in range(24):
        for k in range(9):
            want[rows[t, k]] = want.get(rows[t, k], 0) + w[t] * d_clock[k]
    assert set(want) == set(urows.tolist())
    for j, r in enumerate(urows):
        np.testing.assert_allclose(row_grads[j], want[r], atol=1e-7)


def test_update_touches_only_used_rows():
    m = make_model("naive")
    static, rows, w = sample(m)
    before = m.tables.weights.copy()
    m.train_step(static, rows, w, 1.0)
    changed = np.flatnonzero((m.tables.weights != before).any(axis=1))
    assert set(changed) <= set(np.concatenate([static, rows.ravel()]).tolist())
    assert changed.size > 0


def test_constant_label_drives_probability_up():
    m = make_model("gaussian", seed=1)
    static, rows, w = sample(m)
    x = lambda: m.build_input(static, rows, w)  # noqa: E731
    first = m.forward(x()).probability
    losses = [m.train_step(static, rows, w, 1.0) for _ in range(200)]
    assert m.forward(x()).probability > max(first, 0.95)
    assert losses[-1] < losses[0]
    assert m.n_updates == 200


def test_non_finite_gradient_raises():
    m = make_model()
    static, rows, w = sample(m)
    m.theta[0] = np.nan
    with pytest.raises(NonFiniteGradient):
        m.train_step(static, rows, w, 1.0)


def test_dimension_mismatch():
    m = make_model()
    with pytest.raises(DimensionMismatch):
        m.logits(np.zeros((2, m.input_dim + 1)))


def test_checkpoint_round_trip(tmp_path):
    m = make_model("adaptive", hidden=(8, 4))
    static, rows, w = sample(m)
    for _ in range(5):
        m.train_step(static, rows, w, 0.0)
    m.save(tmp_path / "a.bin")
    back = StreamingMLP.load(tmp_path / "a.bin")
    back.save(tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    x = m.build_input(static, rows, w)
    assert back.forward(x) == m.forward(x)
    assert back.n_updates == 5


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope\n")
    with pytest.raises(ValueError):
        StreamingMLP.load(tmp_path / "x.bin")
    m = make_model(hidden=(4,))
    m.save(tmp_path / "t.bin")
    data = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-16])
    with pytest.raises(ValueError, match="truncated"):
        StreamingMLP.load(tmp_path / "t.bin")


@pytest.mark.parametrize("clone", [copy.deepcopy, lambda m: pickle.loads(pickle.dumps(m))])
def test_copies_are_independent(clone):
    m = make_model()
    static, rows, w = sample(m)
    c = clone(m)
    x = m.build_input(static, rows, w)
    assert c.forward(x) == m.forward(x)
    c.train_step(static, rows, w, 1.0)
    assert c.forward(x) != m.forward(x)
    np.testing.assert_array_equal(c.layers[0][0], c.theta[:c.layers[0][0].size].reshape(c.layers[0][0].shape))


@pytest.mark.parametrize("kind", ["gaussian", "naive", "adaptive", "time_encoding"])
def test_compiled_step_matches_reference(kind):
    fast, ref = make_model(kind, seed=3), make_model(kind, seed=3)
    for i in range(30):
        static, rows, w = sample(fast, seed=i, cur=(i * 1.7) % 24)
        y = float(i % 3 == 0)
        assert fast.train_step(static, rows, w, y) == pytest.approx(ref.reference_step(static, rows, w, y),
                                                                    rel=1e-10)
    np.testing.assert_allclose(fast.theta, ref.theta, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(fast.theta_acc, ref.theta_acc, rtol=1e-9)
    np.testing.assert_allclose(fast.tables.weights, ref.tables.weights, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(fast.emb_acc, ref.emb_acc, rtol=1e-9)
