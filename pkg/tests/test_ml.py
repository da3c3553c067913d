import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import logreg_fd_error, lstm_fd_error
from mgfdi.errors import ConfigError, TrainingFault
from mgfdi.ml import (FeatureStats, LogRegConfig, LogRegParams, LstmParams, LstmState, SequenceSet,
                      TrainConfig, balanced_weights, bptt_gradients, denormalize, fit_stats, logreg_forward,
                      logreg_loss_grad, lstm_cell_forward, lstm_forward, lstm_step, normalize,
                      sigmoid, split_counts, split_dataset, train_logreg, train_lstm)
from mgfdi.ml.lstm import evaluate, mse
from mgfdi.ml.serialize import (ModelFormatError, arrays_to_csv, load_logreg, load_lstm, pack_arrays,
                                save_logreg, save_lstm, unpack_arrays)


def sine_set(n, seed, steps=200):
    """Next-sample prediction of a sine sampled at 100 points per period."""
    rng = np.random.default_rng(seed)
    s = np.sin(2 * np.pi * np.arange(steps + 1)[None, :] / 100 + rng.uniform(0, 2 * np.pi, (n, 1)))
    mask = np.broadcast_to(np.arange(steps) >= 10, (n, steps)).copy()
    return SequenceSet(s[:, :-1, None], s[:, 1:, None], mask)


# sigmoid

def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(800.0) == 1.0 and sigmoid(-800.0) == 0.0
    assert sigmoid(np.log(3.0)) == pytest.approx(0.75, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(-700, 700))
def test_sigmoid_symmetry(x):
    assert abs(sigmoid(x) + sigmoid(-x) - 1.0) < 1e-12


# LSTM cell and rollout

def test_cell_zero_weights():
    params = LstmParams.zeros(3, 4, 2, 1)
    state, h = lstm_cell_forward(np.ones(3), LstmState.zeros(params), params)
    # every gate is 0.5 and the candidate is 0: the state stays at zero
    assert np.all(h == 0.0) and np.all(state.c[0] == 0.0)


def test_cell_hand_computed():
    params = LstmParams.zeros(1, 1, 1, 1)
    layer = params.layers[0]
    layer.w[:, 1] = [0.0, 0.0, 0.0, 1.0]  # candidate weight on x
    state, _ = lstm_cell_forward(np.array([2.0]), LstmState.zeros(params), params)
    c = 0.5 * np.tanh(2.0)
    assert state.c[0][0] == pytest.approx(c, abs=1e-15)
    assert state.h[0][0] == pytest.approx(0.5 * np.tanh(c), abs=1e-15)


def test_step_matches_forward():
    rng = np.random.default_rng(3)
    params = LstmParams.init(4, 16, 2, 2, seed=3)
    x = rng.normal(size=(30, 4))
    full = lstm_forward(x, params)
    state = LstmState.zeros(params)
    step = np.array([lstm_step(xt, state, params)[1] for xt in x])
    np.testing.assert_allclose(step, full, atol=1e-14)


def test_forward_batch_shapes_and_rejects():
    params = LstmParams.init(4, 16, 2, 2, seed=0)
    assert lstm_forward(np.zeros((3, 7, 4)), params).shape == (3, 7, 2)
    with pytest.raises(ConfigError):
        lstm_forward(np.zeros((7, 5)), params)


@pytest.mark.parametrize("seed", range(5))
def test_bptt_matches_finite_differences(seed):
    assert lstm_fd_error(seed) < 1e-4


def test_bptt_linear_in_residual():
    rng = np.random.default_rng(1)
    params = LstmParams.init(2, 3, 1, 1, seed=1)
    x = rng.normal(size=(2, 8, 2))
    pred = lstm_forward(x, params)
    r = rng.normal(size=pred.shape)
    _, g1 = bptt_gradients(x, pred + r, params)
    _, g2 = bptt_gradients(x, pred + 2 * r, params)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-9, atol=1e-14)


def test_bptt_zero_at_perfect_fit():
    params = LstmParams.init(2, 3, 1, 2, seed=5)
    x = np.random.default_rng(5).normal(size=(2, 6, 2))
    loss, grads = bptt_gradients(x, lstm_forward(x, params), params)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


# training

def test_learns_sine():
    cfg = TrainConfig(max_epochs=500, lr=1e-2, hidden=8, n_layers=1, burn_in=10,
                      batch_size=None, chrono=None, lr_decay=1.0)
    params, hist = train_lstm(sine_set(16, 0), sine_set(4, 1), cfg)
    assert evaluate(params, sine_set(4, 2)) < 1e-3
    assert hist.best_val == min(hist.val_mse)


def test_learns_constant():
    y = np.full((4, 50, 1), 0.7)
    data = SequenceSet(np.zeros((4, 50, 1)), y)
    cfg = TrainConfig(max_epochs=300, lr=1e-2, hidden=2, n_layers=1, burn_in=0,
                      batch_size=None, chrono=None, lr_decay=1.0)
    params, _ = train_lstm(data, data, cfg, params=LstmParams.zeros(1, 2, 1, 1))
    assert evaluate(params, data) < 1e-8


def test_training_is_deterministic():
    cfg = TrainConfig(max_epochs=5, hidden=4, n_layers=1, burn_in=0, batch_size=2)
    a, ha = train_lstm(sine_set(4, 0, 40), sine_set(2, 1, 40), cfg)
    b, hb = train_lstm(sine_set(4, 0, 40), sine_set(2, 1, 40), cfg)
    assert ha.val_mse == hb.val_mse
    for u, v in zip(a.arrays(), b.arrays()):
        assert np.array_equal(u, v)


def test_training_fault_on_divergence():
    data = SequenceSet(np.zeros((2, 5, 1)), np.full((2, 5, 1), np.inf))
    with pytest.raises(TrainingFault):
        train_lstm(data, data, TrainConfig(max_epochs=3, hidden=2, n_layers=1, burn_in=0))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(fractions=(0.5, 0.2, 0.2))
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)


# logistic regression

@pytest.mark.parametrize("seed", range(5))
def test_logreg_gradient(seed):
    assert logreg_fd_error(seed) < 1e-6


def test_logreg_weighted_gradient():
    assert logreg_fd_error(0, weighted=True) < 1e-6


def test_weights_act_like_duplicates():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 2))
    y = np.array([1.0, 0, 0, 1, 0, 0])
    w, b = rng.normal(size=2), 0.3
    dup = logreg_loss_grad(np.vstack([x, x[:1]]), np.append(y, 1.0), w, b, 0.0)
    wt = logreg_loss_grad(x, y, w, b, 0.0, [2, 1, 1, 1, 1, 1])
    assert wt[0] == pytest.approx(dup[0], rel=1e-12)
    assert np.allclose(wt[1], dup[1], rtol=1e-12) and wt[2] == pytest.approx(dup[2], rel=1e-12)


def test_balanced_weights():
    wts = balanced_weights([1, 0, 0, 0])
    assert wts.tolist() == pytest.approx([2.0, 2 / 3, 2 / 3, 2 / 3])
    assert wts.mean() == pytest.approx(1.0)
    assert balanced_weights([0, 0]).tolist() == [1.0, 1.0]


def test_balanced_fit_moves_boundary_toward_rare_class():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(0, 1, 950), rng.normal(2.0, 1, 50)])[:, None]
    y = np.r_[np.zeros(950), np.ones(50)]
    plain, _ = train_logreg(x, y, LogRegConfig(balanced=False))
    bal, _ = train_logreg(x, y, LogRegConfig(balanced=True))
    # balanced classes put the 0.5 crossing near the midpoint of the two means
    cross = -bal.b / bal.w[0]
    assert 0.6 < cross < 1.4 and cross < -plain.b / plain.w[0]


def test_logreg_forward_values():
    p = LogRegParams(np.array([1.0, -1.0]), 0.0)
    assert logreg_forward(np.zeros(2), p) == 0.5
    assert logreg_forward(np.array([np.log(3.0), 0.0]), p) == pytest.approx(0.75)
    with pytest.raises(ConfigError):
        logreg_forward(np.zeros(3), p)
    with pytest.raises(ConfigError):
        LogRegParams(np.zeros(2), 0.0, threshold=1.0)


def test_logreg_separable():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    params, losses = train_logreg(x, y)
    assert np.mean((logreg_forward(x, params) > 0.5) == y) > 0.98
    assert losses[-1] < losses[0]


def test_logreg_single_class_warns():
    x = np.random.default_rng(0).normal(size=(50, 3))
    with pytest.warns(RuntimeWarning):
        params, _ = train_logreg(x, np.zeros(50))
    assert np.all(logreg_forward(x, params) < 0.5)


# data handling

def test_split_counts():
    assert split_counts(20000) == (14000, 3000, 3000)
    assert sum(split_counts(101)) == 101
    with pytest.raises(ConfigError):
        split_counts(2)


def test_split_disjoint_and_deterministic():
    pts = np.arange(1000)
    a = split_dataset(pts, seed=4, block=50)
    b = split_dataset(pts, seed=4, block=50)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    assert sorted(np.concatenate(a).tolist()) == pts.tolist()
    assert [len(p) for p in a] == [700, 150, 150]


def test_normalize_roundtrip():
    rng = np.random.default_rng(2)
    tr, te = rng.normal(3, 2, (100, 4)), rng.normal(3, 2, (30, 4))
    stats, ztr, zte = normalize(tr, te)
    np.testing.assert_allclose(ztr.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(denormalize(zte, stats), te, rtol=1e-12)


def test_zero_variance_feature():
    with pytest.warns(RuntimeWarning):
        stats = fit_stats(np.column_stack([np.ones(10), np.arange(10.0)]))
    assert stats.std[0] == 1.0
    assert isinstance(stats, FeatureStats)


# serialization

def test_lstm_roundtrip(tmp_path):
    params = LstmParams.init(4, 16, 2, 2, seed=9)
    save_lstm(tmp_path / "m.bin", params, {"x_mean": np.arange(4.0)})
    back, extra = load_lstm(tmp_path / "m.bin")
    for a, b in zip(params.arrays(), back.arrays()):
        assert np.array_equal(a, b)
    assert np.array_equal(extra["x_mean"], np.arange(4.0))
    save_lstm(tmp_path / "n.bin", back, extra)
    assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "n.bin").read_bytes()


def test_logreg_roundtrip(tmp_path):
    p = LogRegParams(np.array([0.1, -2.0, 3.5]), -0.25, 0.4)
    save_logreg(tmp_path / "r.bin", p)
    back, _ = load_logreg(tmp_path / "r.bin")
    assert np.array_equal(back.w, p.w) and back.b == p.b and back.threshold == p.threshold


def test_corrupt_model_rejected(tmp_path):
    blob = pack_arrays(1, {"a": np.ones(3)})
    with pytest.raises(ModelFormatError):
        unpack_arrays(blob[:-4])
    with pytest.raises(ModelFormatError):
        unpack_arrays(b"XXXXXXXX" + blob[8:])
    with pytest.raises(ModelFormatError):
        unpack_arrays(blob, expect_kind=2)
    (tmp_path / "bad.bin").write_bytes(b"")
    with pytest.raises(ConfigError):
        load_lstm(tmp_path / "bad.bin")


def test_csv_export_full_precision():
    text = arrays_to_csv({"w": np.array([0.1, 1 / 3])})
    vals = [float(line.split(",")[2]) for line in text.strip().splitlines()[1:]]
    assert vals == [0.1, 1 / 3]
