import math

import numpy as np
import pytest

from aerovis.vision import gestures as g
from aerovis.vision import (
    GESTURE_NAMES, GestureError, MlpParams, TrainConfig, gesture_template,
    init_params, load_dataset_csv, load_model, mlp_forward, mlp_loss_and_grad,
    predict_gesture, save_dataset_csv, save_model, stratified_split,
    synth_gesture_dataset, train_gestures,
)


def random_params(seed):
    rng = np.random.default_rng(seed)
    return MlpParams(rng.normal(0, 0.5, (50, 63)), rng.normal(0, 0.5, 50),
                     rng.normal(0, 0.5, (6, 50)), rng.normal(0, 0.5, 6))


# ---- forward pass ----------------------------------------------------------

def test_zero_params_give_uniform_probabilities():
    probs = mlp_forward(MlpParams.zeros(), np.zeros(63))
    assert probs == pytest.approx(np.full(6, 1 / 6))


def test_leaky_relu_negative_slope():
    assert g.leaky_relu(np.array([-2.0]))[0] == pytest.approx(-0.02)
    assert g.leaky_relu(np.array([3.0]))[0] == 3.0
    assert g.leaky_relu(np.array([0.0]))[0] == 0.0


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(0)
    for i in range(1000):
        params = random_params(i) if i % 100 == 0 else params  # noqa: F821 - reuse most draws
        probs = mlp_forward(params, rng.normal(0, 1, 63))
        assert abs(probs.sum() - 1.0) <= 1e-9
        assert np.all(probs > 0)


def test_forward_rejects_non_finite_input():
    k = np.zeros(63)
    k[5] = np.nan
    with pytest.raises(GestureError):
        mlp_forward(MlpParams.zeros(), k)


def test_forward_rejects_wrong_length():
    with pytest.raises(GestureError):
        mlp_forward(MlpParams.zeros(), np.zeros(62))


def test_params_shape_validation():
    with pytest.raises(GestureError):
        MlpParams(np.zeros((50, 62)), np.zeros(50), np.zeros((6, 50)), np.zeros(6))


# ---- loss and gradients ----------------------------------------------------

def test_zero_params_loss_is_ln6():
    X = np.random.default_rng(1).normal(0, 1, (8, 63))
    y = np.arange(8) % 6
    loss, _ = mlp_loss_and_grad(MlpParams.zeros(), X, y)
    assert loss == pytest.approx(math.log(6), rel=1e-12)


def test_gradients_match_central_finite_differences():
    # independent oracle: central differences with eps = 1e-5, relative
    # error <= 1e-4 on every component with non-negligible magnitude
    eps = 1e-5
    rng = np.random.default_rng(42)
    for draw in range(20):
        params = random_params(draw)
        X = rng.normal(0, 1, (5, 63))
        y = rng.integers(0, 6, 5)
        _, grads = mlp_loss_and_grad(params, X, y)
        for name in ("W1", "b1", "W2", "b2"):
            arr = getattr(params, name)
            want = getattr(grads, name)
            flat = arr.reshape(-1)
            # probe a random subset of coordinates per array
            for idx in rng.choice(flat.size, size=min(12, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                lp, _ = mlp_loss_and_grad(params, X, y)
                flat[idx] = orig - eps
                lm, _ = mlp_loss_and_grad(params, X, y)
                flat[idx] = orig
                fd = (lp - lm) / (2 * eps)
                gv = want.reshape(-1)[idx]
                # central-difference truncation error is O(eps^2) ~ 1e-10
                # absolute; the 1e-5 floor turns the relative check into a
                # 1e-9 absolute one for components below the FD noise floor
                denom = max(abs(fd), abs(gv), 1e-5)
                assert abs(fd - gv) / denom <= 1e-4, (name, idx, fd, gv)


def test_duplicated_batch_leaves_loss_and_grads_unchanged():
    rng = np.random.default_rng(3)
    params = random_params(3)
    X = rng.normal(0, 1, (6, 63))
    y = rng.integers(0, 6, 6)
    loss1, g1 = mlp_loss_and_grad(params, X, y)
    loss2, g2 = mlp_loss_and_grad(params, np.vstack([X, X]), np.concatenate([y, y]))
    assert loss1 == pytest.approx(loss2)
    for name in ("W1", "b1", "W2", "b2"):
        assert getattr(g1, name) == pytest.approx(getattr(g2, name))


def test_loss_rejects_bad_labels_and_empty_batch():
    with pytest.raises(GestureError):
        mlp_loss_and_grad(MlpParams.zeros(), np.zeros((2, 63)), np.array([0, 6]))
    with pytest.raises(GestureError):
        mlp_loss_and_grad(MlpParams.zeros(), np.zeros((0, 63)), np.array([], dtype=int))


# ---- prediction ------------------------------------------------------------

def test_uniform_tie_breaks_to_label_zero():
    label, conf = predict_gesture(MlpParams.zeros(), np.zeros(63))
    assert label == 0
    assert conf == pytest.approx(1 / 6)


def test_confidence_bounds():
    rng = np.random.default_rng(9)
    for i in range(50):
        _, conf = predict_gesture(random_params(i), rng.normal(0, 1, 63))
        assert 1 / 6 - 1e-12 <= conf <= 1.0


# ---- synthetic dataset -----------------------------------------------------

def test_dataset_class_counts_328():
    _, y = synth_gesture_dataset(328, seed=1)
    counts = sorted(np.bincount(y, minlength=6), reverse=True)
    assert counts == [55, 55, 55, 55, 54, 54]


def test_dataset_deterministic_per_seed():
    X1, y1 = synth_gesture_dataset(100, seed=7)
    X2, y2 = synth_gesture_dataset(100, seed=7)
    X3, _ = synth_gesture_dataset(100, seed=8)
    assert np.array_equal(X1, X2) and np.array_equal(y1, y2)
    assert not np.array_equal(X1, X3)


def test_dataset_too_small():
    with pytest.raises(GestureError):
        synth_gesture_dataset(5, seed=0)


def test_templates_distinct():
    t = g.gesture_templates()
    for i in range(6):
        for j in range(i + 1, 6):
            assert np.linalg.norm(t[i] - t[j]) > 0.2


# ---- stratified split ------------------------------------------------------

def test_split_sizes_for_328():
    X, y = synth_gesture_dataset(328, seed=0)
    (Xtr, ytr), (Xva, yva), (Xte, yte) = stratified_split(X, y, seed=0)
    # frozen from the counting-rule oracle: per class 55 -> (44, 6, 5),
    # 54 -> (43, 5, 6); totals 262 / 34 / 32
    assert len(ytr) == 262 and len(yva) == 34 and len(yte) == 32
    for label in range(6):
        m = int(np.sum(y == label))
        for arr, ratio in ((ytr, 0.8), (yva, 0.1), (yte, 0.1)):
            assert abs(int(np.sum(arr == label)) - ratio * m) <= 1


def test_split_disjoint_and_exhaustive():
    X, y = synth_gesture_dataset(120, seed=2)
    splits = stratified_split(X, y, seed=2)
    rows = np.vstack([s[0] for s in splits])
    assert rows.shape[0] == len(y)
    # every original row appears exactly once across the splits
    orig = {tuple(r) for r in X}
    got = [tuple(r) for r in rows]
    assert len(got) == len(set(got))
    assert set(got) == orig


def test_split_every_class_in_every_split():
    X, y = synth_gesture_dataset(328, seed=3)
    for Xs, ys in stratified_split(X, y, seed=3):
        assert set(np.unique(ys)) == set(range(6))


def test_split_bad_ratios():
    X, y = synth_gesture_dataset(60, seed=0)
    with pytest.raises(GestureError):
        stratified_split(X, y, ratios=(0.5, 0.2, 0.2))


# ---- training --------------------------------------------------------------

def test_training_reaches_95_percent_test_accuracy():
    X, y = synth_gesture_dataset(328, seed=0)
    params, metrics = train_gestures(X, y, TrainConfig(seed=0))
    assert metrics["test_accuracy"] >= 0.95


def test_training_deterministic_per_seed():
    X, y = synth_gesture_dataset(328, seed=0)
    cfg = TrainConfig(seed=5, epochs=30)
    p1, m1 = train_gestures(X, y, cfg)
    p2, m2 = train_gestures(X, y, cfg)
    assert np.array_equal(p1.W1, p2.W1) and np.array_equal(p1.b2, p2.b2)
    assert m1["loss_curve"] == m2["loss_curve"]
    assert m1["test_accuracy"] == m2["test_accuracy"]


def test_zero_epoch_training_returns_init_params():
    X, y = synth_gesture_dataset(60, seed=0)
    params, _ = train_gestures(X, y, TrainConfig(seed=11, epochs=0))
    init = init_params(11)
    assert np.array_equal(params.W1, init.W1)
    assert np.array_equal(params.W2, init.W2)


def test_loss_non_increasing_at_small_lr():
    X, y = synth_gesture_dataset(328, seed=0)
    _, metrics = train_gestures(X, y, TrainConfig(seed=0, learning_rate=0.005, epochs=40))
    curve = metrics["loss_curve"]
    for a, b in zip(curve, curve[1:]):
        assert b <= a + 1e-12


def test_converged_model_classifies_noiseless_templates():
    X, y = synth_gesture_dataset(328, seed=0)
    params, _ = train_gestures(X, y, TrainConfig(seed=0))
    for label in range(6):
        pred, conf = predict_gesture(params, gesture_template(label))
        assert pred == label
        # converged but not saturated: only require better-than-uniform
        assert conf > 1.0 / 6.0


def test_gesture_names():
    assert GESTURE_NAMES == ("takeoff", "land", "right", "left", "forward", "backward")


# ---- model / dataset files -------------------------------------------------

def test_model_file_round_trip(tmp_path):
    params = random_params(21)
    path = tmp_path / "m.avmlp"
    save_model(path, params)
    loaded = load_model(path)
    for name in ("W1", "b1", "W2", "b2"):
        assert np.array_equal(getattr(params, name), getattr(loaded, name))


def test_model_file_magic_and_dims(tmp_path):
    path = tmp_path / "m.avmlp"
    save_model(path, MlpParams.zeros())
    raw = path.read_bytes()
    assert raw[:6] == b"AVMLP1"
    assert np.frombuffer(raw[6:18], dtype="<u4").tolist() == [63, 50, 6]
    bad = tmp_path / "bad.avmlp"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(GestureError):
        load_model(bad)


def test_dataset_csv_round_trip(tmp_path):
    X, y = synth_gesture_dataset(30, seed=4)
    path = tmp_path / "d.csv"
    save_dataset_csv(path, X, y)
    X2, y2 = load_dataset_csv(path)
    assert np.array_equal(y, y2)
    assert X2 == pytest.approx(X, rel=0, abs=0)
