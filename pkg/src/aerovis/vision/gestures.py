"""Gesture classifier: a 63 -> 50 -> 6 MLP over hand keypoint vectors
(21 landmarks x (x, y, z)), with hand-written forward/backward passes and
mini-batch gradient descent training.

Keypoint extraction from images is out of scope; training data is
synthesized from six fixed template hands plus Gaussian noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

N_KEYPOINTS = 63   # 21 landmarks x 3 coordinates
N_HIDDEN = 50
N_CLASSES = 6
LEAKY_SLOPE = 0.01

GESTURE_NAMES = ("takeoff", "land", "right", "left", "forward", "backward")

MODEL_MAGIC = b"AVMLP1"


class GestureError(Exception):
    pass


class TrainingError(GestureError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


def as_keypoints(values) -> np.ndarray:
    """Validate and convert a 63-vector of landmark coordinates."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape != (N_KEYPOINTS,):
        raise GestureError(f"expected {N_KEYPOINTS} keypoint values, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GestureError("keypoints contain non-finite values")
    return arr


@dataclass
class MlpParams:
    """Weights and biases of the gesture network. Also used as the gradient
    container (same shapes)."""
    W1: np.ndarray  # (50, 63)
    b1: np.ndarray  # (50,)
    W2: np.ndarray  # (6, 50)
    b2: np.ndarray  # (6,)
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        expect = {"W1": (N_HIDDEN, N_KEYPOINTS), "b1": (N_HIDDEN,),
                  "W2": (N_CLASSES, N_HIDDEN), "b2": (N_CLASSES,)}
        for name, shape in expect.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise GestureError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise GestureError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    def copy(self) -> "MlpParams":
        return MlpParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                         self.leaky_slope)

    @classmethod
    def zeros(cls) -> "MlpParams":
        return cls(np.zeros((N_HIDDEN, N_KEYPOINTS)), np.zeros(N_HIDDEN),
                   np.zeros((N_CLASSES, N_HIDDEN)), np.zeros(N_CLASSES))


@dataclass(frozen=True)
class TrainConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stratified: bool = True
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise GestureError(f"split ratios {self.ratios} do not sum to 1")


def leaky_relu(t: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(t >= 0, t, slope * t)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_batch(params: MlpParams, X: np.ndarray):
    pre = X @ params.W1.T + params.b1
    hidden = leaky_relu(pre, params.leaky_slope)
    logits = hidden @ params.W2.T + params.b2
    return pre, hidden, _softmax_rows(logits)


def mlp_forward(params: MlpParams, keypoints) -> np.ndarray:
    """Class probabilities for one keypoint vector (softmax output)."""
    k = as_keypoints(keypoints)
    return _forward_batch(params, k[None, :])[2][0]


def mlp_loss_and_grad(params: MlpParams, X: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradients (an MlpParams of
    the same shapes), by backprop through softmax-CE, affine, leaky ReLU,
    affine."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = len(labels)
    if n == 0:
        raise GestureError("batch is empty")
    if X.shape != (n, N_KEYPOINTS):
        raise GestureError(f"batch shape {X.shape} does not match {n} labels")
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise GestureError(f"label outside [0, {N_CLASSES})")
    if not np.all(np.isfinite(X)):
        raise GestureError("batch contains non-finite values")

    pre, hidden, probs = _forward_batch(params, X)
    loss = -np.mean(np.log(probs[np.arange(n), labels]))

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    gW2 = dlogits.T @ hidden
    gb2 = dlogits.sum(axis=0)
    dhidden = dlogits @ params.W2
    dpre = dhidden * np.where(pre >= 0, 1.0, params.leaky_slope)
    gW1 = dpre.T @ X
    gb1 = dpre.sum(axis=0)
    return loss, MlpParams(gW1, gb1, gW2, gb2, params.leaky_slope)


def predict_gesture(params: MlpParams, keypoints) -> tuple[int, float]:
    """Most probable gesture label and its probability; ties break to the
    lowest label index."""
    probs = mlp_forward(params, keypoints)
    label = int(np.argmax(probs))
    return label, float(probs[label])


def init_params(seed: int) -> MlpParams:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (N_KEYPOINTS + N_HIDDEN))
    lim2 = np.sqrt(6.0 / (N_HIDDEN + N_CLASSES))
    return MlpParams(rng.uniform(-lim1, lim1, (N_HIDDEN, N_KEYPOINTS)), np.zeros(N_HIDDEN),
                     rng.uniform(-lim2, lim2, (N_CLASSES, N_HIDDEN)), np.zeros(N_CLASSES))


# ---------------------------------------------------------------------------
# Synthetic dataset

# Landmark order follows the usual hand-landmark convention: wrist, then
# thumb/index/middle/ring/pinky with four joints each, tip last. The palm
# faces the camera; y grows downward.
_FINGERS = {            # finger -> (base x offset from wrist, segment length)
    "thumb": (-0.16, 0.07),
    "index": (-0.08, 0.09),
    "middle": (0.0, 0.10),
    "ring": (0.08, 0.09),
    "pinky": (0.16, 0.07),
}
_WRIST = (0.5, 0.85, 0.0)

# Per-gesture finger poses: 1 = extended, 0 = curled into the palm. The
# thumb additionally swings sideways for the right/left gestures.
_GESTURE_POSES = {
    "takeoff": {"fingers": (1, 1, 1, 1, 1), "thumb_dx": 0.0},   # open palm
    "land": {"fingers": (0, 0, 0, 0, 0), "thumb_dx": 0.0},      # fist
    "right": {"fingers": (1, 0, 0, 0, 0), "thumb_dx": 0.12},    # thumb out right
    "left": {"fingers": (1, 0, 0, 0, 0), "thumb_dx": -0.12},    # thumb out left
    "forward": {"fingers": (0, 1, 1, 0, 0), "thumb_dx": 0.0},   # two fingers up
    "backward": {"fingers": (0, 1, 0, 0, 0), "thumb_dx": 0.0},  # index point
}


def _finger_joints(base_x, seg, extended, thumb_dx=0.0):
    wx, wy, wz = _WRIST
    joints = []
    x, y, z = wx + base_x, wy - 0.1, wz
    for j in range(4):
        if extended:
            y -= seg
            x += thumb_dx
        else:
            # curl: first joint rises a little, the rest fold back down
            y += -seg * 0.4 if j == 0 else seg * 0.45
            z += 0.02
        joints.append((x, y, z))
    return joints


def gesture_template(label: int) -> np.ndarray:
    """The noiseless 63-dim keypoint vector for one gesture class."""
    pose = _GESTURE_POSES[GESTURE_NAMES[label]]
    pts = [_WRIST]
    for (name, (bx, seg)), ext in zip(_FINGERS.items(), pose["fingers"]):
        dx = pose["thumb_dx"] if name == "thumb" else 0.0
        pts.extend(_finger_joints(bx, seg, ext, dx))
    return np.asarray(pts, dtype=np.float64).reshape(-1)


def gesture_templates() -> np.ndarray:
    return np.stack([gesture_template(c) for c in range(N_CLASSES)])


def synth_gesture_dataset(n: int = 328, seed: int = 0):
    """n keypoint vectors drawn as template + N(0, 0.02) noise per
    coordinate, labels spread as evenly as n allows. Returns (X, y)."""
    if n < N_CLASSES:
        raise GestureError(f"need at least {N_CLASSES} samples, got {n}")
    rng = np.random.default_rng(seed)
    counts = [n // N_CLASSES + (1 if c < n % N_CLASSES else 0) for c in range(N_CLASSES)]
    templates = gesture_templates()
    X = np.empty((n, N_KEYPOINTS))
    y = np.empty(n, dtype=np.int64)
    pos = 0
    for label, count in enumerate(counts):
        X[pos:pos + count] = templates[label] + rng.normal(0.0, 0.02, (count, N_KEYPOINTS))
        y[pos:pos + count] = label
        pos += count
    order = rng.permutation(n)
    return X[order], y[order]


def stratified_split(X: np.ndarray, y: np.ndarray, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Per-class shuffled partition into (train, val, test); each split is an
    (X, y) pair. Per-class counts follow the ratios within +-1."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise GestureError(f"split ratios {ratios} do not sum to 1")
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    parts: list[list[np.ndarray]] = [[], [], []]
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        if len(idx) == 0:
            raise GestureError(f"class {label} is empty")
        idx = rng.permutation(idx)
        m = len(idx)
        n_train = round(ratios[0] * m)
        n_val = round(ratios[1] * m)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    splits = []
    for chunk in parts:
        idx = rng.permutation(np.concatenate(chunk))
        splits.append((X[idx], y[idx]))
    return tuple(splits)


def _accuracy(params: MlpParams, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    probs = _forward_batch(params, X)[2]
    return float(np.mean(probs.argmax(axis=1) == y))


def train_gestures(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig()):
    """Mini-batch gradient descent on the cross-entropy loss. Returns
    (best-on-validation params, metrics dict with train/val/test accuracy
    and the per-epoch training loss curve). Deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    if config.stratified:
        (Xtr, ytr), (Xva, yva), (Xte, yte) = stratified_split(X, y, config.ratios, config.seed)
    else:
        idx = rng.permutation(len(y))
        n_train = round(config.ratios[0] * len(y))
        n_val = round(config.ratios[1] * len(y))
        tr, va, te = idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]
        (Xtr, ytr), (Xva, yva), (Xte, yte) = (X[tr], y[tr]), (X[va], y[va]), (X[te], y[te])

    params = init_params(config.seed)
    best = params.copy()
    best_val = _accuracy(params, Xva, yva)
    loss_curve = [mlp_loss_and_grad(params, Xtr, ytr)[0]]

    n = len(ytr)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = mlp_loss_and_grad(params, Xtr[batch], ytr[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            lr = config.learning_rate
            params.W1 -= lr * grads.W1
            params.b1 -= lr * grads.b1
            params.W2 -= lr * grads.W2
            params.b2 -= lr * grads.b2
        epoch_loss = mlp_loss_and_grad(params, Xtr, ytr)[0]
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
        loss_curve.append(epoch_loss)
        val_acc = _accuracy(params, Xva, yva)
        if val_acc > best_val:
            best_val = val_acc
            best = params.copy()

    metrics = {
        "train_accuracy": _accuracy(best, Xtr, ytr),
        "val_accuracy": best_val,
        "test_accuracy": _accuracy(best, Xte, yte),
        "loss_curve": loss_curve,
        "split_sizes": (len(ytr), len(yva), len(yte)),
    }
    return best, metrics


# ---------------------------------------------------------------------------
# Model / dataset files

def save_model(path, params: MlpParams):
    """Flat binary: magic "AVMLP1", dims (63, 50, 6) as u32 LE, then
    row-major float64 LE W1, b1, W2, b2."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<III", N_KEYPOINTS, N_HIDDEN, N_CLASSES))
        for arr in (params.W1, params.b1, params.W2, params.b2):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> MlpParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise GestureError("not a gesture model file (bad magic)")
    pos = len(MODEL_MAGIC)
    dims = struct.unpack_from("<III", data, pos)
    if dims != (N_KEYPOINTS, N_HIDDEN, N_CLASSES):
        raise GestureError(f"unsupported model dims {dims}")
    pos += 12
    arrays = []
    for shape in ((N_HIDDEN, N_KEYPOINTS), (N_HIDDEN,), (N_CLASSES, N_HIDDEN), (N_CLASSES,)):
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
        arrays.append(arr.astype(np.float64))
        pos += count * 8
    if pos != len(data):
        raise GestureError("trailing bytes in model file")
    return MlpParams(*arrays)


def save_dataset_csv(path, X: np.ndarray, y: np.ndarray):
    """CSV rows: 63 feature columns then the integer label column."""
    rows = np.column_stack([X, y.astype(np.float64)])
    np.savetxt(path, rows, delimiter=",", fmt="%.17g")


def load_dataset_csv(path):
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.shape[1] != N_KEYPOINTS + 1:
        raise GestureError(f"expected {N_KEYPOINTS + 1} columns, got {rows.shape[1]}")
    return rows[:, :N_KEYPOINTS], rows[:, N_KEYPOINTS].astype(np.int64)
