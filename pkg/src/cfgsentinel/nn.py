"""From-scratch feed-forward networks over feature vectors (numpy only).

Two architectures share one layer toolkit:

cnn: 1xW input -> conv(46, k3, pad 1) -> conv(46, k3) -> maxpool(2,2)
     -> dropout 0.25 -> conv(92, k3, pad 1) -> conv(92, k3) -> maxpool(2,2)
     -> dropout 0.25 -> flatten -> dense 512 -> dropout 0.5 -> dense C
dnn: W input -> dense 100 -> dense 100 -> dropout 0.25 -> dense 100
     -> dense 100 -> dropout 0.5 -> dense C

All conv/dense layers use ReLU except the final dense, whose logits feed a
softmax with categorical cross-entropy.  For width 23 the cnn activation
widths are 23, 21, 10, 10, 8, 4 with a flatten of 92*4 = 368.  Training is
Adam (lr 1e-3, betas 0.9/0.999, eps 1e-8), 100 epochs, batch 32, and is
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"CFGSENT1"


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (bad labels, diverging loss)."""


class ModelIOError(ValueError):
    """Raised for unreadable, corrupt, or shape-inconsistent checkpoints."""


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    def __init__(self, rng, n_in: int, n_out: int):
        self.W = _glorot(rng, (n_out, n_in), n_in, n_out)
        self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    @property
    def params(self):
        return [self.W, self.b]

    @property
    def grads(self):
        return [self.dW, self.db]

    def forward(self, x, train, rng):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dout):
        self.dW[...] = dout.T @ self._x
        self.db[...] = dout.sum(axis=0)
        return dout @ self.W


class Conv1D:
    """1-D convolution, stride 1.  Input (B, C_in, W), output (B, C_out, W_out)."""

    def __init__(self, rng, c_in: int, c_out: int, k: int, pad: int):
        self.k, self.pad = k, pad
        self.W = _glorot(rng, (c_out, c_in, k), c_in * k, c_out * k)
        self.b = np.zeros(c_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    @property
    def params(self):
        return [self.W, self.b]

    @property
    def grads(self):
        return [self.dW, self.db]

    def out_width(self, w: int) -> int:
        return w + 2 * self.pad - self.k + 1

    def forward(self, x, train, rng):
        if self.pad:
            x = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        b, c_in, w_pad = x.shape
        w_out = w_pad - self.k + 1
        # im2col: (B, W_out, C_in * k) so the convolution is one matmul
        cols = np.empty((b, w_out, c_in * self.k))
        for o in range(self.k):
            cols[:, :, o::self.k] = x[:, :, o : o + w_out].transpose(0, 2, 1)
        self._cols = cols
        self._w_pad = w_pad
        y = cols @ self.W.reshape(self.W.shape[0], -1).T + self.b
        return y.transpose(0, 2, 1)

    def backward(self, dout):
        b, c_out, w_out = dout.shape
        dmat = dout.transpose(0, 2, 1)  # (B, W_out, C_out)
        self.db[...] = dout.sum(axis=(0, 2))
        self.dW[...] = np.tensordot(dmat, self._cols, axes=([0, 1], [0, 1])).reshape(
            self.W.shape
        )
        dcols = dmat @ self.W.reshape(c_out, -1)  # (B, W_out, C_in * k)
        c_in = self.W.shape[1]
        dxp = np.zeros((b, c_in, self._w_pad))
        for o in range(self.k):
            dxp[:, :, o : o + w_out] += dcols[:, :, o::self.k].transpose(0, 2, 1)
        if self.pad:
            dxp = dxp[:, :, self.pad : -self.pad]
        return dxp


class MaxPool1D:
    """Width-2, stride-2 max pooling; an odd trailing element is dropped."""

    params: list = []
    grads: list = []

    def forward(self, x, train, rng):
        b, c, w = x.shape
        w_out = w // 2
        self._in_shape = x.shape
        xt = x[:, :, : 2 * w_out].reshape(b, c, w_out, 2)
        self._arg = xt.argmax(axis=3)
        return xt.max(axis=3)

    def backward(self, dout):
        b, c, w = self._in_shape
        w_out = w // 2
        dx = np.zeros((b, c, w_out, 2))
        np.put_along_axis(dx, self._arg[..., None], dout[..., None], axis=3)
        full = np.zeros(self._in_shape)
        full[:, :, : 2 * w_out] = dx.reshape(b, c, 2 * w_out)
        return full


class ReLU:
    params: list = []
    grads: list = []

    def forward(self, x, train, rng):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Dropout:
    """Inverted dropout: active only in training mode."""

    params: list = []
    grads: list = []

    def __init__(self, p: float):
        self.p = p

    def forward(self, x, train, rng):
        if not train:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten:
    params: list = []
    grads: list = []

    def forward(self, x, train, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------

def cnn_width_chain(input_width: int) -> list[int]:
    """Activation widths after each conv/pool stage.  Raises when the input
    is too narrow to pass through the documented stack."""
    w = [input_width]
    w.append(input_width)        # conv k3 pad 1
    w.append(w[-1] - 2)          # conv k3 pad 0
    w.append(w[-1] // 2)         # pool 2/2
    w.append(w[-1])              # conv k3 pad 1
    w.append(w[-1] - 2)          # conv k3 pad 0
    w.append(w[-1] // 2)         # pool 2/2
    if any(x < 1 for x in w):
        raise ModelIOError(f"input width {input_width} cannot pass the cnn stack")
    return w


def cnn_flatten_width(input_width: int) -> int:
    return 92 * cnn_width_chain(input_width)[-1]


def _cnn_layers(rng, input_width: int, num_classes: int):
    flat = cnn_flatten_width(input_width)
    return [
        Conv1D(rng, 1, 46, 3, pad=1), ReLU(),
        Conv1D(rng, 46, 46, 3, pad=0), ReLU(),
        MaxPool1D(), Dropout(0.25),
        Conv1D(rng, 46, 92, 3, pad=1), ReLU(),
        Conv1D(rng, 92, 92, 3, pad=0), ReLU(),
        MaxPool1D(), Dropout(0.25),
        Flatten(),
        Dense(rng, flat, 512), ReLU(), Dropout(0.5),
        Dense(rng, 512, num_classes),
    ]


def _dnn_layers(rng, input_width: int, num_classes: int):
    return [
        Dense(rng, input_width, 100), ReLU(),
        Dense(rng, 100, 100), ReLU(), Dropout(0.25),
        Dense(rng, 100, 100), ReLU(),
        Dense(rng, 100, 100), ReLU(), Dropout(0.5),
        Dense(rng, 100, num_classes),
    ]


ARCHITECTURES = ("cnn", "dnn")


@dataclass
class Model:
    """Trained network: architecture tag, layer stack, class-name order,
    and the fitted per-feature min/max scaler."""

    arch: str
    input_width: int
    class_names: tuple[str, ...]
    layers: list
    scaler_min: Optional[np.ndarray] = None
    scaler_max: Optional[np.ndarray] = None
    loss_history: list[float] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def _prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_width:
            raise ValueError(f"expected {self.input_width} features, got {X.shape[1]}")
        if self.scaler_min is not None:
            X = apply_scaler(X, self.scaler_min, self.scaler_max)
        if self.arch == "cnn":
            X = X[:, None, :]
        return X

    def _forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits = self._forward(self._prepare(X))
        return softmax(logits)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def predict_class(self, x: np.ndarray) -> str:
        return self.class_names[int(self.predict(x)[0])]

    def loss_and_grads(self, X_scaled: np.ndarray, y: np.ndarray, train: bool, rng) -> float:
        """Forward + backward on already-scaled inputs; grads left in layers."""
        x = X_scaled[:, None, :] if self.arch == "cnn" else X_scaled
        logits = self._forward(x, train, rng)
        probs = softmax(logits)
        batch = len(y)
        loss = -np.mean(np.log(probs[np.arange(batch), y]))
        dlogits = probs.copy()
        dlogits[np.arange(batch), y] -= 1.0
        dlogits /= batch
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return float(loss)

    def param_arrays(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def grad_arrays(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]


def build_model(arch: str, input_width: int, class_names: Sequence[str], seed: int) -> Model:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture: {arch!r}")
    if len(class_names) < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    make = _cnn_layers if arch == "cnn" else _dnn_layers
    return Model(
        arch=arch,
        input_width=input_width,
        class_names=tuple(class_names),
        layers=make(rng, input_width, len(class_names)),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

def fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature min and max over the training matrix."""
    X = np.asarray(X, dtype=np.float64)
    return X.min(axis=0), X.max(axis=0)


def apply_scaler(X: np.ndarray, mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    """Map into [0, 1]; constant features become 0; unseen values clamp."""
    X = np.asarray(X, dtype=np.float64)
    span = maxs - mins
    out = np.zeros_like(X)
    live = span > 0
    clipped = np.clip(X[:, live], mins[live], maxs[live])
    out[:, live] = (clipped - mins[live]) / span[live]
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]):
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m[...] = self.b1 * m + (1 - self.b1) * g
            v[...] = self.b2 * v + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(
    X: np.ndarray,
    y: np.ndarray,
    class_names: Sequence[str],
    arch: str = "cnn",
    seed: int = 0,
    epochs: int = 100,
    batch_size: int = 32,
    lr: float = 1e-3,
) -> Model:
    """Train a detector/classifier on raw feature rows.  Fits the min-max
    scaler on X, then runs seeded shuffled mini-batch Adam.  The same seed
    and data reproduce the final weights bit for bit."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError("X must be 2-D with one label per row")
    if len(X) == 0:
        raise TrainingError("empty training set")
    present = set(int(c) for c in np.unique(y))
    for c in range(len(class_names)):
        if c not in present:
            raise TrainingError(f"class {class_names[c]!r} has no training samples")
    if not present <= set(range(len(class_names))):
        raise TrainingError("label outside class range")

    model = build_model(arch, X.shape[1], class_names, seed)
    rng = np.random.default_rng(seed + 1)
    model.scaler_min, model.scaler_max = fit_scaler(X)
    Xs = apply_scaler(X, model.scaler_min, model.scaler_max)

    opt = Adam(model.param_arrays(), lr=lr)
    n = len(Xs)
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss = model.loss_and_grads(Xs[idx], y[idx], train=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss")
            opt.step(model.grad_arrays())
            total += loss * len(idx)
        model.loss_history.append(total / n)
    return model


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalMetrics:
    """Accuracy, confusion counts (rows: actual, columns: predicted), and
    two FPR/FNR conventions reported side by side.

    The alternative convention, common in parts of the malware literature,
    divides mislabeled malware by the malware total (alt_fpr) and mislabeled
    benign by the benign total (alt_fnr); the conventional pair treats
    malware as the positive class.  Rates are None when no benign class is
    designated.
    """

    accuracy: float
    confusion: np.ndarray
    class_names: tuple[str, ...]
    alt_fpr: Optional[float] = None
    alt_fnr: Optional[float] = None
    fpr: Optional[float] = None
    fnr: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
            "alt_fpr": self.alt_fpr,
            "alt_fnr": self.alt_fnr,
            "fpr": self.fpr,
            "fnr": self.fnr,
        }


def evaluate(model: Model, X: np.ndarray, y: np.ndarray, benign_index: Optional[int] = None) -> EvalMetrics:
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = model.predict(X)
    k = model.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for a, p in zip(y, pred):
        confusion[a, p] += 1
    total = len(y)
    accuracy = float(np.trace(confusion)) / total

    alt_fpr = alt_fnr = fpr = fnr = None
    if benign_index is not None:
        is_benign = y == benign_index
        n_b = int(is_benign.sum())
        n_m = total - n_b
        if n_m > 0:
            alt_fpr = float(np.sum((~is_benign) & (pred != y))) / n_m
            fnr = float(np.sum((~is_benign) & (pred == benign_index))) / n_m
        if n_b > 0:
            alt_fnr = float(np.sum(is_benign & (pred != benign_index))) / n_b
            fpr = alt_fnr
    return EvalMetrics(
        accuracy=accuracy,
        confusion=confusion,
        class_names=model.class_names,
        alt_fpr=alt_fpr,
        alt_fnr=alt_fnr,
        fpr=fpr,
        fnr=fnr,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path: str | Path) -> None:
    """Binary checkpoint: magic, JSON header (arch, widths, classes, shapes),
    then all weights and the scaler as little-endian float64."""
    arrays = model.param_arrays()
    has_scaler = model.scaler_min is not None
    if has_scaler:
        arrays = arrays + [model.scaler_min, model.scaler_max]
    header = {
        "arch": model.arch,
        "input_width": model.input_width,
        "num_classes": model.num_classes,
        "class_names": list(model.class_names),
        "scaler": has_scaler,
        "shapes": [list(a.shape) for a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def load_checkpoint(path: str | Path) -> Model:
    """Load and validate a checkpoint: magic, header syntax, the full shape
    chain implied by (arch, input width, class count), and payload length."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ModelIOError("bad checkpoint magic")
    if len(raw) < 12:
        raise ModelIOError("truncated checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelIOError(f"corrupt checkpoint header: {e}") from None
    arch = header.get("arch")
    if arch not in ARCHITECTURES:
        raise ModelIOError(f"unknown architecture in checkpoint: {arch!r}")
    class_names = tuple(header["class_names"])
    if len(class_names) != header["num_classes"]:
        raise ModelIOError("class name list does not match class count")
    model = build_model(arch, int(header["input_width"]), class_names, seed=0)
    arrays = model.param_arrays()
    if header["scaler"]:
        model.scaler_min = np.zeros(model.input_width)
        model.scaler_max = np.zeros(model.input_width)
        arrays = arrays + [model.scaler_min, model.scaler_max]
    expected = [list(a.shape) for a in arrays]
    if header["shapes"] != expected:
        raise ModelIOError("checkpoint shapes do not match the architecture's shape chain")
    offset = 12 + hlen
    for a in arrays:
        nbytes = a.size * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ModelIOError("checkpoint payload truncated")
        a[...] = np.frombuffer(chunk, dtype="<f8").reshape(a.shape)
        offset += nbytes
    if offset != len(raw):
        raise ModelIOError("trailing bytes in checkpoint")
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ModelIOError("non-finite values in checkpoint")
    return model
