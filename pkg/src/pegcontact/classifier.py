"""Small convolutional classifier in plain numpy (float64, manual backprop).

Layout: conv 3->8 (3x3, pad 1) -> relu -> maxpool 2 -> conv 8->16 (3x3, pad 1)
-> relu -> maxpool 2 -> fully connected 16*5*5 -> C logits.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import IncompatibleModelError, ShapeError, TrainingDivergedError

IN_CHANNELS = 3
IN_SIZE = 20
C1 = 8
C2 = 16
KERNEL = 3
PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")

MAGIC = b"PEGCNN\x00\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI7I")


def param_shapes(num_classes: int) -> dict[str, tuple[int, ...]]:
    flat = C2 * (IN_SIZE // 4) ** 2
    return {
        "conv1_w": (C1, IN_CHANNELS, KERNEL, KERNEL),
        "conv1_b": (C1,),
        "conv2_w": (C2, C1, KERNEL, KERNEL),
        "conv2_b": (C2,),
        "fc_w": (num_classes, flat),
        "fc_b": (num_classes,),
    }


@dataclass
class Model:
    num_classes: int
    params: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, num_classes: int) -> "Model":
        return cls(num_classes, {k: np.zeros(s) for k, s in param_shapes(num_classes).items()})

    @classmethod
    def init(cls, num_classes: int, seed: int) -> "Model":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        m = cls.zeros(num_classes)
        for name in ("conv1_w", "conv2_w", "fc_w"):
            shape = m.params[name].shape
            receptive = int(np.prod(shape[2:])) if len(shape) == 4 else 1
            fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            m.params[name] = rng.uniform(-limit, limit, size=shape)
        return m

    def copy(self) -> "Model":
        return Model(self.num_classes, {k: v.copy() for k, v in self.params.items()})


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (IN_CHANNELS, IN_SIZE, IN_SIZE):
        raise ShapeError(f"expected (B, {IN_CHANNELS}, {IN_SIZE}, {IN_SIZE}), got {x.shape}")
    return x


def _im2col(x):
    """(B, C, H, W) -> (B, H, W, C*9) patches for a 3x3 'same' convolution."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # B, C, H, W, 3, 3
    B, C, H, W = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B, H, W, C * KERNEL * KERNEL)


def _conv_forward(x, w, b):
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, w, in_shape):
    B, C, H, W = in_shape
    g = dout.transpose(0, 2, 3, 1)  # B, H, W, Cout
    dw = (g.reshape(-1, g.shape[-1]).T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
    db = g.sum(axis=(0, 1, 2))
    dcols = (g @ w.reshape(w.shape[0], -1)).reshape(B, H, W, C, KERNEL, KERNEL)
    dxp = np.zeros((B, C, H + 2, W + 2))
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_forward(x):
    B, C, H, W = x.shape
    blocks = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, in_shape):
    B, C, H, W = in_shape
    blocks = np.zeros((B, C, H // 2, W // 2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(B, C, H, W)


def _forward(model: Model, x):
    p = model.params
    a1, cols1 = _conv_forward(x, p["conv1_w"], p["conv1_b"])
    r1 = np.maximum(a1, 0.0)
    p1, arg1 = _pool_forward(r1)
    a2, cols2 = _conv_forward(p1, p["conv2_w"], p["conv2_b"])
    r2 = np.maximum(a2, 0.0)
    p2, arg2 = _pool_forward(r2)
    flat = p2.reshape(len(x), -1)
    logits = flat @ p["fc_w"].T + p["fc_b"]
    cache = (x, a1, cols1, p1, arg1, a2, cols2, arg2, flat)
    return logits, cache


def forward(model: Model, x) -> np.ndarray:
    """Logits for one input (C,) or a batch (B, C)."""
    single = np.ndim(x) == 3
    logits, _ = _forward(model, _check_input(x))
    return logits[0] if single else logits


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: Model, x) -> np.ndarray:
    return np.argmax(forward(model, _check_input(x)), axis=1)


def loss_and_grads(model: Model, x, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over the batch and its exact parameter gradients."""
    x = _check_input(x)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    logits, (x, a1, cols1, p1, arg1, a2, cols2, arg2, flat) = _forward(model, x)
    B = len(x)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(B), y])))
    p = model.params
    dlogits = probs
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    g = {"fc_w": dlogits.T @ flat, "fc_b": dlogits.sum(axis=0)}
    dp2 = (dlogits @ p["fc_w"]).reshape(B, C2, IN_SIZE // 4, IN_SIZE // 4)
    da2 = _pool_backward(dp2, arg2, a2.shape) * (a2 > 0)
    dp1, g["conv2_w"], g["conv2_b"] = _conv_backward(da2, cols2, p["conv2_w"], p1.shape)
    da1 = _pool_backward(dp1, arg1, a1.shape) * (a1 > 0)
    _, g["conv1_w"], g["conv1_b"] = _conv_backward(da1, cols1, p["conv1_w"], x.shape)
    return loss, g


def backward(model: Model, x, label) -> dict[str, np.ndarray]:
    return loss_and_grads(model, x, label)[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.2
    batch_size: int = 32
    epochs: int = 20
    split: float = 0.8
    seed: int = 0
    # "constant", or "cosine": lr * (1 + cos(pi * (epoch - 1) / epochs)) / 2
    schedule: str = "cosine"

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")

    def rate(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based)."""
        if self.schedule == "constant":
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / self.epochs))


@dataclass
class Dataset:
    inputs: np.ndarray   # (M, 3, 20, 20)
    labels: np.ndarray   # (M,)
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = _check_input(self.inputs) if len(self.inputs) else np.zeros(
            (0, IN_CHANNELS, IN_SIZE, IN_SIZE))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.inputs):
            raise ShapeError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        """Rows ``idx``; per-sample arrays in ``meta`` are sliced along with them."""
        meta = {k: v[idx] if isinstance(v, np.ndarray) and len(v) == len(self) else v
                for k, v in self.meta.items()}
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, meta)

    def split(self, fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        return self.subset(order[:cut]), self.subset(order[cut:])


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


def _loss_acc(model: Model, data: Dataset, chunk: int = 512) -> tuple[float, float]:
    if len(data) == 0:
        return float("nan"), float("nan")
    total, correct = 0.0, 0
    for s in range(0, len(data), chunk):
        logits = forward(model, data.inputs[s:s + chunk])
        y = data.labels[s:s + chunk]
        probs = softmax(logits)
        total += float(-np.log(probs[np.arange(len(y)), y]).sum())
        correct += int((logits.argmax(axis=1) == y).sum())
    return total / len(data), correct / len(data)


def train_split(train_set: Dataset, test_set: Dataset, config: TrainConfig,
                model: Model | None = None) -> tuple[Model, list[EpochStats]]:
    """Mini-batch SGD on ``train_set``; ``test_set`` is only evaluated."""
    model = Model.init(train_set.num_classes, config.seed) if model is None else model.copy()
    if model.num_classes != train_set.num_classes:
        raise IncompatibleModelError("model and dataset class counts differ")
    rng = np.random.default_rng(config.seed + 1)
    history = []
    for epoch in range(1, config.epochs + 1):
        lr = config.rate(epoch)
        order = rng.permutation(len(train_set))
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_grads(model, train_set.inputs[idx], train_set.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}")
            for k, g in grads.items():
                model.params[k] -= lr * g
        tr_loss, tr_acc = _loss_acc(model, train_set)
        if not np.isfinite(tr_loss):
            raise TrainingDivergedError(f"training loss became {tr_loss} after epoch {epoch}")
        te_loss, te_acc = _loss_acc(model, test_set)
        history.append(EpochStats(epoch, tr_loss, tr_acc, te_loss, te_acc))
    return model, history


def train(dataset: Dataset, config: TrainConfig) -> tuple[Model, list[EpochStats]]:
    """Shuffle with the config seed, split, and train."""
    train_set, test_set = dataset.split(config.split, config.seed)
    return train_split(train_set, test_set, config)


def evaluate(model: Model, dataset: Dataset) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix (rows: true class, columns: predicted)."""
    if model.num_classes != dataset.num_classes:
        raise IncompatibleModelError(
            f"model has {model.num_classes} classes, dataset {dataset.num_classes}")
    C = model.num_classes
    conf = np.zeros((C, C), dtype=np.int64)
    if len(dataset) == 0:
        return float("nan"), conf
    pred = np.concatenate([predict(model, dataset.inputs[s:s + 512])
                           for s in range(0, len(dataset), 512)])
    np.add.at(conf, (dataset.labels, pred), 1)
    return float(np.trace(conf) / len(dataset)), conf


def write_history(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "test_loss", "test_acc"])
        for h in history:
            w.writerow([h.epoch, repr(h.train_loss), repr(h.train_acc), repr(h.test_loss),
                        repr(h.test_acc)])


def save_model(model: Model, path) -> None:
    """Header (magic, version, dims) followed by little-endian float64 parameters.

    Header fields after magic and version: input channels, input size, conv1
    channels, conv2 channels, kernel size, class count, parameter count.
    Parameters follow in the order conv1_w, conv1_b, conv2_w, conv2_b, fc_w,
    fc_b, each flattened in C order.
    """
    flat = np.concatenate([model.params[k].ravel() for k in PARAM_ORDER]).astype("<f8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, IN_CHANNELS, IN_SIZE, C1, C2, KERNEL,
                          model.num_classes, flat.size)
    with open(path, "wb") as f:
        f.write(header)
        f.write(flat.tobytes())


def load_model(path, num_classes: int | None = None) -> Model:
    """Read a model file; ``num_classes`` (if given) must match the stored count."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IncompatibleModelError("file too short for a model header")
    magic, version, cin, size, c1, c2, k, C, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IncompatibleModelError("not a model file")
    if version != FORMAT_VERSION:
        raise IncompatibleModelError(f"unsupported format version {version}")
    if (cin, size, c1, c2, k) != (IN_CHANNELS, IN_SIZE, C1, C2, KERNEL):
        raise IncompatibleModelError("layer dimensions differ from this build")
    if num_classes is not None and C != num_classes:
        raise IncompatibleModelError(f"model has {C} classes, task needs {num_classes}")
    shapes = param_shapes(C)
    expected = sum(int(np.prod(s)) for s in shapes.values())
    body = raw[_HEADER.size:]
    if count != expected or len(body) != 8 * expected:
        raise IncompatibleModelError("parameter block size mismatch (truncated or corrupt file)")
    flat = np.frombuffer(body, dtype="<f8").astype(float)
    params, pos = {}, 0
    for name in PARAM_ORDER:
        n = int(np.prod(shapes[name]))
        params[name] = flat[pos:pos + n].reshape(shapes[name]).copy()
        pos += n
    return Model(C, params)
