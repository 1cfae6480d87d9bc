"""
    Small numpy neural-network engine: layers with explicit backprop, SGD,
    gradient checking, the 16/32/64 backbone and its pretraining.
"""

import copy
import logging
import os
import struct
from collections import OrderedDict
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from tqdm import tqdm

from gprforge.annotate import iou, load_dataset
from gprforge.configuration import Configuration
from gprforge.exceptions import (
    BadHeader,
    BadMagic,
    BadRecordSize,
    BadWeights,
    DivergedTraining,
    LabelOutOfRange,
    ShapeMismatch,
    TrailingData,
    TruncatedFile,
    UnsupportedVersion,
)
from gprforge.models import BBox

log = logging.getLogger(__name__)

Weights = Dict[str, np.ndarray]

BACKBONE_BLOCKS = ((16, 5), (32, 5), (64, 5))
BACKBONE_PAD = 2
HIDDEN = 64
PATCH = 32
CIFAR_RECORD = 1 + 3 * 32 * 32
LUMA = (0.299, 0.587, 0.114)

GPNW_MAGIC = b"GPNW"
GPNW_VERSION = 1


def check_finite(name: str, value: np.ndarray):
    # Only active with Configuration().debug
    if Configuration().debug and not np.all(np.isfinite(value)):
        raise DivergedTraining(subject=name, reason=f"non-finite values after '{name}'")


# Functional ops. Inputs are batched (N, C, H, W); caches carry what the
# matching backward needs.


def conv2d_forward(x, w, b, pad=0, stride=1):
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if c != cw or k != k2 or b.shape != (f,):
        raise ShapeMismatch(subject=f"input {x.shape}, kernels {w.shape}, bias {b.shape}")
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ShapeMismatch(subject=f"kernel {k} larger than padded input {x.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b[None, :, None, None]

    return np.ascontiguousarray(out), (x.shape, xp.shape, windows, w, pad, stride)


def conv2d_backward(dout, cache):
    x_shape, xp_shape, windows, w, pad, stride = cache
    _, _, ho, wo = dout.shape
    k = w.shape[2]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                "nfhw,fc->nchw", dout, w[:, :, i, j]
            )
    dx = dxp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]]

    return dx, dw, db


def conv2d(x, kernels, bias, pad=0, stride=1):
    """Cross-correlation of a C x H x W (or batched) input."""
    single = x.ndim == 3
    out, _ = conv2d_forward(x[None] if single else x, kernels, bias, pad, stride)
    return out[0] if single else out


def maxpool2_forward(x):
    # 2x2 windows, stride 2; odd trailing rows/columns are dropped
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    return out, (x.shape, arg)


def maxpool2_backward(dout, cache):
    x_shape, arg = cache
    n, c, h2, w2 = dout.shape
    dwin = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, : 2 * h2, : 2 * w2] = dwin

    return dx


def maxpool2(x):
    single = x.ndim == 3
    out, _ = maxpool2_forward(x[None] if single else x)
    return out[0] if single else out


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def fc(x, w, b):
    # w is (out, in)
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(subject=f"input {x.shape}, weights {w.shape}, bias {b.shape}")
    return x @ w.T + b


def fc_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over rows and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0

    return float(loss), grad / n


def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x**2, ax - 0.5)


def smooth_l1_loss(pred, target, normalizer: float = 1.0):
    """Sum over coordinates of smooth_l1(pred - target), divided by
    `normalizer`, with its gradient w.r.t. pred."""
    diff = pred - target
    grad = np.where(np.abs(diff) < 1.0, diff, np.sign(diff))
    return float(smooth_l1(diff).sum() / normalizer), grad / normalizer


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_bce(logits, targets):
    # Mean binary cross-entropy on logits
    n = logits.shape[0]
    loss = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(loss.mean()), (sigmoid(logits) - targets) / n


def mse(pred, target):
    diff = pred - target
    return float(0.5 * (diff**2).sum() / pred.shape[0]), diff / pred.shape[0]


LOSSES = {
    "cross_entropy": softmax_cross_entropy,
    "mse": mse,
    "bce": sigmoid_bce,
}


# Layers


class Layer(object):
    def __init__(self):
        self.params = OrderedDict()
        self.grads = OrderedDict()
        self.cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, in_channels, filters, kernel, pad=0, stride=1, rng=None):
        super().__init__()
        self.pad, self.stride = pad, stride
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.params["w"] = (rng.standard_normal((filters, in_channels, kernel, kernel)) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        self.params["b"] = np.zeros(filters, dtype=np.float32)

    def forward(self, x):
        out, self.cache = conv2d_forward(x, self.params["w"], self.params["b"], self.pad, self.stride)
        return out

    def backward(self, dout):
        dx, self.grads["w"], self.grads["b"] = conv2d_backward(dout, self.cache)
        return dx


class ReLU(Layer):
    def forward(self, x):
        self.cache = x
        return relu(x)

    def backward(self, dout):
        return relu_backward(dout, self.cache)


class MaxPool2(Layer):
    def forward(self, x):
        out, self.cache = maxpool2_forward(x)
        return out

    def backward(self, dout):
        return maxpool2_backward(dout, self.cache)


class Flatten(Layer):
    def forward(self, x):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.cache)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["w"] = (rng.standard_normal((out_features, in_features)) * np.sqrt(2.0 / in_features)).astype(np.float32)
        self.params["b"] = np.zeros(out_features, dtype=np.float32)

    def forward(self, x):
        self.cache = x
        return fc(x, self.params["w"], self.params["b"])

    def backward(self, dout):
        dx, self.grads["w"], self.grads["b"] = fc_backward(dout, self.cache, self.params["w"])
        return dx


class Network(object):
    """Ordered, named layers; parameters are addressed as `layer.param`."""

    def __init__(self, layers: Sequence[Tuple[str, Layer]]):
        self.layers = OrderedDict(layers)

    def forward(self, x, until: Optional[str] = None):
        for name, layer in self.layers.items():
            x = layer.forward(x)
            check_finite(name, x)
            if name == until:
                break
        return x

    def backward(self, dout, since: Optional[str] = None):
        names = list(self.layers)
        if since is not None:
            names = names[: names.index(since) + 1]
        for name in reversed(names):
            dout = self.layers[name].backward(dout)
        return dout

    def params(self) -> Weights:
        return OrderedDict(
            (f"{name}.{key}", value)
            for name, layer in self.layers.items()
            for key, value in layer.params.items()
        )

    def grads(self) -> Weights:
        return OrderedDict(
            (f"{name}.{key}", layer.grads[key])
            for name, layer in self.layers.items()
            for key in layer.params
        )

    def astype(self, dtype) -> "Network":
        clone = copy.deepcopy(self)
        for layer in clone.layers.values():
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(dtype)
            layer.grads.clear()
            layer.cache = None
        return clone

    def load(self, weights: Weights, strict: bool = True):
        # Copy matching tensors in; shapes must agree
        params = self.params()
        for name, value in weights.items():
            if name not in params:
                if strict:
                    raise BadWeights(subject=f"unknown tensor '{name}'")
                continue
            if params[name].shape != value.shape:
                raise BadWeights(subject=f"'{name}' has shape {value.shape}, expected {params[name].shape}")
            layer, key = name.split(".", 1)
            self.layers[layer].params[key] = value.astype(params[name].dtype)
        missing = [n for n in params if n not in weights]
        if strict and missing:
            raise BadWeights(subject=f"missing tensors {missing}")


def build_backbone(n_classes: int = 10, seed: int = 0, in_channels: int = 1) -> Network:
    # conv5(16) -> conv5(32) -> conv5(64), each + ReLU + 2x2 pool, then
    # FC-64 -> ReLU -> FC-n_classes
    rng = np.random.default_rng(seed)
    layers = []
    channels = in_channels
    for k, (filters, kernel) in enumerate(BACKBONE_BLOCKS, start=1):
        layers += [
            (f"conv{k}", Conv2D(channels, filters, kernel, BACKBONE_PAD, 1, rng)),
            (f"relu{k}", ReLU()),
            (f"pool{k}", MaxPool2()),
        ]
        channels = filters
    feat = PATCH // 2 ** len(BACKBONE_BLOCKS)
    layers += [
        ("flatten", Flatten()),
        ("fc1", Dense(channels * feat * feat, HIDDEN, rng)),
        ("relu_fc", ReLU()),
        ("fc2", Dense(HIDDEN, n_classes, rng)),
    ]
    return Network(layers)


def backbone_weights(net: Network) -> Weights:
    """Transferable part of a pretrained backbone: convs and fc1."""
    return OrderedDict((k, v) for k, v in net.params().items() if not k.startswith("fc2."))


# Optimization


class SGD(object):
    """Momentum SGD with L2 weight decay; velocities keyed by name."""

    def __init__(self, lr=0.01, momentum=0.9, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params: Weights, grads: Weights) -> Weights:
        return sgd_step(params, grads, self.velocity, self.lr, self.momentum, self.weight_decay)


def sgd_step(weights: Weights, grads: Weights, velocity: dict, lr, momentum=0.0, weight_decay=0.0) -> Weights:
    # v = momentum * v - lr * (g + wd * w); w += v, in parameter order
    for name, w in weights.items():
        g = grads[name]
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = momentum * v - lr * (g + weight_decay * w)
        velocity[name] = v.astype(w.dtype)
        w += velocity[name]
    return weights


def numeric_gradient_check(
    params: Weights,
    loss_and_grads: Callable[[], Tuple[float, Weights]],
    eps: float = 1e-5,
    n_checks: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central
    differences over up to n_checks sampled parameter entries."""
    _, grads = loss_and_grads()
    grads = {k: np.array(v, dtype=np.float64) for k, v in grads.items()}
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    rng = np.random.default_rng(seed)
    total = int(sizes.sum())
    flat_ids = rng.choice(total, size=min(n_checks, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat in np.sort(flat_ids):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        w = params[name].reshape(-1)
        saved = w[idx]
        w[idx] = saved + eps
        plus, _ = loss_and_grads()
        w[idx] = saved - eps
        minus, _ = loss_and_grads()
        w[idx] = saved
        numeric = (plus - minus) / (2.0 * eps)
        analytic = grads[name].reshape(-1)[idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, err)
    return worst


def grad_check(network: Network, x, labels, eps=1e-5, loss: str = "cross_entropy", n_checks=200, seed=0) -> float:
    # Runs on a float64 copy
    net = network.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    labels = labels if loss == "cross_entropy" else np.asarray(labels, dtype=np.float64)
    loss_fn = LOSSES[loss]

    def loss_and_grads():
        value, dout = loss_fn(net.forward(x), labels)
        net.backward(dout)
        return value, net.grads()

    return numeric_gradient_check(net.params(), loss_and_grads, eps, n_checks, seed)


# Weights files


def encode_weights(weights: Weights) -> bytes:
    out = [struct.pack("<4sHI", GPNW_MAGIC, GPNW_VERSION, len(weights))]
    for name, value in weights.items():
        raw = name.encode("utf-8")
        value = np.ascontiguousarray(value, dtype="<f4")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(value.tobytes())
    return b"".join(out)


class ByteReader(object):
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(subject=what)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_weights(data: bytes) -> Weights:
    reader = ByteReader(data)
    if data[:4] != GPNW_MAGIC:
        if len(data) < 4:
            raise TruncatedFile(subject="magic")
        raise BadMagic(subject=bytes(data[:4]))
    _, version, count = reader.unpack("<4sHI", "header")
    if version != GPNW_VERSION:
        raise UnsupportedVersion(subject=version)

    weights = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "tensor name length")
        try:
            name = reader.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise BadHeader(subject="tensor name is not UTF-8")
        if not name or name in weights:
            raise BadHeader(subject=f"empty or duplicate tensor name '{name}'")
        (rank,) = reader.unpack("<B", "tensor rank")
        shape = reader.unpack(f"<{rank}I", "tensor extents")
        size = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(4 * size, f"tensor '{name}'")
        weights[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if reader.pos != len(data):
        raise TrailingData(subject=len(data) - reader.pos)
    return weights


def save_weights(path: str, weights: Weights):
    with open(path, "wb") as file:
        file.write(encode_weights(weights))


def load_weights(path: str) -> Weights:
    with open(path, "rb") as file:
        return decode_weights(file.read())


# Data


def load_cifar10_grayscale(paths: Iterable[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Cifar-10 binary batches -> (N, 1, 32, 32) float32 in [0, 1], labels."""
    images, labels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % CIFAR_RECORD:
            raise BadRecordSize(subject=f"{path}: {raw.size} bytes")
        records = raw.reshape(-1, CIFAR_RECORD)
        y = records[:, 0].astype(np.int64)
        if np.any(y > 9):
            raise LabelOutOfRange(subject=f"{path}: {int(y.max())}")
        rgb = records[:, 1:].reshape(-1, 3, PATCH, PATCH).astype(np.float64)
        gray = np.round(LUMA[0] * rgb[:, 0] + LUMA[1] * rgb[:, 1] + LUMA[2] * rgb[:, 2])
        images.append((gray / 255.0).astype(np.float32)[:, None])
        labels.append(y)
        log.info(f"Loaded {len(y)} Cifar-10 records from {path}")
    if not images:
        return np.zeros((0, 1, PATCH, PATCH), dtype=np.float32), np.zeros(0, dtype=np.int64)
    return np.concatenate(images), np.concatenate(labels)


def cifar_batches(directory: str) -> Tuple[List[str], List[str]]:
    """(train, test) batch files of an extracted cifar-10-batches-bin."""
    train = sorted(
        os.path.join(directory, n) for n in os.listdir(directory) if n.startswith("data_batch")
    )
    test = [os.path.join(directory, n) for n in os.listdir(directory) if n.startswith("test_batch")]
    return train, test


def resize_patch(array: np.ndarray, shape: Tuple[int, int] = (PATCH, PATCH)) -> np.ndarray:
    # Bilinear zoom, then edge-pad or crop to the exact shape
    array = np.asarray(array, dtype=np.float64)
    zoomed = ndimage.zoom(array, (shape[0] / array.shape[0], shape[1] / array.shape[1]), order=1)
    zoomed = zoomed[: shape[0], : shape[1]]
    pad = ((0, shape[0] - zoomed.shape[0]), (0, shape[1] - zoomed.shape[1]))
    return np.pad(zoomed, pad, mode="edge")


def patches_from_items(items, n: int, seed: int = 0, size: int = PATCH) -> Tuple[np.ndarray, np.ndarray]:
    """Balanced hyperbola (1) / background (0) patches from labelled
    (index, image, boxes) items."""
    rng = np.random.default_rng(seed)
    positives = [(img, b) for _, img, boxes in items for b in boxes if b.is_valid()]
    if not positives:
        return np.zeros((0, 1, size, size), dtype=np.float32), np.zeros(0, dtype=np.int64)

    X, y = [], []
    for k in range(n // 2):
        img, b = positives[int(rng.integers(len(positives)))]
        # Jitter the crop slightly around the label
        jx, jy = rng.uniform(-0.1, 0.1, 2) * (b.width, b.height)
        x0 = int(np.clip(round(b.xmin + jx), 0, img.width - 1))
        y0 = int(np.clip(round(b.ymin + jy), 0, img.height - 1))
        x1 = int(np.clip(round(b.xmax + jx), x0 + 1, img.width))
        y1 = int(np.clip(round(b.ymax + jy), y0 + 1, img.height))
        X.append(resize_patch(img.pixels[y0:y1, x0:x1] / 255.0, (size, size)))
        y.append(1)

    taken, attempts = 0, 0
    while taken < n - n // 2 and attempts < 100 * n:
        attempts += 1
        _, img, boxes = items[int(rng.integers(len(items)))]
        side = int(rng.integers(size, 2 * size + 1))
        w, h = min(side, img.width), min(side, img.height)
        x0 = int(rng.integers(0, img.width - w + 1))
        y0 = int(rng.integers(0, img.height - h + 1))
        window = BBox(x0, y0, x0 + w, y0 + h)
        if any(iou(window, b) > 0.1 for b in boxes):
            continue
        X.append(resize_patch(img.pixels[y0:y0 + h, x0:x0 + w] / 255.0, (size, size)))
        y.append(0)
        taken += 1
    if taken < n - n // 2:
        log.warning(f"Only {taken} background patches found clear of labels")

    order = rng.permutation(len(y))
    return np.stack(X)[order][:, None].astype(np.float32), np.array(y, dtype=np.int64)[order]


def patches_from_dataset(dirs: Sequence[str], n: int, seed: int = 0, size: int = PATCH):
    items = [item for d in dirs for item in load_dataset(d)]
    return patches_from_items(items, n, seed, size)


def evaluate_classifier(net: Network, X: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    if len(y) == 0:
        return 0.0
    correct = 0
    for start in range(0, len(y), batch_size):
        logits = net.forward(X[start:start + batch_size])
        correct += int((logits.argmax(axis=1) == y[start:start + batch_size]).sum())
    return correct / len(y)


def learning_rate(epoch: int, lr: float, steps: Sequence[int], decay: float) -> float:
    return lr * decay ** sum(1 for s in steps if epoch >= s)


def pretrain_backbone(
    X: np.ndarray,
    y: np.ndarray,
    epochs: int = 30,
    lr: float = 0.01,
    lr_steps: Sequence[int] = (15, 25),
    lr_decay: float = 0.1,
    batch_size: int = 64,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    seed: int = 0,
    n_classes: Optional[int] = None,
) -> Tuple[Network, List[dict]]:
    """Train the backbone with a classification head; returns the network
    and one {epoch, lr, loss, accuracy} record per epoch."""
    n_classes = n_classes or max(10, int(y.max()) + 1 if len(y) else 10)
    net = build_backbone(n_classes, seed)
    optimizer = SGD(lr, momentum, weight_decay)
    rng = np.random.default_rng([seed, 1])
    history = []

    for epoch in tqdm(range(epochs), disable=None, desc="pretrain"):
        optimizer.lr = learning_rate(epoch, lr, lr_steps, lr_decay)
        order = rng.permutation(len(y))
        losses, correct = [], 0
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            logits = net.forward(X[idx])
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise DivergedTraining(subject=f"epoch {epoch}")
            net.backward(dlogits.astype(np.float32))
            optimizer.step(net.params(), net.grads())
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
        record = {
            "epoch": epoch + 1,
            "lr": optimizer.lr,
            "loss": float(np.sum(losses) / max(len(y), 1)),
            "accuracy": correct / max(len(y), 1),
        }
        history.append(record)
        log.info(
            f"Epoch {record['epoch']}/{epochs}: loss {record['loss']:.4f}, "
            f"train accuracy {record['accuracy']:.3f}, lr {record['lr']:.4g}"
        )

    return net, history
