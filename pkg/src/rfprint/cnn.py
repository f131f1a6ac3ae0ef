"""From-scratch CNN: conv/pool/dense/softmax layers with analytic backprop.

Tensors are float64 numpy arrays, images channels-last (batch, h, w, c).
Convolutions use valid padding. Max-pool windows are non-overlapping and any
remainder rows/columns are dropped. Argmax ties (pooling and prediction)
resolve to the lowest row-major index.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumError, EmptyDataset, InvalidArg, IoError, ShapeMismatch
from .optim import OptimizerState, optimizer_step

__all__ = [
    "Conv",
    "MaxPool",
    "Relu",
    "Flatten",
    "Dense",
    "SoftmaxOutput",
    "ModelSpec",
    "Model",
    "TrainConfig",
    "EpochStats",
    "default_model_spec",
    "compact_model_spec",
    "build_model",
    "forward",
    "loss",
    "backward",
    "train",
    "predict",
    "uncertainty",
    "save_model",
    "load_model",
]


# ---------------------------------------------------------------------------
# Architecture description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel_h: int
    kernel_w: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool:
    pool_h: int
    pool_w: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class SoftmaxOutput:
    num_classes: int


LayerSpec = Conv | MaxPool | Relu | Flatten | Dense | SoftmaxOutput


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer descriptors; exactly one SoftmaxOutput, which must be last."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        heads = [l for l in self.layers if isinstance(l, SoftmaxOutput)]
        if len(heads) != 1 or not isinstance(self.layers[-1], SoftmaxOutput):
            raise InvalidArg("spec needs exactly one SoftmaxOutput as the final layer")

    @property
    def num_classes(self) -> int:
        return self.layers[-1].num_classes


def default_model_spec(num_classes: int) -> ModelSpec:
    """Three conv/pool pairs with widening filter counts, then dense + softmax."""
    return ModelSpec(
        layers=(
            Conv(8, 3, 3), Relu(), MaxPool(2, 2),
            Conv(16, 3, 3), Relu(), MaxPool(2, 2),
            Conv(32, 3, 3), Relu(), MaxPool(2, 2),
            Flatten(),
            Dense(64), Relu(),
            SoftmaxOutput(num_classes),
        )
    )


def compact_model_spec(num_classes: int) -> ModelSpec:
    """Slimmer variant for fast experiment sweeps: stride-2 front end."""
    return ModelSpec(
        layers=(
            Conv(6, 5, 5, stride=2), Relu(), MaxPool(2, 2),
            Conv(12, 3, 3), Relu(), MaxPool(2, 2),
            Flatten(),
            Dense(48), Relu(),
            SoftmaxOutput(num_classes),
        )
    )


# ---------------------------------------------------------------------------
# Layer implementations
# ---------------------------------------------------------------------------


class _ConvLayer:
    def __init__(self, spec: Conv, weights: np.ndarray, bias: np.ndarray):
        self.spec = spec
        self.weights = weights  # (kh, kw, c_in, filters)
        self.bias = bias

    def params(self):
        return [self.weights, self.bias]

    def forward(self, x):
        kh, kw, c_in, f = self.weights.shape
        s = self.spec.stride
        b, h, w, c = x.shape
        if c != c_in:
            raise ShapeMismatch(f"conv expects {c_in} channels, got {c}")
        oh = (h - kh) // s + 1
        ow = (w - kw) // s + 1
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
        win = win[:, ::s, ::s]  # (b, oh, ow, c, kh, kw)
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        cols = cols.reshape(b * oh * ow, kh * kw * c_in)
        y = cols @ self.weights.reshape(kh * kw * c_in, f) + self.bias
        return y.reshape(b, oh, ow, f), (x.shape, cols)

    def backward(self, dy, cache):
        x_shape, cols = cache
        kh, kw, c_in, f = self.weights.shape
        s = self.spec.stride
        b, oh, ow, _ = dy.shape
        dy_m = dy.reshape(b * oh * ow, f)
        d_w = (cols.T @ dy_m).reshape(kh, kw, c_in, f)
        d_b = dy_m.sum(axis=0)
        d_cols = dy_m @ self.weights.reshape(kh * kw * c_in, f).T
        d_cols = d_cols.reshape(b, oh, ow, kh, kw, c_in)
        dx = np.zeros(x_shape)
        for i in range(kh):
            for j in range(kw):
                dx[:, i : i + s * oh : s, j : j + s * ow : s, :] += d_cols[:, :, :, i, j, :]
        return dx, [d_w, d_b]


class _MaxPoolLayer:
    def __init__(self, spec: MaxPool):
        self.spec = spec

    def params(self):
        return []

    def forward(self, x):
        ph, pw = self.spec.pool_h, self.spec.pool_w
        b, h, w, c = x.shape
        oh, ow = h // ph, w // pw
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"pool {ph}x{pw} too large for input {h}x{w}")
        xc = x[:, : oh * ph, : ow * pw, :]
        wins = xc.reshape(b, oh, ph, ow, pw, c).transpose(0, 1, 3, 5, 2, 4)
        wins = np.ascontiguousarray(wins).reshape(b, oh, ow, c, ph * pw)
        idx = wins.argmax(axis=-1)  # first index wins ties, row-major in the window
        y = np.take_along_axis(wins, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache):
        x_shape, idx = cache
        ph, pw = self.spec.pool_h, self.spec.pool_w
        b, oh, ow, c = dy.shape
        d_wins = np.zeros((b, oh, ow, c, ph * pw))
        np.put_along_axis(d_wins, idx[..., None], dy[..., None], axis=-1)
        d_wins = d_wins.reshape(b, oh, ow, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(x_shape)
        dx[:, : oh * ph, : ow * pw, :] = d_wins.reshape(b, oh * ph, ow * pw, c)
        return dx, []


class _ReluLayer:
    def params(self):
        return []

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0.0

    def backward(self, dy, cache):
        return dy * cache, []


class _FlattenLayer:
    def params(self):
        return []

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []


class _DenseLayer:
    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = weights  # (in, units)
        self.bias = bias

    def params(self):
        return [self.weights, self.bias]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[0]:
            raise ShapeMismatch(f"dense expects (b, {self.weights.shape[0]}), got {x.shape}")
        return x @ self.weights + self.bias, x

    def backward(self, dy, cache):
        d_w = cache.T @ dy
        d_b = dy.sum(axis=0)
        return dy @ self.weights.T, [d_w, d_b]


class _SoftmaxLayer(_DenseLayer):
    """Final dense projection to class logits followed by a stable softmax."""

    def forward(self, x):
        logits, cache = super().forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs, cache


# ---------------------------------------------------------------------------
# Model assembly
# ---------------------------------------------------------------------------


@dataclass
class Model:
    spec: ModelSpec
    input_shape: tuple[int, int, int]
    layers: list = field(repr=False, default_factory=list)
    rng_seed: int = 0

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_model(spec: ModelSpec, input_shape: tuple[int, int, int], seed: int = 0) -> Model:
    """Instantiate layers and seeded Glorot-uniform weights, chain-checking shapes."""
    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    if h < 1 or w < 1 or c < 1:
        raise ShapeMismatch(f"bad input shape {input_shape}")
    layers = []
    flat: int | None = None
    for ls in spec.layers:
        if isinstance(ls, Conv):
            if flat is not None:
                raise ShapeMismatch("conv layer after flatten")
            kh, kw, s = ls.kernel_h, ls.kernel_w, ls.stride
            if kh > h or kw > w:
                raise ShapeMismatch(f"kernel {kh}x{kw} larger than input {h}x{w}")
            weights = _glorot(rng, (kh, kw, c, ls.filters),
                              fan_in=kh * kw * c, fan_out=kh * kw * ls.filters)
            layers.append(_ConvLayer(ls, weights, np.zeros(ls.filters)))
            h, w, c = (h - kh) // s + 1, (w - kw) // s + 1, ls.filters
        elif isinstance(ls, MaxPool):
            if flat is not None:
                raise ShapeMismatch("pool layer after flatten")
            if h // ls.pool_h < 1 or w // ls.pool_w < 1:
                raise ShapeMismatch(f"pool {ls.pool_h}x{ls.pool_w} too large for {h}x{w}")
            layers.append(_MaxPoolLayer(ls))
            h, w = h // ls.pool_h, w // ls.pool_w
        elif isinstance(ls, Relu):
            layers.append(_ReluLayer())
        elif isinstance(ls, Flatten):
            if flat is not None:
                raise ShapeMismatch("duplicate flatten layer")
            flat = h * w * c
            layers.append(_FlattenLayer())
        elif isinstance(ls, Dense):
            if flat is None:
                raise ShapeMismatch("dense layer before flatten")
            weights = _glorot(rng, (flat, ls.units), fan_in=flat, fan_out=ls.units)
            layers.append(_DenseLayer(weights, np.zeros(ls.units)))
            flat = ls.units
        elif isinstance(ls, SoftmaxOutput):
            if flat is None:
                raise ShapeMismatch("softmax output before flatten")
            weights = _glorot(rng, (flat, ls.num_classes),
                              fan_in=flat, fan_out=ls.num_classes)
            layers.append(_SoftmaxLayer(weights, np.zeros(ls.num_classes)))
            flat = ls.num_classes
        else:  # pragma: no cover - exhaustive over LayerSpec
            raise InvalidArg(f"unknown layer spec {ls!r}")
    return Model(spec=spec, input_shape=input_shape, layers=layers, rng_seed=seed)


def _check_batch(model: Model, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"batch {batch.shape} vs model input {model.input_shape}")
    return batch


def _forward_cached(model: Model, batch: np.ndarray):
    caches = []
    x = batch
    for layer in model.layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, shape (batch, num_classes)."""
    probs, _ = _forward_cached(model, _check_batch(model, batch))
    return probs


def loss(probs: np.ndarray, labels: np.ndarray, epsilon: float = 1e-12) -> float:
    """Categorical cross-entropy, mean over the batch, with probability clamp."""
    if probs.shape != labels.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    if not epsilon > 0:
        raise InvalidArg("epsilon must be positive")
    return float(-np.mean(np.sum(labels * np.log(np.maximum(probs, epsilon)), axis=1)))


def backward(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    epsilon: float = 1e-12,
) -> list[np.ndarray]:
    """Gradients of the clamped cross-entropy w.r.t. every parameter.

    When a sample's true-class probability is at or below the clamp, its loss
    term is constant, so that sample contributes zero gradient.
    """
    batch = _check_batch(model, batch)
    probs, caches = _forward_cached(model, batch)
    if labels.shape != probs.shape:
        raise ShapeMismatch(f"labels {labels.shape} vs probs {probs.shape}")
    b = batch.shape[0]
    active = (probs * labels).sum(axis=1) > epsilon
    d_logits = (probs - labels) * (active[:, None] / b)

    grads: list[list[np.ndarray]] = []
    dy = d_logits
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        if isinstance(layer, _SoftmaxLayer):
            # dy arriving here is already d(loss)/d(logits).
            d_w = cache.T @ dy
            d_b = dy.sum(axis=0)
            grads.append([d_w, d_b])
            dy = dy @ layer.weights.T
        else:
            dy, layer_grads = layer.backward(dy, cache)
            grads.append(layer_grads)
    out: list[np.ndarray] = []
    for layer_grads in reversed(grads):
        out.extend(layer_grads)
    return out


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    shuffle: bool = True
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArg("batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def train(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    optimizer: OptimizerState,
) -> list[EpochStats]:
    """Mini-batch training; mutates the model in place and returns the history.

    Shuffling, initialization and batching are all keyed off explicit seeds, so
    rerunning with the same seeds reproduces the trajectory bit for bit.
    """
    images = _check_batch(model, images)
    n = images.shape[0]
    if n == 0:
        raise EmptyDataset("empty training set")
    if labels.shape != (n, model.num_classes):
        raise ShapeMismatch(f"labels {labels.shape} vs ({n}, {model.num_classes})")

    rng = np.random.default_rng(config.seed)
    params = model.params()
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            xb, yb = images[sel], labels[sel]
            probs, caches = _forward_cached(model, xb)
            total_loss += loss(probs, yb, config.epsilon) * sel.size
            correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())

            active = (probs * yb).sum(axis=1) > config.epsilon
            dy = (probs - yb) * (active[:, None] / sel.size)
            grads: list[list[np.ndarray]] = []
            for layer, cache in zip(reversed(model.layers), reversed(caches)):
                if isinstance(layer, _SoftmaxLayer):
                    grads.append([cache.T @ dy, dy.sum(axis=0)])
                    dy = dy @ layer.weights.T
                else:
                    dy, layer_grads = layer.backward(dy, cache)
                    grads.append(layer_grads)
            flat: list[np.ndarray] = []
            for layer_grads in reversed(grads):
                flat.extend(layer_grads)
            optimizer_step(optimizer, params, flat)
        history.append(EpochStats(epoch=epoch, loss=total_loss / n, accuracy=correct / n))
    return history


def predict(model: Model, image: np.ndarray) -> tuple[int, np.ndarray]:
    """Predicted class (argmax, lowest index on ties) and the probability row."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != model.input_shape:
        raise ShapeMismatch(f"image {image.shape} vs model input {model.input_shape}")
    probs = forward(model, image[None])[0]
    return int(probs.argmax()), probs


def uncertainty(probs: np.ndarray) -> float:
    """Model uncertainty of one prediction: 1 - max probability."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(1.0 - probs.max())


# ---------------------------------------------------------------------------
# Checkpoint container ("RFNN"): 16-byte header, length-prefixed descriptor
# strings, weight tensors (u32 ndim, u64 dims, f64 LE values), CRC32 tail.
# ---------------------------------------------------------------------------

_MAGIC = b"RFNN"
_VERSION = 1


def _descriptors(model: Model) -> list[str]:
    h, w, c = model.input_shape
    out = [f"input:{h}:{w}:{c}", f"seed:{model.rng_seed}"]
    for ls in model.spec.layers:
        if isinstance(ls, Conv):
            out.append(f"conv:{ls.filters}:{ls.kernel_h}:{ls.kernel_w}:{ls.stride}")
        elif isinstance(ls, MaxPool):
            out.append(f"pool:{ls.pool_h}:{ls.pool_w}")
        elif isinstance(ls, Relu):
            out.append("relu")
        elif isinstance(ls, Flatten):
            out.append("flatten")
        elif isinstance(ls, Dense):
            out.append(f"dense:{ls.units}")
        elif isinstance(ls, SoftmaxOutput):
            out.append(f"softmax:{ls.num_classes}")
    return out


def _parse_descriptors(descs: list[str]) -> tuple[tuple[int, int, int], int, ModelSpec]:
    if not descs or not descs[0].startswith("input:"):
        raise ChecksumError("checkpoint missing input descriptor")
    h, w, c = (int(v) for v in descs[0].split(":")[1:])
    seed = 0
    layers: list[LayerSpec] = []
    for d in descs[1:]:
        parts = d.split(":")
        kind, args = parts[0], [int(v) for v in parts[1:]]
        if kind == "seed":
            seed = args[0]
        elif kind == "conv":
            layers.append(Conv(*args))
        elif kind == "pool":
            layers.append(MaxPool(*args))
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "dense":
            layers.append(Dense(args[0]))
        elif kind == "softmax":
            layers.append(SoftmaxOutput(args[0]))
        else:
            raise ChecksumError(f"unknown layer descriptor {d!r}")
    return (h, w, c), seed, ModelSpec(layers=tuple(layers))


def save_model(model: Model, path: str | Path) -> None:
    blob = bytearray(_MAGIC + struct.pack("<H", _VERSION) + b"\x00" * 10)
    descs = _descriptors(model)
    blob += struct.pack("<I", len(descs))
    for d in descs:
        raw = d.encode("utf-8")
        blob += struct.pack("<I", len(raw)) + raw
    params = model.params()
    blob += struct.pack("<I", len(params))
    for p in params:
        blob += struct.pack("<I", p.ndim)
        for dim in p.shape:
            blob += struct.pack("<Q", dim)
        blob += p.astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint: {exc}") from exc


def load_model(path: str | Path) -> Model:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint: {exc}") from exc
    if len(raw) < 24 or raw[:4] != _MAGIC:
        raise ChecksumError(f"{path}: not an RFNN checkpoint")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise ChecksumError(f"{path}: unsupported RFNN version {version}")

    off = 16
    (n_desc,) = struct.unpack_from("<I", raw, off)
    off += 4
    descs = []
    for _ in range(n_desc):
        (length,) = struct.unpack_from("<I", raw, off)
        off += 4
        descs.append(raw[off : off + length].decode("utf-8"))
        off += length
    input_shape, seed, spec = _parse_descriptors(descs)
    model = build_model(spec, input_shape, seed)

    (n_tensors,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = model.params()
    if n_tensors != len(params):
        raise ChecksumError(f"{path}: expected {len(params)} tensors, found {n_tensors}")
    for p in params:
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}Q", raw, off)
        off += 8 * ndim
        if dims != p.shape:
            raise ChecksumError(f"{path}: tensor shape {dims} does not match spec {p.shape}")
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        off += 8 * count
        p[...] = values.reshape(dims)
    return model
