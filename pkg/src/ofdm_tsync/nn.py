"""Small 1-D CNN written directly in numpy (float64 throughout).

Architecture, for an input of length ``2(Nu - 1)`` with one channel::

    conv1  kernel 2N,  1 -> C     (valid)   -> (2Ng - 1, C)
    bn1 + ReLU
    conv2  kernel Ng,  C -> C     (valid)   -> (Ng, C)
    bn2 + ReLU
    flatten (row-major over (position, channel)) -> C*Ng
    dense  C*Ng -> Ng, sigmoid
    softmax                                -> Ng

Activations are laid out ``(batch, length, channels)``.

Two training losses are available against one-hot targets, both averaged
over the batch:

``"bce"`` (default)
    per-class binary cross-entropy on the sigmoid outputs.
``"ce"``
    categorical cross-entropy ``-sum t log O`` on the softmax output.

Because the softmax sees sigmoid outputs confined to (0, 1), ``"ce"`` can
never drop below ``log(1 + (Ng - 1)/e)`` and its gradients are weak; it is
kept for completeness. Both losses leave ``argmax O`` as the decision.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError, FormatError, TsyncError, UnsupportedVersionError

TRAINING = "training"
INFERENCE = "inference"

PARAM_NAMES = (
    "conv1.kernel", "conv1.bias",
    "bn1.gamma", "bn1.beta",
    "conv2.kernel", "conv2.bias",
    "bn2.gamma", "bn2.beta",
    "dense.weights", "dense.bias",
)
BUFFER_NAMES = ("bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var")


@dataclass
class Conv1dLayer:
    kernel: np.ndarray  # (kernel_size, in_channels, out_channels)
    bias: np.ndarray

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[2]


@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if not 0 < self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in (0, 1), got {self.momentum}")

    @classmethod
    def fresh(cls, channels: int, epsilon: float = 1e-5, momentum: float = 0.9) -> "BatchNormLayer":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels),
                   epsilon, momentum)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray


@dataclass
class NetworkModel:
    n: int
    ng: int
    conv1: Conv1dLayer
    bn1: BatchNormLayer
    conv2: Conv1dLayer
    bn2: BatchNormLayer
    dense: DenseLayer
    mode: str = INFERENCE

    @property
    def input_len(self) -> int:
        return 2 * (self.n + self.ng - 1)

    @property
    def channels(self) -> int:
        return self.conv1.out_channels

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name, in serialization order (live references)."""
        return {
            "conv1.kernel": self.conv1.kernel, "conv1.bias": self.conv1.bias,
            "bn1.gamma": self.bn1.gamma, "bn1.beta": self.bn1.beta,
            "conv2.kernel": self.conv2.kernel, "conv2.bias": self.conv2.bias,
            "bn2.gamma": self.bn2.gamma, "bn2.beta": self.bn2.beta,
            "dense.weights": self.dense.weights, "dense.bias": self.dense.bias,
        }

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            "bn1.running_mean": self.bn1.running_mean, "bn1.running_var": self.bn1.running_var,
            "bn2.running_mean": self.bn2.running_mean, "bn2.running_var": self.bn2.running_var,
        }

    def with_parameters(self, params: dict[str, np.ndarray]) -> "NetworkModel":
        """Copy of this model with trainable arrays replaced; buffers are copied."""
        bufs = {k: v.copy() for k, v in self.buffers().items()}
        return NetworkModel(
            n=self.n, ng=self.ng,
            conv1=Conv1dLayer(params["conv1.kernel"], params["conv1.bias"]),
            bn1=BatchNormLayer(params["bn1.gamma"], params["bn1.beta"], bufs["bn1.running_mean"],
                               bufs["bn1.running_var"], self.bn1.epsilon, self.bn1.momentum),
            conv2=Conv1dLayer(params["conv2.kernel"], params["conv2.bias"]),
            bn2=BatchNormLayer(params["bn2.gamma"], params["bn2.beta"], bufs["bn2.running_mean"],
                               bufs["bn2.running_var"], self.bn2.epsilon, self.bn2.momentum),
            dense=DenseLayer(params["dense.weights"], params["dense.bias"]),
            mode=self.mode,
        )

    def copy(self) -> "NetworkModel":
        return self.with_parameters({k: v.copy() for k, v in self.parameters().items()})

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-sample activation shapes along the forward chain."""
        c = self.channels
        l1 = self.input_len - self.conv1.kernel_size + 1
        l2 = l1 - self.conv2.kernel_size + 1
        return [
            ("input", (self.input_len, 1)),
            ("conv1", (l1, c)),
            ("conv2", (l2, c)),
            ("flatten", (l2 * c,)),
            ("dense", (self.dense.weights.shape[1],)),
            ("output", (self.dense.weights.shape[1],)),
        ]


# -- construction -----------------------------------------------------------------

def init_params(n: int, ng: int, rng: np.random.Generator, channels: int = 4,
                bn_epsilon: float = 1e-5, bn_momentum: float = 0.9) -> NetworkModel:
    """He-normal conv kernels, Glorot-uniform dense weights, zero biases."""
    if n < 1 or ng < 1 or channels < 1:
        raise ConfigurationError(f"bad network dims n={n}, ng={ng}, channels={channels}")
    k1, k2 = 2 * n, ng
    conv1 = Conv1dLayer(rng.normal(0.0, np.sqrt(2.0 / k1), size=(k1, 1, channels)), np.zeros(channels))
    conv2 = Conv1dLayer(rng.normal(0.0, np.sqrt(2.0 / (k2 * channels)), size=(k2, channels, channels)),
                        np.zeros(channels))
    fan_in, fan_out = channels * ng, ng
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    dense = DenseLayer(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out))
    return NetworkModel(n, ng, conv1, BatchNormLayer.fresh(channels, bn_epsilon, bn_momentum),
                        conv2, BatchNormLayer.fresh(channels, bn_epsilon, bn_momentum), dense)


# -- layer primitives -------------------------------------------------------------

def conv1d_valid(x: np.ndarray, layer: Conv1dLayer) -> np.ndarray:
    """Stride-1 valid convolution (cross-correlation form) of ``(B, L, Cin)`` input."""
    out, _ = _conv_forward(x, layer)
    return out


def _conv_forward(x, layer):
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    b, length, cin = x.shape
    k = layer.kernel_size
    if cin != layer.in_channels:
        raise DimensionError(f"input has {cin} channels, layer expects {layer.in_channels}")
    if length < k:
        raise DimensionError(f"input length {length} shorter than kernel {k}")
    lout = length - k + 1
    # (B, Lout, Cin, K) -> rows of (Cin*K) matching kernel laid out as (Cin, K, Cout)
    cols = sliding_window_view(x, k, axis=1).reshape(b * lout, cin * k)
    wmat = layer.kernel.transpose(1, 0, 2).reshape(cin * k, -1)
    out = (cols @ wmat).reshape(b, lout, -1) + layer.bias
    return (out[0] if squeeze else out), cols


def _conv_backward(dout, cols, x_shape, layer, need_input_grad):
    b, lout, cout = dout.shape
    cin, k = layer.in_channels, layer.kernel_size
    d2 = dout.reshape(b * lout, cout)
    dw = (cols.T @ d2).reshape(cin, k, cout).transpose(1, 0, 2)
    db = d2.sum(axis=0)
    dx = None
    if need_input_grad:
        dx = np.zeros(x_shape)
        for j in range(k):
            dx[:, j : j + lout, :] += dout @ layer.kernel[j].T
    return dx, dw, db


def batchnorm_forward(x: np.ndarray, layer: BatchNormLayer, mode: str):
    """Per-channel normalisation over (batch, length). Returns ``(out, cache)``."""
    if mode == TRAINING:
        count = x.shape[0] * x.shape[1]
        if x.shape[0] < 2:
            raise ConfigurationError("batch norm in training mode needs batch size >= 2")
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        mom = layer.momentum
        layer.running_mean[...] = mom * layer.running_mean + (1 - mom) * mean
        layer.running_var[...] = mom * layer.running_var + (1 - mom) * var * count / (count - 1)
    elif mode == INFERENCE:
        mean, var = layer.running_mean, layer.running_var
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    xhat = (x - mean) * inv_std
    return layer.gamma * xhat + layer.beta, (xhat, inv_std)


def _batchnorm_backward(dout, cache, layer):
    xhat, inv_std = cache
    count = dout.shape[0] * dout.shape[1]
    dgamma = (dout * xhat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    dxhat = dout * layer.gamma
    dx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
    return dx, dgamma, dbeta


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- network ----------------------------------------------------------------------

@dataclass
class ForwardCache:
    x_shape: tuple
    cols1: np.ndarray
    bn1: tuple
    pre_relu1: np.ndarray
    h1: np.ndarray
    cols2: np.ndarray
    bn2: tuple
    pre_relu2: np.ndarray
    flat: np.ndarray
    logits: np.ndarray
    sig: np.ndarray
    output: np.ndarray
    mode: str = TRAINING
    extras: dict = field(default_factory=dict)


def _as_batch(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1:] != (model.input_len, 1):
        raise DimensionError(f"input shape {x.shape} incompatible with ({model.input_len}, 1)")
    return x


def forward(model: NetworkModel, x: np.ndarray, mode: str | None = None):
    """Run the network on ``(B, 2(Nu-1))`` (or ``(B, 2(Nu-1), 1)``) features.

    Returns ``(output, cache)`` with ``output`` of shape ``(B, Ng)``. Training
    mode uses batch statistics and updates the running statistics in place.
    """
    mode = mode or model.mode
    x = _as_batch(model, x)
    z1, cols1 = _conv_forward(x, model.conv1)
    a1, bn1c = batchnorm_forward(z1, model.bn1, mode)
    h1 = np.maximum(a1, 0.0)
    z2, cols2 = _conv_forward(h1, model.conv2)
    a2, bn2c = batchnorm_forward(z2, model.bn2, mode)
    h2 = np.maximum(a2, 0.0)
    flat = h2.reshape(h2.shape[0], -1)
    if flat.shape[1] != model.dense.weights.shape[0]:
        raise DimensionError(f"flatten size {flat.shape[1]} != dense input {model.dense.weights.shape[0]}")
    logits = flat @ model.dense.weights + model.dense.bias
    sig = sigmoid(logits)
    out = softmax(sig)
    cache = ForwardCache(x.shape, cols1, bn1c, a1, h1, cols2, bn2c, a2, flat, logits, sig, out, mode)
    return out, cache


def predict(model: NetworkModel, x: np.ndarray, batch_size: int = 2048) -> np.ndarray:
    """Inference-mode outputs for an arbitrarily large feature matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    chunks = [forward(model, x[i : i + batch_size], INFERENCE)[0] for i in range(0, x.shape[0], batch_size)]
    if not chunks:
        return np.zeros((0, model.ng))
    return np.concatenate(chunks)


LOSSES = ("bce", "ce")


def cross_entropy(output: np.ndarray, target: np.ndarray) -> float:
    """Batch-mean ``-sum t log O``."""
    return float(-(target * np.log(output)).sum(axis=1).mean())


def binary_cross_entropy(logits: np.ndarray, target: np.ndarray) -> float:
    """Batch-mean of ``sum_j BCE(sigmoid(z_j), t_j)``, computed from the logits."""
    return float((np.logaddexp(0.0, logits) - target * logits).sum(axis=1).mean())


def loss_value(cache: ForwardCache, target: np.ndarray, loss: str = "bce") -> float:
    if loss == "bce":
        return binary_cross_entropy(cache.logits, target)
    if loss == "ce":
        return cross_entropy(cache.output, target)
    raise ConfigurationError(f"unknown loss {loss!r}; choose from {LOSSES}")


def backward(model: NetworkModel, cache: ForwardCache, target: np.ndarray,
             loss: str = "bce") -> dict[str, np.ndarray]:
    """Gradients of the batch-mean ``loss`` w.r.t. every trainable parameter."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != cache.output.shape:
        raise TsyncError(f"target shape {target.shape} != output shape {cache.output.shape}")
    if cache.mode != TRAINING:
        raise TsyncError("backward needs a cache from a training-mode forward pass")
    b = target.shape[0]
    if loss == "bce":
        dz = (cache.sig - target) / b
    elif loss == "ce":
        dsig = (cache.output - target) / b  # d loss / d softmax input
        dz = dsig * cache.sig * (1.0 - cache.sig)
    else:
        raise ConfigurationError(f"unknown loss {loss!r}; choose from {LOSSES}")
    g = {
        "dense.weights": cache.flat.T @ dz,
        "dense.bias": dz.sum(axis=0),
    }
    dh2 = (dz @ model.dense.weights.T).reshape(cache.pre_relu2.shape)
    da2 = dh2 * (cache.pre_relu2 > 0)
    dz2, g["bn2.gamma"], g["bn2.beta"] = _batchnorm_backward(da2, cache.bn2, model.bn2)
    dh1, g["conv2.kernel"], g["conv2.bias"] = _conv_backward(dz2, cache.cols2, cache.h1.shape, model.conv2, True)
    da1 = dh1 * (cache.pre_relu1 > 0)
    dz1, g["bn1.gamma"], g["bn1.beta"] = _batchnorm_backward(da1, cache.bn1, model.bn1)
    _, g["conv1.kernel"], g["conv1.bias"] = _conv_backward(dz1, cache.cols1, cache.x_shape, model.conv1, False)
    return {name: g[name] for name in PARAM_NAMES}


# -- optimiser --------------------------------------------------------------------

@dataclass
class TrainState:
    step: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def for_model(cls, model: NetworkModel, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps_adam=1e-8):
        zeros = {k: np.zeros_like(v) for k, v in model.parameters().items()}
        return cls(0, zeros, {k: v.copy() for k, v in zeros.items()}, learning_rate, beta1, beta2, eps_adam)


def adam_step(model: NetworkModel, grads: dict[str, np.ndarray], state: TrainState):
    """One bias-corrected Adam update. Inputs are left untouched; returns ``(model, state)``."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in model.parameters().items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.first_moment[name] + (1 - b1) * g
        v = b2 * state.second_moment[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_adam)
        m_new[name], v_new[name] = m, v
    new_state = TrainState(t, m_new, v_new, state.learning_rate, b1, b2, state.eps_adam)
    return model.with_parameters(new_params), new_state


# -- serialization ----------------------------------------------------------------
#
# Layout (all little-endian):
#   8 bytes   magic  b"OFDMCNN\x00"
#   u32       format version (1)
#   u32 x 5   n, ng, channels, conv1 kernel size, conv2 kernel size
#   f64 x 2   bn epsilon, bn momentum
#   f64[]     arrays in PARAM_NAMES then BUFFER_NAMES order, C-contiguous

MAGIC = b"OFDMCNN\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI5I2d")


def serialize(model: NetworkModel) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, model.n, model.ng, model.channels,
                           model.conv1.kernel_size, model.conv2.kernel_size,
                           model.bn1.epsilon, model.bn1.momentum))
    arrays = {**model.parameters(), **model.buffers()}
    for name in PARAM_NAMES + BUFFER_NAMES:
        buf.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return buf.getvalue()


def deserialize(data: bytes) -> NetworkModel:
    if len(data) < _HEADER.size:
        raise FormatError(f"stream too short for header ({len(data)} bytes)")
    magic, version, n, ng, c, k1, k2, eps, mom = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version} unsupported (expected {FORMAT_VERSION})")
    shapes = {
        "conv1.kernel": (k1, 1, c), "conv1.bias": (c,),
        "bn1.gamma": (c,), "bn1.beta": (c,),
        "conv2.kernel": (k2, c, c), "conv2.bias": (c,),
        "bn2.gamma": (c,), "bn2.beta": (c,),
        "dense.weights": (c * ng, ng), "dense.bias": (ng,),
        "bn1.running_mean": (c,), "bn1.running_var": (c,),
        "bn2.running_mean": (c,), "bn2.running_var": (c,),
    }
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != need:
        raise FormatError(f"stream length {len(data)} != expected {need}")
    offset, arr = _HEADER.size, {}
    for name in PARAM_NAMES + BUFFER_NAMES:
        size = int(np.prod(shapes[name]))
        arr[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shapes[name])
        offset += 8 * size
    return NetworkModel(
        n=n, ng=ng,
        conv1=Conv1dLayer(arr["conv1.kernel"], arr["conv1.bias"]),
        bn1=BatchNormLayer(arr["bn1.gamma"], arr["bn1.beta"], arr["bn1.running_mean"], arr["bn1.running_var"], eps, mom),
        conv2=Conv1dLayer(arr["conv2.kernel"], arr["conv2.bias"]),
        bn2=BatchNormLayer(arr["bn2.gamma"], arr["bn2.beta"], arr["bn2.running_mean"], arr["bn2.running_var"], eps, mom),
        dense=DenseLayer(arr["dense.weights"], arr["dense.bias"]),
    )


def save_model(model: NetworkModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path) -> NetworkModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
