import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from cresnet.errors import BnStatsError, DimensionError, LabelError
from cresnet.nn.calc import Calc
from cresnet.nn.tensor import Function, Tensor

##################################################################################
# im2col / col2im


def im2col(
    x: np.ndarray, k: int, stride: int, padding: int, pad_value: float = 0.0
) -> np.ndarray:
    """
    (N, C, H, W) -> (N, C, k, k, Hout, Wout)

    カーネル内オフセットごとにスライスを切り出す。ループはk*k回だけ
    """
    n, c, h, w = x.shape
    out_h = Calc.conv_out_size(h, k, stride, padding)
    out_w = Calc.conv_out_size(w, k, stride, padding)
    img = np.pad(
        x,
        [(0, 0), (0, 0), (padding, padding), (padding, padding)],
        mode="constant",
        constant_values=pad_value,
    )
    col = np.empty((n, c, k, k, out_h, out_w), dtype=x.dtype)
    for y in range(k):
        y_max = y + stride * out_h
        for xo in range(k):
            x_max = xo + stride * out_w
            col[:, :, y, xo, :, :] = img[:, :, y:y_max:stride, xo:x_max:stride]
    return col


def col2im(
    col: np.ndarray, input_shape: Tuple[int, ...], k: int, stride: int, padding: int
) -> np.ndarray:
    """
    im2col の随伴。重なった位置は加算される
    """
    n, c, h, w = input_shape
    out_h, out_w = col.shape[4], col.shape[5]
    img = np.zeros(
        (n, c, h + 2 * padding + stride - 1, w + 2 * padding + stride - 1),
        dtype=col.dtype,
    )
    for y in range(k):
        y_max = y + stride * out_h
        for xo in range(k):
            x_max = xo + stride * out_w
            img[:, :, y:y_max:stride, xo:x_max:stride] += col[:, :, y, xo, :, :]
    return img[:, :, padding : h + padding, padding : w + padding]


##################################################################################
# convolution


def _check_conv_shapes(x_shape: Tuple[int, ...], w_shape: Tuple[int, ...], stride: int, padding: int) -> None:
    if len(x_shape) != 4:
        raise DimensionError("conv2d", f"input must be NCHW, got {x_shape}", ("ndim",))
    if len(w_shape) != 4 or w_shape[2] != w_shape[3]:
        raise DimensionError(
            "conv2d", f"weight must be (Cout, Cin, k, k), got {w_shape}", ("k",)
        )
    if x_shape[1] != w_shape[1]:
        raise DimensionError(
            "conv2d",
            f"input channels {x_shape[1]} != weight Cin {w_shape[1]}",
            ("C", "Cin"),
        )
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d", f"invalid {stride=} {padding=}", ("stride", "padding"))
    k = w_shape[2]
    for axis, size in (("H", x_shape[2]), ("W", x_shape[3])):
        if size + 2 * padding < k:
            raise DimensionError(
                "conv2d", f"{axis}={size} with {padding=} is smaller than kernel {k}", (axis,)
            )


class Conv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, **kwargs: Any) -> np.ndarray:
        self.stride: int = kwargs["stride"]
        self.padding: int = kwargs["padding"]
        _check_conv_shapes(x.shape, w.shape, self.stride, self.padding)
        self.k = w.shape[2]
        self.x_shape = x.shape
        self.col = im2col(x, self.k, self.stride, self.padding)
        # (Cout, N, Hout, Wout)
        out = np.tensordot(w, self.col, axes=([1, 2, 3], [1, 2, 3]))
        return out.transpose(1, 0, 2, 3)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        _, w = self.inputs
        dw = np.tensordot(grad, self.col, axes=([0, 2, 3], [0, 4, 5]))
        # (Cin, k, k, N, Hout, Wout) -> (N, Cin, k, k, Hout, Wout)
        dcol = np.tensordot(w.data, grad, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
        dx = col2im(dcol, self.x_shape, self.k, self.stride, self.padding)
        return dx, dw


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, weight, stride=stride, padding=padding)


def conv2d_reference(
    x: np.ndarray, weight: np.ndarray, stride: int = 1, padding: int = 0
) -> np.ndarray:
    """
    Naive direct convolution, one output element at a time.
    Only used as an oracle for `conv2d`.
    """
    _check_conv_shapes(x.shape, weight.shape, stride, padding)
    n, _, h, w = x.shape
    c_out, _, k, _ = weight.shape
    out_h = Calc.conv_out_size(h, k, stride, padding)
    out_w = Calc.conv_out_size(w, k, stride, padding)
    img = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)])
    out = np.zeros((n, c_out, out_h, out_w), dtype=np.result_type(x, weight))
    for b in range(n):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    window = img[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, o, i, j] = np.sum(window * weight[o])
    return out


##################################################################################
# batch normalization


@enum.unique
class BnMode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class BnState:
    """
    BatchNormの移動統計量

    running_mean/var は学習対象ではないので Parameter にしない
    """

    channels: int
    eps: float = 1e-5
    momentum: float = 0.1
    mode: BnMode = BnMode.TRAIN
    running_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    running_var: np.ndarray = field(default=None)  # type: ignore[assignment]
    initialized: bool = True

    def __post_init__(self) -> None:
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels, dtype=np.float64)
        if self.running_var is None:
            self.running_var = np.ones(self.channels, dtype=np.float64)
        assert self.eps > 0, f"eps must be positive: {self.eps=}"
        assert 0.0 < self.momentum < 1.0, f"momentum must be in (0,1): {self.momentum=}"
        assert self.running_mean.shape == (self.channels,), f"{self.running_mean.shape=}"
        assert self.running_var.shape == (self.channels,), f"{self.running_var.shape=}"
        assert np.all(self.running_var >= 0), "running_var must be non-negative"

    @classmethod
    def unset(cls, channels: int, **kwargs: Any) -> "BnState":
        """
        Statistics that must come from a train step before eval-mode use
        """
        return cls(channels=channels, initialized=False, **kwargs)

    def copy(self) -> "BnState":
        return BnState(
            channels=self.channels,
            eps=self.eps,
            momentum=self.momentum,
            mode=self.mode,
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            initialized=self.initialized,
        )


class BatchNorm2d(Function):
    def forward(
        self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, **kwargs: Any
    ) -> np.ndarray:
        state: BnState = kwargs["state"]
        if x.ndim != 4:
            raise DimensionError("batchnorm2d", f"input must be NCHW, got {x.shape}", ("ndim",))
        c = x.shape[1]
        if not (gamma.shape == beta.shape == (c,)) or state.channels != c:
            raise DimensionError(
                "batchnorm2d",
                f"channel mismatch: input C={c}, gamma {gamma.shape}, beta {beta.shape}, state {state.channels}",
                ("C",),
            )
        self.mode = state.mode
        if state.mode == BnMode.TRAIN:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            # 正規化は標本分散、移動平均には不偏分散を使う
            unbiased = var * (n / (n - 1)) if n > 1 else var
            m = state.momentum
            state.running_mean = (1 - m) * state.running_mean + m * mean
            state.running_var = (1 - m) * state.running_var + m * unbiased
            state.initialized = True
        else:
            if not state.initialized:
                raise BnStatsError(
                    "batchnorm2d in eval mode: running stats not initialized (no train step yet)"
                )
            mean = state.running_mean.astype(x.dtype)
            var = state.running_var.astype(x.dtype)
        self.inv_std = 1.0 / np.sqrt(var + state.eps)
        self.x_hat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        return gamma[None, :, None, None] * self.x_hat + beta[None, :, None, None]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        _, gamma, _ = self.inputs
        dgamma = np.sum(grad * self.x_hat, axis=(0, 2, 3))
        dbeta = np.sum(grad, axis=(0, 2, 3))
        dx_hat = grad * gamma.data[None, :, None, None]
        inv_std = self.inv_std[None, :, None, None]
        if self.mode == BnMode.EVAL:
            return dx_hat * inv_std, dgamma, dbeta
        n = grad.shape[0] * grad.shape[2] * grad.shape[3]
        sum_dx_hat = np.sum(dx_hat, axis=(0, 2, 3), keepdims=True)
        sum_dx_hat_xhat = np.sum(dx_hat * self.x_hat, axis=(0, 2, 3), keepdims=True)
        dx = inv_std / n * (n * dx_hat - sum_dx_hat - self.x_hat * sum_dx_hat_xhat)
        return dx, dgamma, dbeta


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BnState) -> Tensor:
    return BatchNorm2d.apply(x, gamma, beta, state=state)


##################################################################################
# elementwise / pooling / head


class Relu(Function):
    def forward(self, x: np.ndarray, **kwargs: Any) -> np.ndarray:
        self.mask = x > 0
        # NaNはそのまま流す (0に潰さない)
        return np.maximum(x, 0)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray, **kwargs: Any) -> np.ndarray:
        if a.shape != b.shape:
            axes = tuple(
                name
                for name, sa, sb in zip("NCHW" if a.ndim == 4 else "NC", a.shape, b.shape)
                if sa != sb
            )
            raise DimensionError("add", f"shape mismatch {a.shape} vs {b.shape}", axes)
        return a + b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


class AvgPoolGlobal(Function):
    def forward(self, x: np.ndarray, **kwargs: Any) -> np.ndarray:
        if x.ndim != 4:
            raise DimensionError("avgpool_global", f"input must be NCHW, got {x.shape}", ("ndim",))
        self.x_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        _, _, h, w = self.x_shape
        dx = np.broadcast_to(grad[:, :, None, None] / (h * w), self.x_shape)
        return (np.ascontiguousarray(dx),)


def avgpool_global(x: Tensor) -> Tensor:
    return AvgPoolGlobal.apply(x)


class MaxPool2d(Function):
    def forward(self, x: np.ndarray, **kwargs: Any) -> np.ndarray:
        self.k: int = kwargs["k"]
        self.stride: int = kwargs["stride"]
        self.padding: int = kwargs["padding"]
        if x.ndim != 4:
            raise DimensionError("maxpool2d", f"input must be NCHW, got {x.shape}", ("ndim",))
        self.x_shape = x.shape
        col = im2col(x, self.k, self.stride, self.padding, pad_value=-np.inf)
        n, c, k, _, out_h, out_w = col.shape
        col = col.reshape(n, c, k * k, out_h, out_w)
        self.argmax = np.argmax(col, axis=2)
        return np.take_along_axis(col, self.argmax[:, :, None], axis=2)[:, :, 0]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, c, out_h, out_w = grad.shape
        dcol = np.zeros((n, c, self.k * self.k, out_h, out_w), dtype=grad.dtype)
        np.put_along_axis(dcol, self.argmax[:, :, None], grad[:, :, None], axis=2)
        dcol = dcol.reshape(n, c, self.k, self.k, out_h, out_w)
        return (col2im(dcol, self.x_shape, self.k, self.stride, self.padding),)


def maxpool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    return MaxPool2d.apply(x, k=k, stride=stride, padding=padding)


class Linear(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray, **kwargs: Any) -> np.ndarray:
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
            raise DimensionError(
                "linear", f"input {x.shape} does not match weight {w.shape}", ("Cin",)
            )
        if b.shape != (w.shape[0],):
            raise DimensionError("linear", f"bias {b.shape} does not match weight {w.shape}", ("Cout",))
        return x @ w.T + b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        x, w, _ = self.inputs
        return grad @ w.data, grad.T @ x.data, grad.sum(axis=0)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Linear.apply(x, weight, bias)


class SoftmaxCrossEntropy(Function):
    def forward(self, logits: np.ndarray, **kwargs: Any) -> np.ndarray:
        labels = np.asarray(kwargs["labels"], dtype=np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimensionError(
                "softmax_cross_entropy",
                f"logits {logits.shape} vs labels {labels.shape}",
                ("N",),
            )
        k = logits.shape[1]
        bad = (labels < 0) | (labels >= k)
        if np.any(bad):
            raise LabelError(
                f"label {int(labels[bad][0])} out of range [0, {k}) at index {int(np.argmax(bad))}"
            )
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - log_z
        self.labels = labels
        self.prob = np.exp(log_p)
        n = logits.shape[0]
        return np.asarray(-log_p[np.arange(n), labels].mean())

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n = self.prob.shape[0]
        dlogits = self.prob.copy()
        dlogits[np.arange(n), self.labels] -= 1.0
        return (dlogits * (grad / n),)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    return SoftmaxCrossEntropy.apply(logits, labels=labels)


class Sum(Function):
    def forward(self, x: np.ndarray, **kwargs: Any) -> np.ndarray:
        self.x_shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.full(self.x_shape, grad, dtype=grad.dtype),)


def tensor_sum(x: Tensor) -> Tensor:
    return Sum.apply(x)


##################################################################################
# initialization


def kaiming_normal(
    shape: Tuple[int, ...], rng: np.random.Generator, dtype: Optional[np.dtype] = None
) -> np.ndarray:
    std = Calc.kaiming_std(Calc.fan_in(shape))
    logging.debug(f"kaiming_normal: {shape=} {std=:.5f}")
    data = rng.normal(0.0, std, size=shape)
    return data.astype(dtype) if dtype is not None else data
