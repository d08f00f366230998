"""Dense NCHW tensor operations with hand-written backward passes.

Tensors are plain 4-D numpy arrays in (batch, channel, height, width)
order.  Everything runs in the dtype of its inputs: float32 is the
production dtype, float64 is used by the gradient-check test surface.
All backward functions return gradients of a scalar that is the
sum-weighted output, i.e. they consume an upstream ``grad_out`` of the
same shape as the forward output.

Convolutions are "same" zero-padded, stride 1, odd square kernels: the
fully convolutional network must preserve frame geometry.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

_scratch = threading.local()


def _scratch_buffer(shape: tuple, dtype) -> np.ndarray:
    # reusing one buffer per (shape, dtype) avoids ~40 ms of page-fault cost
    # per conv call; thread-local keeps the ops safe for concurrent callers
    pool = getattr(_scratch, "pool", None)
    if pool is None:
        pool = _scratch.pool = {}
    key = (shape, np.dtype(dtype).str)
    buf = pool.get(key)
    if buf is None:
        buf = pool[key] = np.empty(shape, dtype=dtype)
    return buf


@dataclass
class ConvParams:
    """Convolution weights (Cout, Cin, Kh, Kw) and bias (Cout,)."""

    weights: np.ndarray
    bias: np.ndarray


@dataclass
class BatchNormParams:
    """Per-channel affine batch-norm parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9


def _check_nchw(x: np.ndarray, who: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{who}: expected 4-D (N, C, H, W) array, got shape {x.shape}")


def _offset_stack(x: np.ndarray, k: int) -> np.ndarray:
    # (N, C, H, W) -> (N, C*K*K, H*W): plane [c*K*K + ky*K + kx] holds the
    # zero-padded input shifted by the kernel offset (ky, kx). Pure slice
    # copies; the batched GEMM against it yields NCHW output directly.
    # The returned scratch buffer is only valid until the next conv call
    # on the same thread.
    n, c, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    stack = _scratch_buffer((n, c, k * k, h, w), x.dtype)
    for ky in range(k):
        for kx in range(k):
            stack[:, :, ky * k + kx] = xp[:, :, ky : ky + h, kx : kx + w]
    return stack.reshape(n, c * k * k, h * w)


def _conv_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # core kernel: same-padded stride-1 cross-correlation, no bias
    n, _, h, wd = x.shape
    cout, cin, k, _ = w.shape
    stack = _offset_stack(x, k)
    y = np.matmul(w.reshape(cout, cin * k * k)[None], stack)  # (N, Cout, H*W)
    return y.reshape(n, cout, h, wd)


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Same-padded stride-1 cross-correlation plus bias."""
    _check_nchw(x, "conv2d_forward")
    w = params.weights
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 != 1:
        raise ShapeError(f"conv2d_forward: weights must be (Cout, Cin, K, K) with odd K, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d_forward: input channels {x.shape[1]} (input {x.shape}) do not match "
            f"weight Cin {w.shape[1]} (weights {w.shape})"
        )
    y = _conv_same(x, w)
    y += params.bias[None, :, None, None]
    return y


def conv2d_backward(
    x: np.ndarray, params: ConvParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights and bias.

    The input gradient is itself a same-padded convolution: grad_out
    against the spatially flipped, channel-transposed weights. The weight
    gradient contracts grad_out with the shifted-input stack (recomputed
    from x; caching it for every layer would cost too much memory).
    """
    _check_nchw(x, "conv2d_backward")
    _check_nchw(grad_out, "conv2d_backward")
    w = params.weights
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    if c != cin:
        raise ShapeError(
            f"conv2d_backward: input channels {c} (input {x.shape}) do not match "
            f"weight Cin {cin} (weights {w.shape})"
        )
    if grad_out.shape != (n, cout, h, wd):
        raise ShapeError(
            f"conv2d_backward: grad_out shape {grad_out.shape} does not match "
            f"forward output {(n, cout, h, wd)}"
        )
    w_rot = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    grad_x = _conv_same(grad_out, w_rot)

    stack = _offset_stack(x, k)  # (N, Cin*K*K, H*W)
    g_r = grad_out.reshape(n, cout, h * wd)
    grad_w = np.matmul(g_r, stack.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


@dataclass
class BatchStats:
    """Batch mean/variance and the normalized plane from a train-mode forward."""

    mean: np.ndarray
    var: np.ndarray
    xhat: np.ndarray


def batchnorm_forward(
    x: np.ndarray, params: BatchNormParams, mode: str = "train"
) -> tuple[np.ndarray, BatchStats | None]:
    """Channel-wise batch normalization.

    Train mode normalizes with batch statistics and updates the running
    statistics in place; infer mode normalizes with the running
    statistics and returns ``None`` for the batch stats.
    """
    _check_nchw(x, "batchnorm_forward")
    c = x.shape[1]
    if params.gamma.shape != (c,):
        raise ShapeError(
            f"batchnorm_forward: input has {c} channels, params have {params.gamma.shape[0]}"
        )
    if mode == "train":
        if x.shape[0] * x.shape[2] * x.shape[3] < 2:
            raise ShapeError("batchnorm_forward: train mode needs N*H*W >= 2 samples per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = params.momentum
        params.running_mean[:] = m * params.running_mean + (1.0 - m) * mean
        params.running_var[:] = m * params.running_var + (1.0 - m) * var
    elif mode == "infer":
        mean = params.running_mean
        var = params.running_var
    else:
        raise ShapeError(f"batchnorm_forward: unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    xhat = xhat.astype(x.dtype, copy=False)
    y = params.gamma[None, :, None, None] * xhat + params.beta[None, :, None, None]
    stats = BatchStats(mean, var, xhat) if mode == "train" else None
    return y.astype(x.dtype, copy=False), stats


def batchnorm_backward(
    x: np.ndarray, params: BatchNormParams, stats: BatchStats, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the train-mode forward w.r.t. input, gamma and beta."""
    _check_nchw(x, "batchnorm_backward")
    if grad_out.shape != x.shape:
        raise ShapeError(
            f"batchnorm_backward: grad_out shape {grad_out.shape} != input shape {x.shape}"
        )
    count = x.shape[0] * x.shape[2] * x.shape[3]
    inv_std = 1.0 / np.sqrt(stats.var + params.epsilon)
    xhat = stats.xhat

    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))

    # dL/dx = (gamma/std) / n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    dxhat = grad_out * params.gamma[None, :, None, None]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    grad_x = (inv_std[None, :, None, None] / count) * (
        count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
    )
    return grad_x.astype(x.dtype, copy=False), grad_gamma, grad_beta


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise ShapeError(f"relu_backward: grad_out shape {grad_out.shape} != input shape {x.shape}")
    return grad_out * (x > 0)


def add_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add_forward: shapes differ: {a.shape} vs {b.shape}")
    return a + b


def add_backward(grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return grad_out, grad_out


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the channel axis; a's channels come first."""
    _check_nchw(a, "concat_channels")
    _check_nchw(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: N/H/W differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_backward(grad_out: np.ndarray, channels_a: int) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.ascontiguousarray(grad_out[:, :channels_a]),
        np.ascontiguousarray(grad_out[:, channels_a:]),
    )


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all elements of the squared difference, plus its gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff, dtype=np.float64))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype, copy=False)
