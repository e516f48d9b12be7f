"""Forward and backward passes for every layer primitive in the network.

Conventions:
  - conv2d is cross-correlation (no kernel flip), stride 1, zero 'same'
    padding, odd square kernels; kernel layout [kh, kw, c_in, c_out].
  - maxpool is 2x2 window, stride 2; ties break to the first element of
    the window in row-major scan order.
  - transposed conv is 2x2 kernel, stride 2 (each input element scatters
    kernel*value); kernel layout [kh, kw, c_out, c_in].
  - every forward returns (output, tape); the tape carries exactly the
    cached values its matching backward needs. Tapes make each backward
    pass testable in isolation; there is no global autograd graph.

All functions are dtype-generic (float32 in production; the finite
difference harness runs them in float64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

POOL_WINDOW = 2
POOL_STRIDE = 2


@dataclass
class ConvParams:
    kernel: np.ndarray  # [kh, kw, c_in, c_out], kh == kw odd
    bias: np.ndarray    # [c_out]


@dataclass
class TransposeConvParams:
    kernel: np.ndarray  # [kh, kw, c_out, c_in], kh == kw == stride == 2
    bias: np.ndarray    # [c_out]


@dataclass
class DenseParams:
    weight: np.ndarray  # [n_in, n_out]
    bias: np.ndarray    # [n_out]


@dataclass
class ConvTape:
    cols: np.ndarray      # im2col matrix [b*h*w, kh*kw*c_in]
    kernel: np.ndarray
    x_shape: tuple


@dataclass
class PoolTape:
    argmax: np.ndarray    # [b, h/2, w/2, c], window-local index 0..3
    x_shape: tuple


@dataclass
class TConvTape:
    x: np.ndarray
    kernel: np.ndarray


@dataclass
class DenseTape:
    x: np.ndarray
    weight: np.ndarray


@dataclass
class ReluTape:
    mask: np.ndarray      # boolean, True where input > 0


def conv2d_forward(x: np.ndarray, p: ConvParams) -> tuple[np.ndarray, ConvTape]:
    """Stride-1 'same' cross-correlation plus per-channel bias.

    Implemented as im2col + one matrix product; the column matrix is kept
    on the tape because backward reuses it for the kernel gradient.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got {x.shape}")
    kh, kw, c_in, c_out = p.kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be odd and square, got {kh}x{kw}")
    if x.shape[3] != c_in:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {c_in}")
    if p.bias.shape != (c_out,):
        raise ShapeError(f"bias shape {p.bias.shape} != ({c_out},)")
    b, h, w, _ = x.shape
    pad = (kh - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    # [b,h,w,c,kh,kw] -> [b,h,w,kh,kw,c] so column order matches kernel layout
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    cols = cols.reshape(b * h * w, kh * kw * c_in)
    y = cols @ p.kernel.reshape(kh * kw * c_in, c_out) + p.bias
    return y.reshape(b, h, w, c_out), ConvTape(cols, p.kernel, x.shape)


def conv2d_backward(grad_y: np.ndarray, tape: ConvTape):
    """Gradients of conv2d_forward: (grad_x, grad_kernel, grad_bias)."""
    kh, kw, c_in, c_out = tape.kernel.shape
    b, h, w, _ = tape.x_shape
    if grad_y.shape != (b, h, w, c_out):
        raise ShapeError(f"grad_y shape {grad_y.shape} != {(b, h, w, c_out)}")
    gy = grad_y.reshape(b * h * w, c_out)
    grad_bias = gy.sum(axis=0)
    grad_kernel = (tape.cols.T @ gy).reshape(tape.kernel.shape)
    # scatter columns back (col2im) to recover grad wrt the padded input
    gcols = (gy @ tape.kernel.reshape(kh * kw * c_in, c_out).T)
    gcols = gcols.reshape(b, h, w, kh, kw, c_in)
    pad = (kh - 1) // 2
    gxp = np.zeros((b, h + 2 * pad, w + 2 * pad, c_in), dtype=grad_y.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + h, j:j + w, :] += gcols[:, :, :, i, j, :]
    grad_x = gxp[:, pad:pad + h, pad:pad + w, :]
    return grad_x, grad_kernel, grad_bias


def _pool_windows(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    h2, w2 = h // POOL_STRIDE, w // POOL_STRIDE
    xw = x.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return xw.reshape(b, h2, w2, 4, c)


def maxpool2d_forward(x: np.ndarray) -> tuple[np.ndarray, PoolTape]:
    """2x2/stride-2 max pool; records the argmax for gradient routing."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be rank 4, got {x.shape}")
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool needs even spatial extents, got {h}x{w}")
    xw = _pool_windows(x)
    # np.argmax returns the first maximum; window elements are ordered
    # (0,0),(0,1),(1,0),(1,1), i.e. row-major scan, which fixes ties.
    idx = xw.argmax(axis=3)
    y = np.take_along_axis(xw, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return y, PoolTape(idx, x.shape)


def maxpool2d_backward(grad_y: np.ndarray, tape: PoolTape) -> np.ndarray:
    """Route each output gradient to its recorded argmax position."""
    b, h, w, c = tape.x_shape
    h2, w2 = h // 2, w // 2
    if grad_y.shape != (b, h2, w2, c):
        raise ShapeError(f"grad_y shape {grad_y.shape} != {(b, h2, w2, c)}")
    g = np.zeros((b, h2, w2, 4, c), dtype=grad_y.dtype)
    np.put_along_axis(g, tape.argmax[:, :, :, None, :], grad_y[:, :, :, None, :], axis=3)
    g = g.reshape(b, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(g.reshape(b, h, w, c))


def conv2d_transpose_forward(x: np.ndarray, p: TransposeConvParams):
    """Stride-2 transposed convolution: output spatial extents exactly double.

    With kernel size == stride the scattered contributions never overlap,
    so each output slice y[:, di::2, dj::2] is a plain channel mix of x.
    """
    if x.ndim != 4:
        raise ShapeError(f"transpose-conv input must be rank 4, got {x.shape}")
    kh, kw, c_out, c_in = p.kernel.shape
    if (kh, kw) != (POOL_STRIDE, POOL_STRIDE):
        raise ShapeError(f"transpose-conv kernel must be 2x2, got {kh}x{kw}")
    if x.shape[3] != c_in:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {c_in}")
    if p.bias.shape != (c_out,):
        raise ShapeError(f"bias shape {p.bias.shape} != ({c_out},)")
    b, h, w, _ = x.shape
    y = np.empty((b, 2 * h, 2 * w, c_out), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            y[:, di::2, dj::2, :] = x @ p.kernel[di, dj].T
    y += p.bias
    return y, TConvTape(x, p.kernel)


def conv2d_transpose_backward(grad_y: np.ndarray, tape: TConvTape):
    """Gradients of the scatter map: (grad_x, grad_kernel, grad_bias)."""
    kh, kw, c_out, c_in = tape.kernel.shape
    b, h, w, _ = tape.x.shape
    if grad_y.shape != (b, 2 * h, 2 * w, c_out):
        raise ShapeError(f"grad_y shape {grad_y.shape} != {(b, 2 * h, 2 * w, c_out)}")
    grad_bias = grad_y.sum(axis=(0, 1, 2))
    grad_x = np.zeros_like(tape.x)
    grad_kernel = np.zeros_like(tape.kernel)
    for di in range(kh):
        for dj in range(kw):
            gy_s = grad_y[:, di::2, dj::2, :]
            grad_x += gy_s @ tape.kernel[di, dj]
            grad_kernel[di, dj] = np.einsum("bhwo,bhwc->oc", gy_s, tape.x)
    return grad_x, grad_kernel, grad_bias


def dense_forward(x: np.ndarray, p: DenseParams) -> tuple[np.ndarray, DenseTape]:
    """y = x W + bias, rows are batch samples."""
    if x.ndim != 2:
        raise ShapeError(f"dense input must be rank 2, got {x.shape}")
    n_in, n_out = p.weight.shape
    if x.shape[1] != n_in:
        raise ShapeError(f"input width {x.shape[1]} != weight rows {n_in}")
    if p.bias.shape != (n_out,):
        raise ShapeError(f"bias shape {p.bias.shape} != ({n_out},)")
    return x @ p.weight + p.bias, DenseTape(x, p.weight)


def dense_backward(grad_y: np.ndarray, tape: DenseTape):
    b, n_in = tape.x.shape
    n_out = tape.weight.shape[1]
    if grad_y.shape != (b, n_out):
        raise ShapeError(f"grad_y shape {grad_y.shape} != {(b, n_out)}")
    grad_x = grad_y @ tape.weight.T
    grad_w = tape.x.T @ grad_y
    grad_b = grad_y.sum(axis=0)
    return grad_x, grad_w, grad_b


def relu(x: np.ndarray) -> tuple[np.ndarray, ReluTape]:
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0)), ReluTape(mask)


def relu_backward(grad_y: np.ndarray, tape: ReluTape) -> np.ndarray:
    """Gradient masked where the input was <= 0 (0 at exactly 0)."""
    if grad_y.shape != tape.mask.shape:
        raise ShapeError(f"grad_y shape {grad_y.shape} != {tape.mask.shape}")
    return np.where(tape.mask, grad_y, grad_y.dtype.type(0))


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch with a max-subtracted softmax.

    Returns (loss, probs, grad_logits) where grad_logits is the gradient
    of the mean loss, i.e. (probs - onehot) / batch.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be rank 2, got {logits.shape}")
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels must lie in 0..{k - 1}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1, keepdims=True)
    probs = e / denom
    rows = np.arange(b)
    # -log p = logsumexp(z) - z[label]; avoids log(0) for saturated rows
    per_sample = np.log(denom[:, 0]) - z[rows, labels]
    loss = float(per_sample.mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= b
    return loss, probs.astype(logits.dtype), grad.astype(logits.dtype)
