"""Batched numpy kernels for the 1-D conv regressor.

Arrays are (batch, channels, length) unless a function says otherwise;
unbatched (channels, length) inputs are accepted by the forward kernels.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from gyrocal.exceptions import ShapeError

LEAKY_SLOPE = 0.1


def conv_output_length(length: int, kernel_size: int, stride: int) -> int:
    return (length - kernel_size) // stride + 1


def _im2col(x: np.ndarray, kernel_size: int, stride: int) -> np.ndarray:
    # (B, C, S) -> (B, L1, C * m), column index = c * m + j
    win = sliding_window_view(x, kernel_size, axis=-1)[:, :, ::stride, :]
    b, c, l1, m = win.shape
    return win.transpose(0, 2, 1, 3).reshape(b, l1, c * m)


def conv1d_forward(x, kernels, biases, stride: int = 1) -> np.ndarray:
    """Strided cross-correlation summed over input channels, plus a per-filter bias.

    out[f, l] = sum_c sum_j x[c, l * stride + j] * kernels[f, c, j] + biases[f]
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or kernels.ndim != 3:
        raise ShapeError(f"expected input (B, C, S) and kernels (F, C, m), got {x.shape} and {kernels.shape}")
    n_filters, c, m = kernels.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {c}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if x.shape[2] < m:
        raise ShapeError(f"input length {x.shape[2]} shorter than kernel {m}")
    biases = np.asarray(biases, dtype=np.float64)
    if biases.shape != (n_filters,):
        raise ShapeError(f"expected {n_filters} conv biases, got shape {biases.shape}")
    out = (_im2col(x, m, stride) @ kernels.reshape(n_filters, c * m).T + biases).transpose(0, 2, 1)
    return out[0] if single else out


def conv1d_backward(x, kernels, grad_out, stride: int = 1, cols=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a loss w.r.t. conv kernels and biases, given dL/d(out).

    ``cols`` may pass in the im2col matrix of ``x`` to avoid rebuilding it.
    """
    n_filters, c, m = kernels.shape
    if cols is None:
        cols = _im2col(np.asarray(x, dtype=np.float64), m, stride)
    b, l1, cm = cols.shape
    g = grad_out.transpose(0, 2, 1).reshape(b * l1, n_filters)
    d_kernels = (g.T @ cols.reshape(b * l1, cm)).reshape(n_filters, c, m)
    return d_kernels, g.sum(axis=0)


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    x = np.asarray(x, dtype=np.float64)
    if 0.0 <= slope <= 1.0:
        return np.maximum(x, slope * x)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope: float = LEAKY_SLOPE):
    # derivative at exactly 0 taken from the x >= 0 branch
    return np.where(np.asarray(x) >= 0, 1.0, slope)


def max_pool1d(x, pool_size: int) -> np.ndarray:
    """Non-overlapping max pooling along the last axis; a short tail is dropped."""
    return max_pool1d_with_indices(x, pool_size)[0]


def max_pool1d_with_indices(x, pool_size: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    if pool_size < 1 or length < pool_size:
        raise ShapeError(f"cannot pool length {length} with pool size {pool_size}")
    l2 = length // pool_size
    blocks = x[..., : l2 * pool_size].reshape(*x.shape[:-1], l2, pool_size)
    # running compare is much faster than argmax over a short trailing axis;
    # strict ">" keeps the first maximum on ties
    out = blocks[..., 0].copy()
    idx = np.zeros(out.shape, dtype=np.intp)
    for j in range(1, pool_size):
        better = blocks[..., j] > out
        np.copyto(out, blocks[..., j], where=better)
        idx[better] = j
    return out, idx


def max_pool1d_backward(grad_out: np.ndarray, idx: np.ndarray, input_length: int, pool_size: int) -> np.ndarray:
    """Route each pooled gradient to the single input position that won the max."""
    l2 = idx.shape[-1]
    grad_blocks = np.zeros((*idx.shape, pool_size))
    np.put_along_axis(grad_blocks, idx[..., None], grad_out[..., None], axis=-1)
    grad = np.zeros((*idx.shape[:-1], input_length))
    grad[..., : l2 * pool_size] = grad_blocks.reshape(*idx.shape[:-1], l2 * pool_size)
    return grad
