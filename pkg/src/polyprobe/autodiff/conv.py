"""Array-level 2-D convolution kernels (NCHW) built on im2col views.

Kernels have layout ``(C_out, C_in, kh, kw)`` for ``conv2d``.  Transposed
convolution reuses the same weight with input/output roles swapped, which is
why it is expressed through :func:`conv2d_grad_input`.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def transpose_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n - 1) * stride - 2 * padding + k


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if not p:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    out[:, :, p:p + h, p:p + w] = x
    return out


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view, no copy
    return sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _check(x_shape, w_shape, stride, padding):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ShapeError(f"input has {x_shape[1]} channels but kernel expects {w_shape[1]}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}")
    for n, k in zip(x_shape[2:], w_shape[2:]):
        if conv_output_size(n, k, stride, padding) < 1:
            raise ShapeError(f"kernel {w_shape[2:]} does not fit input {x_shape[2:]} with padding {padding}")


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    _check(x.shape, w.shape, stride, padding)
    cols = _windows(x, w.shape[2], w.shape[3], stride, padding)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_grad_input(gy: np.ndarray, w: np.ndarray, x_shape, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Adjoint of :func:`conv2d_forward` with respect to its input."""
    n, c, h, wd = x_shape
    o, c_w, kh, kw = w.shape
    if gy.ndim != 4 or gy.shape[1] != o or c_w != c:
        raise ShapeError(f"upstream gradient {gy.shape} incompatible with kernel {w.shape}")
    ho, wo = gy.shape[2:]
    s = stride
    hq, wq = -(-(h + 2 * padding) // s), -(-(wd + 2 * padding) // s)
    gcols = np.tensordot(w, gy, axes=([0], [1]))  # (C, kh, kw, N, Ho, Wo)
    # Accumulate per output phase (row % s, col % s) so every add is a dense block.
    phases = np.zeros((s, s, c, n, hq, wq))
    for i in range(kh):
        for j in range(kw):
            di, dj = i // s, j // s
            phases[i % s, j % s, :, :, di:di + ho, dj:dj + wo] += gcols[:, i, j]
    gxp = phases.transpose(3, 2, 4, 0, 5, 1).reshape(n, c, hq * s, wq * s)
    return np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + wd])


def conv2d_grad_weight(gy: np.ndarray, x: np.ndarray, w_shape, stride: int = 1, padding: int = 0) -> np.ndarray:
    cols = _windows(x, w_shape[2], w_shape[3], stride, padding)
    return np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))


def conv2d_transpose_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Transposed convolution; ``w`` has layout ``(C_in, C_out, kh, kw)``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv2d_transpose: input {x.shape} incompatible with kernel {w.shape}")
    h, wd = (transpose_output_size(s, k, stride, padding) for s, k in zip(x.shape[2:], w.shape[2:]))
    if h < 1 or wd < 1:
        raise ShapeError(f"conv2d_transpose output would be empty for input {x.shape}")
    return conv2d_grad_input(x, w, (x.shape[0], w.shape[1], h, wd), stride, padding)
