"""N-dimensional 'same' convolution (cross-correlation) with its reverse pass.

Arrays are laid out ``(batch, channels, *spatial)``.  Kernels are
``(c_out, c_in, *kernel)`` with odd kernel sizes; zero padding keeps the
spatial shape.  Patches are gathered with a cached index table, so both passes
reduce to matmuls.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np


def _offsets(kernel_shape):
    return list(itertools.product(*(range(k) for k in kernel_shape)))


def _pad_width(kernel_shape):
    return [(0, 0), (0, 0)] + [(k // 2, k // 2) for k in kernel_shape]


@functools.lru_cache(maxsize=64)
def gather_matrix(spatial: tuple, kernel_shape: tuple) -> np.ndarray:
    """0/1 matrix ``G`` of shape ``(K * N, N)``: row ``k * N + n`` picks the input
    cell read by kernel offset ``k`` at output cell ``n`` (all-zero row where
    the offset falls in the padding)."""
    n = math.prod(spatial)
    offs = _offsets(kernel_shape)
    g = np.zeros((len(offs) * n, n))
    for k, off in enumerate(offs):
        for flat, pos in enumerate(itertools.product(*(range(s) for s in spatial))):
            src = tuple(p + o - kk // 2 for p, o, kk in zip(pos, off, kernel_shape))
            if all(0 <= q < s for q, s in zip(src, spatial)):
                g[k * n + flat, np.ravel_multi_index(src, spatial)] = 1.0
    g.setflags(write=False)
    return g


@functools.lru_cache(maxsize=64)
def _gather_index(spatial: tuple, kernel_shape: tuple) -> np.ndarray:
    """``(K, N)`` flat positions into the zero-padded grid."""
    padded = tuple(s + 2 * (k // 2) for s, k in zip(spatial, kernel_shape))
    base = np.array([np.ravel_multi_index(pos, padded) for pos in itertools.product(*(range(s) for s in spatial))])
    shifts = np.array([np.ravel_multi_index(off, padded) for off in _offsets(kernel_shape)])
    idx = shifts[:, None] + base[None, :]
    idx.setflags(write=False)
    return idx


def im2col(x: np.ndarray, kernel_shape) -> np.ndarray:
    """``(B, C, *S)`` -> ``(B, C * K, N)`` with K = prod(kernel), N = prod(S)."""
    b, c, *spatial = x.shape
    idx = _gather_index(tuple(spatial), tuple(kernel_shape))
    xp = np.pad(x, _pad_width(kernel_shape)).reshape(b, c, -1)
    return np.take(xp, idx, axis=2).reshape(b, c * idx.shape[0], idx.shape[1])


def col2im(cols: np.ndarray, x_shape, kernel_shape) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    b, c, *spatial = x_shape
    g = gather_matrix(tuple(spatial), tuple(kernel_shape))
    return (cols.reshape(b * c, -1) @ g).reshape(x_shape)


def conv_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray):
    """Return ``(y, cols)``; keep ``cols`` for :func:`conv_backward`."""
    b, c, *spatial = x.shape
    c_out, c_in, *kernel = w.shape
    if c_in != c:
        raise ValueError(f"kernel expects {c_in} input channels, got {c}")
    if len(kernel) != len(spatial):
        raise ValueError(f"kernel rank {len(kernel)} != spatial rank {len(spatial)}")
    cols = im2col(x, kernel)
    y = np.matmul(w.reshape(c_out, -1), cols) + bias[None, :, None]
    return y.reshape(b, c_out, *spatial), cols


def conv_backward(dy: np.ndarray, cols: np.ndarray, x_shape, w: np.ndarray, need_dx: bool = True):
    """Gradients ``(dx, dw, db)`` given upstream ``dy`` of shape ``(B, c_out, *S)``."""
    b, c_out = dy.shape[:2]
    dy2 = dy.reshape(b, c_out, -1)
    dw = np.tensordot(dy2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = dy2.sum(axis=(0, 2))
    dx = None
    if need_dx:
        # adjoint of a stride-1 'same' correlation: correlate with the flipped, transposed kernel
        spatial_axes = tuple(range(2, w.ndim))
        w_t = np.flip(w, axis=spatial_axes).swapaxes(0, 1)
        dx, _ = conv_forward(dy, np.ascontiguousarray(w_t), np.zeros(w_t.shape[0]))
    return dx, dw, db


def conv_reference(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Direct loop definition; slow, used only to check the fast path."""
    b, c, *spatial = x.shape
    c_out, _, *kernel = w.shape
    xp = np.pad(x, _pad_width(kernel))
    y = np.zeros((b, c_out, *spatial))
    for pos in itertools.product(*(range(s) for s in spatial)):
        window = xp[(slice(None), slice(None)) + tuple(slice(p, p + k) for p, k in zip(pos, kernel))]
        y[(slice(None), slice(None)) + pos] = np.tensordot(window, w, axes=(list(range(1, window.ndim)),
                                                                             list(range(1, w.ndim)))) + bias
    return y
