"""2D convolution, transposed convolution and bilinear resampling.

All spatial ops use channels-first layout (B, C, H, W). Convolutions run as
im2col matmuls; the transposed convolution reuses the scatter (col2im) path,
which is also the exact gradient of the forward convolution. Bilinear
resampling uses area-aligned sample positions (pixel centers at (i + 0.5)/N),
so a 2x2 -> 1x1 resize averages all four pixels and every output is a convex
combination of inputs.
"""

from __future__ import annotations

import functools

import numpy as np

from .tensor import ContractError, Tensor, _make, as_tensor


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """x (B,C,H,W) -> cols (B, C*kh*kw, Ho*Wo)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, b: int, c: int, h: int, w: int,
            kh: int, kw: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add columns back onto a (B,C,H,W) canvas (adjoint of _im2col)."""
    canvas = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            canvas[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    if pad:
        canvas = canvas[:, :, pad:h + pad, pad:w + pad]
    return canvas


def conv2d(x, weight, bias, stride: int = 1, padding: int = 1) -> Tensor:
    """weight (Cout, Cin, kh, kw), bias (Cout,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    b, cin, h, w = x.values.shape
    cout, cin_w, kh, kw = weight.values.shape
    if cin != cin_w:
        raise ContractError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    cols, ho, wo = _im2col(x.values, kh, kw, stride, padding)
    w_mat = weight.values.reshape(cout, cin * kh * kw)
    out = (w_mat @ cols).reshape(b, cout, ho, wo) + bias.values[None, :, None, None]

    def backward(g):
        g_mat = g.reshape(b, cout, ho * wo)
        g2 = np.ascontiguousarray(g_mat.transpose(1, 0, 2)).reshape(cout, -1)
        c2 = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(w_mat.shape[1], -1)
        weight._accum((g2 @ c2.T).reshape(weight.values.shape))
        bias._accum(g.sum(axis=(0, 2, 3)))
        dcols = np.matmul(w_mat.T, g_mat)
        x._accum(_col2im(dcols, b, cin, h, w, kh, kw, stride, padding, ho, wo))

    return _make(out, (x, weight, bias), backward, "conv2d")


def conv_transpose2d(x, weight, bias, stride: int = 2, padding: int = 1,
                     output_padding: int = 1) -> Tensor:
    """weight (Cin, Cout, kh, kw); output H = (H-1)*stride - 2*padding + kh + output_padding."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    b, cin, hi, wi = x.values.shape
    cin_w, cout, kh, kw = weight.values.shape
    if cin != cin_w:
        raise ContractError(f"conv_transpose2d channel mismatch: input {cin}, weight {cin_w}")
    if output_padding >= stride:
        raise ContractError("output_padding must be smaller than stride")
    ho = (hi - 1) * stride - 2 * padding + kh + output_padding
    wo = (wi - 1) * stride - 2 * padding + kw + output_padding
    w_mat = weight.values.reshape(cin, cout * kh * kw)
    x_mat = x.values.reshape(b, cin, hi * wi)
    cols = np.matmul(w_mat.T, x_mat)
    out = _col2im(cols, b, cout, ho, wo, kh, kw, stride, padding, hi, wi)
    out = out + bias.values[None, :, None, None]

    def backward(g):
        # sliding windows of g line back up with the input grid (output_padding < stride)
        g_cols, _, _ = _im2col(g, kh, kw, stride, padding)
        x._accum(np.matmul(w_mat, g_cols).reshape(b, cin, hi, wi))
        x2 = np.ascontiguousarray(x_mat.transpose(1, 0, 2)).reshape(cin, -1)
        gc2 = np.ascontiguousarray(g_cols.transpose(1, 0, 2)).reshape(w_mat.shape[1], -1)
        weight._accum((x2 @ gc2.T).reshape(weight.values.shape))
        bias._accum(g.sum(axis=(0, 2, 3)))

    return _make(out, (x, weight, bias), backward, "conv_transpose2d")


@functools.lru_cache(maxsize=128)
def resize_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) convex-combination matrix for area-aligned bilinear sampling."""
    mat = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        pos = (i + 0.5) * scale - 0.5
        lo = int(np.floor(pos))
        frac = pos - lo
        i0 = min(max(lo, 0), src - 1)
        i1 = min(max(lo + 1, 0), src - 1)
        mat[i, i0] += 1.0 - frac
        mat[i, i1] += frac
    return mat


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Area-aligned bilinear resize over the trailing two axes."""
    x = as_tensor(x)
    h, w = x.values.shape[-2:]
    if out_h < 1 or out_w < 1:
        raise ContractError("resize target must be at least 1x1")
    if (h, w) == (out_h, out_w):
        return x
    wr = resize_weights(h, out_h).astype(x.values.dtype)
    wc = resize_weights(w, out_w).astype(x.values.dtype)
    out = wr @ x.values @ wc.T

    def backward(g):
        x._accum(wr.T @ g @ wc)

    return _make(out, (x,), backward, "resize_bilinear")


def resize_bilinear_np(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-array variant of resize_bilinear (identical arithmetic)."""
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    wr = resize_weights(h, out_h).astype(x.dtype)
    wc = resize_weights(w, out_w).astype(x.dtype)
    return wr @ x @ wc.T


def resize_nearest_np(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize with area-aligned centers (for masks/labels)."""
    h, w = x.shape[-2:]
    rows = np.minimum((np.arange(out_h) + 0.5) * (h / out_h), h - 1).astype(np.intp)
    cols = np.minimum((np.arange(out_w) + 0.5) * (w / out_w), w - 1).astype(np.intp)
    return x[..., rows[:, None], cols[None, :]]
