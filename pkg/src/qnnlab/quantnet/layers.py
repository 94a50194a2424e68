"""Forward/backward kernels. Feature maps are NHWC float64; a 3-D input is one sample."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, InputError

ADDER_WIDTH = 16


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 3 else (x, False)


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _pad(x, pad, value=0.0):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), constant_values=value)


def im2col(x, kh, kw, stride, pad):
    """Patches of a NHWC batch as ``(N, Ho, Wo, kh*kw*C)``, fan-in ordered (ky, kx, c)."""
    n, h, w, c = x.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    win = sliding_window_view(_pad(x, pad), (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, Ho, Wo, C, kh, kw) -> (N, Ho, Wo, kh, kw, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n, ho, wo, kh * kw * c)


def tree_matmul(cols, wmat, width: int = ADDER_WIDTH):
    """``cols @ wmat`` in adder-tree order.

    The fan-in is cut into chunks of ``width``; each chunk's products are
    summed by a balanced pairwise tree (lane 2j with lane 2j+1, zero-padded
    to a power of two) and the chunk sums are accumulated in ascending order.
    Deterministic and independent of BLAS.
    """
    cols = np.asarray(cols, dtype=np.float64)
    k, m = wmat.shape
    if cols.shape[-1] != k:
        raise ConfigError(f"fan-in mismatch: {cols.shape[-1]} vs {k}")
    lanes = 1 << max(width - 1, 0).bit_length()
    acc = np.zeros(cols.shape[:-1] + (m,))
    for start in range(0, k, width):
        stop = min(start + width, k)
        prod = cols[..., start:stop, None] * wmat[start:stop]
        if stop - start < lanes:
            pad = [(0, 0)] * prod.ndim
            pad[-2] = (0, lanes - (stop - start))
            prod = np.pad(prod, pad)
        while prod.shape[-2] > 1:
            prod = prod[..., 0::2, :] + prod[..., 1::2, :]
        acc = acc + prod[..., 0, :]
    return acc


def _matmul(cols, wmat, accumulate, width):
    if accumulate == "tree":
        return tree_matmul(cols, wmat, width)
    return cols @ wmat


def conv2d_forward(x, weights, bias, stride=1, pad=0, *, name="conv",
                   accumulate="blas", width=ADDER_WIDTH):
    """Cross-correlation with zero padding. ``weights`` is ``(kh, kw, C, Cout)``."""
    x, single = _batched(x)
    kh, kw, c, co = weights.shape
    if x.shape[-1] != c:
        raise ConfigError(f"{name}: input has {x.shape[-1]} channels, weights expect {c}")
    if bias.shape != (co,):
        raise ConfigError(f"{name}: bias shape {bias.shape} != ({co},)")
    if x.shape[1] + 2 * pad < kh or x.shape[2] + 2 * pad < kw:
        raise ConfigError(f"{name}: kernel {kh}x{kw} larger than padded input {x.shape[1:3]}")
    cols = im2col(x, kh, kw, stride, pad)
    out = _matmul(cols, weights.reshape(kh * kw * c, co), accumulate, width) + bias
    return out[0] if single else out


def conv2d_backward(grad_out, x, weights, stride=1, pad=0):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    x, single = _batched(x)
    g, _ = _batched(grad_out)
    kh, kw, c, co = weights.shape
    n, ho, wo, _ = g.shape
    if g.shape[-1] != co:
        raise ConfigError("conv backward: grad_out channels do not match weights")
    cols = im2col(x, kh, kw, stride, pad).reshape(-1, kh * kw * c)
    g2 = g.reshape(-1, co)
    grad_w = (cols.T @ g2).reshape(weights.shape)
    grad_b = g2.sum(axis=0)
    gcols = (g2 @ weights.reshape(-1, co).T).reshape(n, ho, wo, kh, kw, c)
    gxp = np.zeros((n, x.shape[1] + 2 * pad, x.shape[2] + 2 * pad, c))
    for ky in range(kh):
        for kx in range(kw):
            gxp[:, ky: ky + stride * (ho - 1) + 1: stride,
                kx: kx + stride * (wo - 1) + 1: stride] += gcols[:, :, :, ky, kx]
    grad_x = gxp[:, pad: pad + x.shape[1], pad: pad + x.shape[2]]
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def _check_pool(x, kernel, stride, pad, name):
    kh, kw = kernel
    if x.shape[1] + 2 * pad < kh or x.shape[2] + 2 * pad < kw:
        raise ConfigError(f"{name}: kernel {kh}x{kw} larger than input {x.shape[1:3]}")
    return kh, kw, _out_size(x.shape[1], kh, stride, pad), _out_size(x.shape[2], kw, stride, pad)


def maxpool_forward(x, kernel, stride, pad=0, *, name="maxpool"):
    """Window max. Returns ``(out, argmax)``; argmax is the flat (ky*kw+kx) index of the
    first maximum in each window. Padding never wins."""
    x, single = _batched(x)
    kh, kw, ho, wo = _check_pool(x, kernel, stride, pad, name)
    win = sliding_window_view(_pad(x, pad, -np.inf), (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    flat = win.reshape(win.shape[:4] + (kh * kw,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return (out[0], idx[0]) if single else (out, idx)


def _valid_counts(h, w, kh, kw, stride, pad, ho, wo):
    ones = _pad(np.ones((1, h, w, 1)), pad)
    cnt = np.zeros((ho, wo))
    for ky in range(kh):
        for kx in range(kw):
            cnt += ones[0, ky: ky + stride * (ho - 1) + 1: stride,
                        kx: kx + stride * (wo - 1) + 1: stride, 0]
    return cnt[None, :, :, None]


def avgpool_forward(x, kernel, stride, pad=0, *, name="avgpool"):
    """Window mean over in-bounds cells; the window is summed in row-major order."""
    x, single = _batched(x)
    kh, kw, ho, wo = _check_pool(x, kernel, stride, pad, name)
    xp = _pad(x, pad)
    acc = np.zeros((x.shape[0], ho, wo, x.shape[3]))
    for ky in range(kh):
        for kx in range(kw):
            acc = acc + xp[:, ky: ky + stride * (ho - 1) + 1: stride,
                           kx: kx + stride * (wo - 1) + 1: stride]
    out = acc / _valid_counts(x.shape[1], x.shape[2], kh, kw, stride, pad, ho, wo)
    return out[0] if single else out


def maxpool_backward(grad_out, argmax, in_shape, kernel, stride, pad=0):
    g, single = _batched(grad_out)
    idx = argmax[None] if single else argmax
    in_shape = tuple(in_shape)
    n, h, w, c = (1,) + in_shape if single else in_shape
    kh, kw = kernel
    ho, wo = g.shape[1:3]
    gxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for ky in range(kh):
        for kx in range(kw):
            gxp[:, ky: ky + stride * (ho - 1) + 1: stride,
                kx: kx + stride * (wo - 1) + 1: stride] += np.where(idx == ky * kw + kx, g, 0.0)
    gx = gxp[:, pad: pad + h, pad: pad + w]
    return gx[0] if single else gx


def avgpool_backward(grad_out, in_shape, kernel, stride, pad=0):
    g, single = _batched(grad_out)
    in_shape = tuple(in_shape)
    n, h, w, c = (1,) + in_shape if single else in_shape
    kh, kw = kernel
    ho, wo = g.shape[1:3]
    share = g / _valid_counts(h, w, kh, kw, stride, pad, ho, wo)
    gxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for ky in range(kh):
        for kx in range(kw):
            gxp[:, ky: ky + stride * (ho - 1) + 1: stride,
                kx: kx + stride * (wo - 1) + 1: stride] += share
    gx = gxp[:, pad: pad + h, pad: pad + w]
    return gx[0] if single else gx


def pool_backward(grad_out, kind, in_shape, kernel, stride, pad=0, argmax=None):
    if kind == "maxpool":
        if argmax is None:
            raise InputError("maxpool backward needs the forward argmax indices")
        return maxpool_backward(grad_out, argmax, in_shape, kernel, stride, pad)
    return avgpool_backward(grad_out, in_shape, kernel, stride, pad)


def fc_forward(x, weights, bias, *, name="innerproduct", batched=None,
               accumulate="blas", width=ADDER_WIDTH):
    """``W^T x + b`` with ``weights`` of shape ``(n, m)``. Inputs are flattened in HWC order.

    ``batched`` says whether the leading axis of ``x`` is a batch; by default
    a 1-D input is one sample and anything else is a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    n, m = weights.shape
    if batched is None:
        batched = x.ndim > 1
    flat = x.reshape(x.shape[0], -1) if batched else x.reshape(1, -1)
    if flat.shape[1] != n:
        raise ConfigError(f"{name}: flattened input has {flat.shape[1]} values, weights expect {n}")
    out = _matmul(flat, weights, accumulate, width) + bias
    return out if batched else out[0]


def fc_backward(grad_out, x, weights):
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    single = g.ndim == 1
    g2 = g[None] if single else g
    flat = x.reshape(g2.shape[0], -1)
    grad_w = flat.T @ g2
    grad_b = g2.sum(axis=0)
    grad_x = (g2 @ weights.T).reshape(x.shape)
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x):
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Mean cross-entropy and its gradient w.r.t. ``logits``.

    Works for one sample (``logits`` 1-D, integer ``label``) or a batch.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None] if single else z
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape[0] != z2.shape[0]:
        raise InputError("one label per sample required")
    k = z2.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must be integers in [0, {k - 1}]")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = float(np.mean(lse - shifted[rows, labels]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    grad /= z2.shape[0]
    return loss, (grad[0] if single else grad)
