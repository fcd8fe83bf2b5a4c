"""Differentiable operators on NCHW tensors.

Convolutions use an im2col layout: patches are gathered once into an
``(N, Ho, Wo, kh, kw, C)`` buffer and reduced with a single GEMM.  The
backward pass scatters column gradients back with one strided add per
kernel offset, which keeps the reduction order fixed.
"""

from __future__ import annotations

import numpy as np

from .tensor import ConfigError, ShapeError, Tensor, _as_array, _sigmoid

__all__ = [
    "conv_output_size",
    "conv2d",
    "conv2d_direct",
    "max_pool2d",
    "avg_pool2d",
    "center_sample",
    "batch_norm",
    "relu",
    "sigmoid",
    "softmax",
    "log_softmax",
    "concat",
    "stack",
    "resize_bilinear",
    "bilinear_matrix",
    "pad2d",
]


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int = 1) -> int:
    if stride < 1 or padding < 0 or dilation < 1:
        raise ConfigError(f"invalid conv geometry stride={stride} padding={padding} dilation={dilation}")
    span = dilation * (k - 1) + 1
    out = (size + 2 * padding - span) // stride + 1
    if out < 1:
        raise ConfigError(f"kernel span {span} does not fit input size {size} with padding {padding}")
    return out


def pad2d(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _windows(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int):
    """Yield ``(i, j, view)`` with ``view`` the (N, C, Ho, Wo) samples at offset (i, j)."""
    for i in range(k):
        for j in range(k):
            r, c = i * dilation, j * dilation
            yield i, j, (slice(None), slice(None), slice(r, r + stride * (ho - 1) + 1, stride),
                         slice(c, c + stride * (wo - 1) + 1, stride))


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    xh = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    cols = np.empty((n, ho, wo, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            r, q = i * dilation, j * dilation
            cols[:, :, :, i, j, :] = xh[:, r:r + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride, :]
    return cols


def _col2im(dcols: np.ndarray, xp_shape, k: int, stride: int, dilation: int) -> np.ndarray:
    n, c, hp, wp = xp_shape
    ho, wo = dcols.shape[1:3]
    dxh = np.zeros((n, hp, wp, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            r, q = i * dilation, j * dilation
            dxh[:, r:r + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
    return dxh.transpose(0, 3, 1, 2)


def _unpad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D cross-correlation, ``y(p0) = sum_n w(pn) x(p0 + pn)`` per output channel.

    ``groups`` must be 1 or equal to the input channel count (depthwise).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError("only square kernels are supported")
    k = kh
    if groups == 1:
        if c_in_g != c:
            raise ShapeError(f"conv2d input has {c} channels but weight expects {c_in_g}")
    elif groups == c and c_in_g == 1 and c_out == c:
        pass
    else:
        raise ConfigError(f"unsupported groups={groups} for input channels {c} and weight {weight.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)
    xp = pad2d(x.data, padding)
    wd = weight.data

    if groups == 1:
        cols = _im2col(xp, k, stride, dilation, ho, wo)
        wmat = wd.transpose(2, 3, 1, 0).reshape(k * k * c, c_out)
        out = (cols.reshape(-1, k * k * c) @ wmat).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    else:
        cols = None
        out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
        for i, j, sl in _windows(xp, k, stride, dilation, ho, wo):
            out += xp[sl] * wd[:, 0, i, j][None, :, None, None]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gx = gw = gb = None
        if groups == 1:
            g_rows = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
            if weight.requires_grad:
                gw = (cols.reshape(-1, k * k * c).T @ g_rows).reshape(k, k, c, c_out).transpose(3, 2, 0, 1)
            if x.requires_grad:
                dcols = (g_rows @ wmat.T).reshape(n, ho, wo, k, k, c)
                gx = _unpad(_col2im(dcols, xp.shape, k, stride, dilation), padding)
        else:
            if weight.requires_grad:
                gw = np.zeros_like(wd)
                for i, j, sl in _windows(xp, k, stride, dilation, ho, wo):
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for i, j, sl in _windows(xp, k, stride, dilation, ho, wo):
                    dxp[sl] += g * wd[:, 0, i, j][None, :, None, None]
                gx = _unpad(dxp, padding)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, bw, "conv2d")


def conv2d_direct(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Reference convolution by explicit loops; used as a test oracle only."""
    n, c, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = pad2d(x, padding)
    out = np.zeros((n, c_out, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(c_out):
            for r in range(ho):
                for q in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(k):
                            for j in range(k):
                                acc += w[o, ci, i, j] * xp[b, ci, r * stride + i, q * stride + j]
                    out[b, o, r, q] = acc
    return out


def center_sample(x: Tensor, k: int, stride: int, padding: int) -> Tensor:
    """Value at each window center ``x(p0)`` for a k x k sliding window.

    Requires odd ``k``.  Uses zero padding so border windows have a center.
    """
    if k % 2 == 0:
        raise ConfigError(f"window size must be odd to have a center, got {k}")
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    r0 = k // 2 - padding
    if r0 >= 0 and r0 + stride * (ho - 1) < h and r0 + stride * (wo - 1) < w:
        sl = (slice(None), slice(None), slice(r0, r0 + stride * (ho - 1) + 1, stride),
              slice(r0, r0 + stride * (wo - 1) + 1, stride))
        out = np.ascontiguousarray(x.data[sl])

        def bw_fast(g):
            gx = np.zeros(x.shape, dtype=g.dtype)
            gx[sl] = g
            return (gx,)

        return Tensor._make(out, (x,), bw_fast, "center_sample")
    # border windows whose center falls in the padding read zero
    rows = r0 + stride * np.arange(ho)
    cols = r0 + stride * np.arange(wo)
    valid_r = (rows >= 0) & (rows < h)
    valid_c = (cols >= 0) & (cols < w)
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    rr, cc = rows[valid_r], cols[valid_c]
    ir, ic = np.flatnonzero(valid_r)[:, None], np.flatnonzero(valid_c)[None, :]
    out[:, :, ir, ic] = x.data[:, :, rr[:, None], cc[None, :]]

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, rr[:, None], cc[None, :]] += g[:, :, ir, ic]
        return (gx,)

    return Tensor._make(out, (x,), bw, "center_sample")


def max_pool2d(x: Tensor, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = pad2d(x.data, padding, value=-np.inf)
    views = [sl for _, _, sl in _windows(xp, k, stride, 1, ho, wo)]
    stacked = np.stack([xp[sl] for sl in views])
    arg = stacked.argmax(axis=0)
    out = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for idx, sl in enumerate(views):
            dxp[sl] += g * (arg == idx)
        return (_unpad(dxp, padding),)

    return Tensor._make(np.ascontiguousarray(out), (x,), bw, "max_pool2d")


def avg_pool2d(x: Tensor, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Average pooling ``y(p0) = (1/N) sum_n x(p0 + pn)`` with ``N = k*k`` (zero padding counted)."""
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = pad2d(x.data, padding)
    scale = 1.0 / (k * k)
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    views = [sl for _, _, sl in _windows(xp, k, stride, 1, ho, wo)]
    for sl in views:
        out += xp[sl]
    out *= scale

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        gs = g * scale
        for sl in views:
            dxp[sl] += gs
        return (_unpad(dxp, padding),)

    return Tensor._make(out, (x,), bw, "avg_pool2d")


def batch_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with the current batch's statistics."""
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    a = x.data
    m = a.shape[0] * (a.shape[2] * a.shape[3] if x.ndim == 4 else 1)
    mu = a.mean(axis=axes, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(shape)
    if beta is not None:
        out = out + beta.data.reshape(shape)

    def bw(g):
        gg = gb = None
        if gamma is not None and gamma.requires_grad:
            gg = (g * xhat).sum(axis=axes)
        if beta is not None and beta.requires_grad:
            gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape) if gamma is not None else g
        gx = inv / m * (m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, gg, gb

    parents = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        parents.append(beta)

    def bw_trim(g):
        gx, gg, gb = bw(g)
        res = [gx]
        if gamma is not None:
            res.append(gg)
        if beta is not None:
            res.append(gb)
        return res

    return Tensor._make(np.ascontiguousarray(out), parents, bw_trim, "batch_norm")


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for {x.ndim}-D tensor")
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    a = x.data
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), bw, "log_softmax")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat axis {axis} out of range for {ndim}-D tensors")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return Tensor._make(out, tensors, bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return Tensor._make(out, tensors, bw, "stack")


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (half-pixel centers, edge clamp)."""
    mat = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        lo = min(int(np.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        mat[i, hi] += frac
    return mat


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    h, w = x.shape[-2:]
    oh, ow = size
    if (h, w) == (oh, ow):
        return x
    rh = bilinear_matrix(h, oh, x.dtype)
    rw = bilinear_matrix(w, ow, x.dtype)
    out = np.ascontiguousarray(rh @ x.data @ rw.T)

    def bw(g):
        return (rh.T @ g @ rw,)

    return Tensor._make(out, (x,), bw, "resize_bilinear")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(_as_array(value))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return _sigmoid(x)
