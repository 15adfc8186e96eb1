"""Differentiable neural-network primitives on :class:`~lfinet.tensor.Tensor`.

Image tensors are laid out N x C x H x W. Convolutions are cross-correlations
(no kernel flip).
"""

from __future__ import annotations

import functools
import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft
from scipy.special import erf

from .tensor import Tensor, as_tensor, matmul

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_4d(x: Tensor, name: str = "input"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding that keeps spatial size for an odd kernel at stride 1."""
    if kernel % 2 == 0:
        raise ValueError(f"'same' padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


# --------------------------------------------------------------------- conv2d


def _taps(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int):
    """Yield ((i, j), strided view of xp aligned with output pixel grid)."""
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            yield (i, j), (slice(r0, r0 + stride * (ho - 1) + 1, stride), slice(c0, c0 + stride * (wo - 1) + 1, stride))


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    """(N, C*kh*kw, Ho*Wo) patch matrix; rows ordered (c, i, j) to match w.reshape(O, -1)."""
    n, c = xp.shape[:2]
    if kh == kw == 1 and stride == 1:
        return xp.reshape(n, c, ho * wo)
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride, ::dilation, ::dilation]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)


def _dense_forward(xp, w, stride, dilation, ho, wo):
    o, c, kh, kw = w.shape
    n = xp.shape[0]
    cols = _im2col(xp, kh, kw, ho, wo, stride, dilation)
    out = np.matmul(w.reshape(o, -1), cols).reshape(n, o, ho, wo)
    return out, cols


def _dense_backward(g, xp_shape, w, cols, stride, dilation, need_x, need_w):
    o, c, kh, kw = w.shape
    n, _, ho, wo = g.shape
    g3 = g.reshape(n, o, ho * wo)
    gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if need_w else None
    gxp = None
    if need_x:
        dcols = np.matmul(w.reshape(o, -1).T, g3)
        if kh == kw == 1 and stride == 1:
            return dcols.reshape(xp_shape), gw
        dcols = dcols.reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros(xp_shape, dtype=g.dtype)
        for (i, j), (rs, cs) in _taps(gxp, kh, kw, ho, wo, stride, dilation):
            gxp[:, :, rs, cs] += dcols[:, :, i, j]
    return gxp, gw


def _depthwise_forward(xp, w, stride, dilation, ho, wo):
    c, _, kh, kw = w.shape
    out = np.zeros((xp.shape[0], c, ho, wo), dtype=xp.dtype)
    for (i, j), (rs, cs) in _taps(xp, kh, kw, ho, wo, stride, dilation):
        out += w[:, 0, i, j][None, :, None, None] * xp[:, :, rs, cs]
    return out


def _depthwise_backward(g, xp, w, stride, dilation, need_x, need_w):
    c, _, kh, kw = w.shape
    ho, wo = g.shape[2:]
    gw = np.zeros_like(w) if need_w else None
    gxp = np.zeros_like(xp) if need_x else None
    for (i, j), (rs, cs) in _taps(xp, kh, kw, ho, wo, stride, dilation):
        if need_w:
            gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, rs, cs])
        if need_x:
            gxp[:, :, rs, cs] += w[:, 0, i, j][None, :, None, None] * g
    return gxp, gw


# depthwise kernels with a larger dilated footprint than this go through the FFT path
FFT_MIN_FOOTPRINT = 25


def _dilate_kernel(w: np.ndarray, dilation: int) -> np.ndarray:
    c, _, kh, kw = w.shape
    if dilation == 1:
        return w[:, 0]
    kd = np.zeros((c, dilation * (kh - 1) + 1, dilation * (kw - 1) + 1), dtype=w.dtype)
    kd[:, ::dilation, ::dilation] = w[:, 0]
    return kd


def _depthwise_fft_forward(xp, w, dilation, ho, wo):
    hp, wp = xp.shape[2:]
    kd = _dilate_kernel(w, dilation)
    eh, ew = kd.shape[1:]
    xf = sp_fft.rfft2(xp, s=(hp, wp))
    kf = sp_fft.rfft2(kd[:, ::-1, ::-1], s=(hp, wp))
    full = sp_fft.irfft2(xf * kf[None], s=(hp, wp))
    return np.ascontiguousarray(full[:, :, eh - 1 : eh - 1 + ho, ew - 1 : ew - 1 + wo]), xf


def _depthwise_fft_backward(g, xp_shape, xf, w, dilation, need_x, need_w):
    hp, wp = xp_shape[2:]
    kh, kw = w.shape[2:]
    kd = _dilate_kernel(w, dilation)
    eh, ew = kd.shape[1:]
    gf = sp_fft.rfft2(g, s=(hp, wp))
    gxp = gw = None
    if need_x:
        gxp = sp_fft.irfft2(gf * sp_fft.rfft2(kd, s=(hp, wp))[None], s=(hp, wp))
    if need_w:
        corr = sp_fft.irfft2((xf * np.conj(gf)).sum(axis=0), s=(hp, wp))
        gw = np.ascontiguousarray(corr[:, :eh:dilation, :ew:dilation][:, None]).astype(w.dtype)
    return gxp, gw


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding, dilation and channel groups.

    ``w`` has shape (out_channels, in_channels // groups, kh, kw). With
    ``groups == in_channels == out_channels`` this is a depthwise convolution.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_4d(x)
    if w.ndim != 4:
        raise ValueError(f"weight must be 4-D (O, C/groups, kh, kw), got shape {w.shape}")
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if groups < 1 or c % groups:
        raise ValueError(f"in_channels={c} is not divisible by groups={groups}")
    if o % groups:
        raise ValueError(f"out_channels={o} is not divisible by groups={groups}")
    if cg != c // groups:
        raise ValueError(f"weight in-channel dim is {cg}, expected in_channels/groups = {c // groups}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ValueError(f"bias must have shape ({o},), got {b.shape}")
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"output spatial size ({ho}, {wo}) < 1 for input height/width ({h}, {wd})")

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad) if padding else x.data
    og = o // groups
    depthwise = groups == c and cg == 1 and o == c
    footprint = (dilation * (kh - 1) + 1) * (dilation * (kw - 1) + 1)
    use_fft = depthwise and stride == 1 and footprint > FFT_MIN_FOOTPRINT
    caches = []
    if groups == 1:
        out, cols = _dense_forward(xp, w.data, stride, dilation, ho, wo)
        caches.append(cols)
    elif use_fft:
        out, xf = _depthwise_fft_forward(xp, w.data, dilation, ho, wo)
        caches.append(xf)
    elif depthwise:
        out = _depthwise_forward(xp, w.data, stride, dilation, ho, wo)
    else:
        parts = []
        for gi in range(groups):
            part, cols = _dense_forward(
                xp[:, gi * cg : (gi + 1) * cg], w.data[gi * og : (gi + 1) * og], stride, dilation, ho, wo
            )
            parts.append(part)
            caches.append(cols)
        out = np.concatenate(parts, axis=1)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        need_x, need_w = x.requires_grad, w.requires_grad
        if groups == 1:
            gxp, gw = _dense_backward(g, xp.shape, w.data, caches[0], stride, dilation, need_x, need_w)
        elif use_fft:
            gxp, gw = _depthwise_fft_backward(g, xp.shape, caches[0], w.data, dilation, need_x, need_w)
        elif depthwise:
            gxp, gw = _depthwise_backward(g, xp, w.data, stride, dilation, need_x, need_w)
        else:
            gxp = np.zeros(xp.shape, dtype=g.dtype) if need_x else None
            gw = np.zeros_like(w.data) if need_w else None
            for gi in range(groups):
                gx_i, gw_i = _dense_backward(
                    np.ascontiguousarray(g[:, gi * og : (gi + 1) * og]),
                    (n, cg) + xp.shape[2:],
                    w.data[gi * og : (gi + 1) * og],
                    caches[gi],
                    stride,
                    dilation,
                    need_x,
                    need_w,
                )
                if need_x:
                    gxp[:, gi * cg : (gi + 1) * cg] = gx_i
                if need_w:
                    gw[gi * og : (gi + 1) * og] = gw_i
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, backward, "conv2d")


def conv_transpose2d(x, w, b=None, stride: int = 2) -> Tensor:
    """Transposed convolution with kernel size equal to stride (non-overlapping).

    ``w`` has shape (in_channels, out_channels, k, k) with k == stride, so every
    input pixel expands into its own k x k output block.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_4d(x)
    if w.ndim != 4:
        raise ValueError(f"weight must be 4-D (C_in, C_out, k, k), got shape {w.shape}")
    n, c, h, wd = x.shape
    ci, o, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"weight in-channel dim is {ci}, input has {c} channels")
    if kh != stride or kw != stride:
        raise ValueError(f"only kernel == stride is supported, got kernel ({kh}, {kw}) and stride {stride}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ValueError(f"bias must have shape ({o},), got {b.shape}")
    k = stride
    # (N, H, W, O, k, k) -> (N, O, H, k, W, k)
    blocks = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5)
    out = np.ascontiguousarray(blocks).reshape(n, o, h * k, wd * k)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        g6 = g.reshape(n, o, h, k, wd, k)
        gx = np.einsum("nohiwj,coij->nchw", g6, w.data, optimize=True) if x.requires_grad else None
        gw = np.einsum("nohiwj,nchw->coij", g6, x.data, optimize=True) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, backward, "conv_transpose2d")


# ------------------------------------------------------------ resampling ops


def avg_pool2x2(x) -> Tensor:
    x = as_tensor(x)
    _check_4d(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x2 needs even height and width, got ({h}, {w})")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    return Tensor._result(out, (x,), backward, "avg_pool2x2")


@functools.lru_cache(maxsize=64)
def _interp_matrix(n_in: int, scale: int, dtype_name: str) -> np.ndarray:
    """Row i holds the bilinear weights for output sample i (half-pixel centres, edge clamp)."""
    n_out = n_in * scale
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


UPSAMPLE_SCALES = (2, 4, 8)


def bilinear_upsample(x, scale: int) -> Tensor:
    """Bilinear upsampling by an integer factor in {2, 4, 8}."""
    x = as_tensor(x)
    _check_4d(x)
    if scale not in UPSAMPLE_SCALES:
        raise ValueError(f"scale must be one of {UPSAMPLE_SCALES}, got {scale}")
    h, w = x.shape[2:]
    mh = _interp_matrix(h, scale, x.dtype.name)
    mw = _interp_matrix(w, scale, x.dtype.name)
    out = (mh @ x.data) @ mw.T

    def backward(g):
        return (mh.T @ (g @ mw),)

    return Tensor._result(out, (x,), backward, "bilinear_upsample")


def pad2d(x, pad: int, mode: str = "reflect") -> Tensor:
    """Pad H and W by ``pad`` on each side. ``mode`` is 'reflect' or 'constant' (zeros)."""
    x = as_tensor(x)
    _check_4d(x)
    if pad == 0:
        return x
    h, w = x.shape[2:]
    if mode == "constant":
        out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

        def backward(g):
            return (g[:, :, pad : pad + h, pad : pad + w],)

        return Tensor._result(out, (x,), backward, "pad_constant")
    if mode != "reflect":
        raise ValueError(f"unknown pad mode {mode!r}")
    if pad >= h or pad >= w:
        raise ValueError(f"reflect padding {pad} needs spatial size > pad, got ({h}, {w})")
    ih = np.pad(np.arange(h), pad, mode="reflect")
    iw = np.pad(np.arange(w), pad, mode="reflect")
    out = x.data[:, :, ih][:, :, :, iw]

    def backward(g):
        gh = np.zeros(g.shape[:2] + (h, g.shape[3]), dtype=g.dtype)
        np.add.at(gh, (slice(None), slice(None), ih), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), iw), gh)
        return (gx,)

    return Tensor._result(out, (x,), backward, "pad_reflect")


# ------------------------------------------------------------- normalization


def batch_norm2d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place (unbiased variance, as PyTorch does). In eval
    mode the running buffers are used and nothing is updated.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_4d(x)
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ValueError(f"{name} has shape {t.shape} but input has {c} channels")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError(f"running statistics must have shape ({c},)")
    shp = (1, c, 1, 1)
    g_ = gamma.data.reshape(shp)

    if training:
        m = x.size // c
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(shp)) * inv_std.reshape(shp)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
        out = g_ * xhat + beta.data.reshape(shp)

        def backward(g):
            gx = None
            if x.requires_grad:
                dxhat = g * g_
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv_std.reshape(shp) / m) * (m * dxhat - s1 - xhat * s2)
            ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            return gx, ggamma, gbeta

    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(shp)) * inv_std.reshape(shp)
        out = g_ * xhat + beta.data.reshape(shp)

        def backward(g):
            gx = g * (g_ * inv_std.reshape(shp)) if x.requires_grad else None
            ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
            return gx, ggamma, gbeta

    return Tensor._result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm2d")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an elementwise affine map."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm affine parameters must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = (inv_std / d) * (
                d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        lead = tuple(range(x.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return Tensor._result(out, (x, gamma, beta), backward, "layer_norm")


# --------------------------------------------------------------- activations


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    # maximum keeps NaN, so a diverged run surfaces in the loss instead of being zeroed
    return Tensor._result(np.maximum(x.data, 0, dtype=x.dtype), (x,), lambda g: (g * mask,), "relu")


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF written through erf."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor._result(out.astype(x.dtype, copy=False), (x,), backward, "gelu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return Tensor._result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._result(s, (x,), backward, "softmax")


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    _check_4d(x)
    return x.mean(axis=(2, 3), keepdims=True)


# ------------------------------------------------------------ channel plumbing


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ValueError("concat needs at least one tensor")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(a != b for k, (a, b) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)):
            raise ValueError(f"concat shape mismatch outside axis {axis}: {ref} vs {t.shape}")
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in xs], axis=axis)

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tuple(xs), backward, "concat")


def _take_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return Tensor._result(x.data[:, start:stop], (x,), backward, "slice_channels")


def slice_channels(x, ranges: Sequence[tuple[int, int]]) -> list[Tensor]:
    """Split along the channel axis; ``ranges`` must partition [0, C) in order."""
    x = as_tensor(x)
    c = x.shape[1]
    pos = 0
    for start, stop in ranges:
        if start != pos:
            kind = "overlap" if start < pos else "gap"
            raise ValueError(f"channel ranges have a {kind} at channel {min(start, pos)}")
        if stop <= start:
            raise ValueError(f"empty channel range ({start}, {stop})")
        pos = stop
    if pos != c:
        raise ValueError(f"channel ranges cover [0, {pos}) but input has {c} channels")
    return [_take_channels(x, a, b) for a, b in ranges]


def split_sizes(sizes: Sequence[int]) -> list[tuple[int, int]]:
    bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


# ----------------------------------------------------------------- attention


def linear(x, w, b=None) -> Tensor:
    """``x @ w.T + b`` with ``w`` shaped (out_features, in_features)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight in-features {w.shape[1]}")
    out = matmul(x, w.transpose(1, 0))
    return out + b if b is not None else out


def scaled_dot_attention(q, k, v, heads: int) -> Tensor:
    """Multi-head softmax(q k^T / sqrt(d_head)) v on (N, T, D) inputs."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ValueError("attention inputs must be 3-D (N, T, D)")
    n, t, d = q.shape
    if k.shape[2] != d or v.shape[2] != d:
        raise ValueError(f"embed dims differ: q {d}, k {k.shape[2]}, v {v.shape[2]}")
    if k.shape[:2] != v.shape[:2] or k.shape[0] != n:
        raise ValueError(f"key/value shapes disagree: {k.shape} vs {v.shape}")
    if d % heads:
        raise ValueError(f"embed dim {d} is not divisible by heads={heads}")
    dh = d // heads
    s = k.shape[1]

    def split(z, length):
        return z.reshape(n, length, heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q, t), split(k, s), split(v, s)
    scores = matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    out = matmul(attn, vh)
    return out.transpose(0, 2, 1, 3).reshape(n, t, d)
