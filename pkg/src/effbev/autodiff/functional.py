"""Neural-network primitives built on :mod:`effbev.autodiff.tensor`.

All image tensors are NCHW.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.special import erf

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, matmul


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    out = matmul(x, weight.transpose(0, 1))
    return out + bias if bias is not None else out


# -- convolution --------------------------------------------------------------

def _window(xp, i, j, stride, ho, wo):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    Output spatial size is ``(H + 2*padding - k) // stride + 1``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c != cg * groups or o % groups:
        raise DimensionError(f"conv2d channels: input {x.shape}, weight {weight.shape}, groups={groups}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad) if padding else x.data
    wd = weight.data
    depthwise = groups == c and cg == 1 and o == c

    if groups == 1:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        w2 = wd.reshape(o, -1)
        out = (cols @ w2.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    elif depthwise:
        out = np.zeros((n, o, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                out += _window(xp, i, j, stride, ho, wo) * wd[None, :, 0, i, j, None, None]
    else:
        raise ConfigError(f"conv2d supports groups=1 or depthwise only, got groups={groups}")
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gx = np.zeros_like(xp)
        if groups == 1:
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
            gw = (g2.T @ cols).reshape(wd.shape)
            gcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    _window(gx, i, j, stride, ho, wo)[...] += gcols[..., i, j].transpose(0, 3, 1, 2)
        else:
            gw = np.zeros_like(wd)
            for i in range(kh):
                for j in range(kw):
                    win_ij = _window(xp, i, j, stride, ho, wo)
                    gw[:, 0, i, j] = (g * win_ij).sum(axis=(0, 2, 3))
                    _window(gx, i, j, stride, ho, wo)[...] += g * wd[None, :, 0, i, j, None, None]
        if padding:
            gx = gx[:, :, padding:padding + h, padding:padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


# -- normalization ------------------------------------------------------------

def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean=None, running_var=None,
                training: bool = True, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running statistics (numpy arrays) are updated in place.
    """
    if eps <= 0:
        raise ConfigError(f"batchnorm eps must be positive, got {eps}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm affine shapes {gamma.shape}/{beta.shape} for {c} channels")
    xd = x.data
    axes = (0, 2, 3)
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if running_mean is not None:
            count = xd.size // c
            unbiased = var * count / max(count - 1, 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        mu = np.asarray(running_mean, dtype=xd.dtype)
        var = np.asarray(running_var, dtype=xd.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gd
        if training:
            m = xd.size // c
            gx = (inv[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=axes)[None, :, None, None]
                - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None])
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each token over the last axis (population variance)."""
    if eps <= 0:
        raise ConfigError(f"layernorm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm affine shapes {gamma.shape}/{beta.shape} for width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(xd.var(axis=-1, keepdims=True) + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gamma.data
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(out, (x, gamma, beta), backward)


# -- activations --------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    xd = x.data
    scale = np.where(xd >= 0, 1.0, slope).astype(xd.dtype)
    return Tensor._from_op(xd * scale, (x,), lambda g: (g * scale,))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
    return Tensor._from_op((xd * cdf).astype(xd.dtype), (x,),
                           lambda g: ((g * (cdf + xd * pdf)).astype(xd.dtype),))


def smooth_l1(diff: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss: quadratic below ``beta``, linear above."""
    d = diff.data
    small = np.abs(d) < beta
    out = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    slope = np.where(small, d / beta, np.sign(d)).astype(d.dtype)
    return Tensor._from_op(out.astype(d.dtype), (diff,), lambda g: (g * slope,))


# -- resampling ---------------------------------------------------------------

def interp_matrix(n_in: int, n_out: int, dtype=np.float32) -> np.ndarray:
    """Linear interpolation weights (n_out, n_in), align-corners-false."""
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - lam)
    np.add.at(mat, (rows, i1), lam)
    return mat.astype(dtype)


def upsample_bilinear(x: Tensor, scale: int | None = None, size: tuple | None = None) -> Tensor:
    """Bilinear resize of an NCHW tensor (corner pixels map to cell centers)."""
    h, w = x.shape[-2:]
    if size is None:
        if scale is None:
            raise ConfigError("upsample_bilinear needs scale or size")
        size = (h * scale, w * scale)
    ah = interp_matrix(h, size[0], x.dtype)
    aw = interp_matrix(w, size[1], x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def backward(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return Tensor._from_op(out, (x,), backward)


def grid_sample_bilinear(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Sample ``x`` (B, C, H, W) at fractional cell coordinates.

    ``rows``/``cols`` have shape (B, Ho, Wo) and index cell centers. Corners
    outside the map contribute zero.
    """
    b, c, h, w = x.shape
    ho, wo = rows.shape[1:]
    mats = []
    for k in range(b):
        r, q = rows[k].reshape(-1), cols[k].reshape(-1)
        r0, q0 = np.floor(r), np.floor(q)
        fr, fq = r - r0, q - q0
        entries_i, entries_j, entries_v = [], [], []
        target = np.arange(r.size)
        for dr, dq, wgt in ((0, 0, (1 - fr) * (1 - fq)), (0, 1, (1 - fr) * fq),
                            (1, 0, fr * (1 - fq)), (1, 1, fr * fq)):
            rr, qq = r0.astype(np.int64) + dr, q0.astype(np.int64) + dq
            ok = (rr >= 0) & (rr < h) & (qq >= 0) & (qq < w) & (wgt != 0)
            entries_i.append(target[ok])
            entries_j.append(rr[ok] * w + qq[ok])
            entries_v.append(wgt[ok])
        mat = sparse.csr_matrix(
            (np.concatenate(entries_v).astype(x.dtype), (np.concatenate(entries_i), np.concatenate(entries_j))),
            shape=(r.size, h * w))
        mats.append(mat)
    flat = x.data.reshape(b, c, h * w)
    out = np.stack([(mats[k] @ flat[k].T).T for k in range(b)]).reshape(b, c, ho, wo)

    def backward(g):
        gf = g.reshape(b, c, ho * wo)
        return (np.stack([(mats[k].T @ gf[k].T).T for k in range(b)]).reshape(x.shape),)

    return Tensor._from_op(out.astype(x.dtype), (x,), backward)


def scatter_add(values: Tensor, index: np.ndarray, size: int, keep: np.ndarray | None = None) -> Tensor:
    """Sum rows of ``values`` into ``size`` buckets: ``out[index[p]] += values[p]``.

    Rows where ``keep`` is False are ignored; every kept index must lie in
    ``[0, size)``.
    """
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if index.shape[0] != values.shape[0]:
        raise DimensionError(f"scatter_add index length {index.shape[0]} vs values {values.shape}")
    rows = np.arange(index.size)
    if keep is not None:
        keep = np.asarray(keep, dtype=bool).reshape(-1)
        rows, index = rows[keep], index[keep]
    bad = (index < 0) | (index >= size)
    if bad.any():
        p = int(np.flatnonzero(bad)[0])
        raise IndexError(f"scatter_add index {int(index[p])} at row {int(rows[p])} outside [0, {size})")
    tail = values.shape[1:]
    mat = sparse.csr_matrix((np.ones(index.size, dtype=values.dtype), (index, rows)),
                            shape=(size, values.shape[0]))
    flat = values.data.reshape(values.shape[0], -1)
    out = np.asarray(mat @ flat).reshape((size,) + tail)

    def backward(g):
        return (np.asarray(mat.T @ g.reshape(size, -1)).reshape(values.shape),)

    return Tensor._from_op(out.astype(values.dtype), (as_tensor(values),), backward)
