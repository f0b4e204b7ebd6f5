"""Forward and backward kernels for the layer primitives.

Every forward function returns its output array. Passing a ``cache`` dict
makes it record what the matching ``*_backward`` function needs; backward
functions consume that dict and return input (and parameter) gradients.

Convolution is cross-correlation (no kernel flip), computed by im2col and a
batched matmul.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from densocr.errors import BackwardError, ShapeError
from densocr.nn.tensor import as_nchw, check_finite


def _value(p):
    return p.value if hasattr(p, "value") else np.asarray(p)


def _need(cache, op: str):
    if not cache:
        raise BackwardError(f"{op}: backward called without a cached forward pass")
    return cache


def normalize_padding(padding) -> tuple[int, int, int, int]:
    """Return (top, bottom, left, right) padding from an int, pair or 4-tuple."""
    if isinstance(padding, (int, np.integer)):
        p = int(padding)
        pads = (p, p, p, p)
    else:
        padding = tuple(int(v) for v in padding)
        if len(padding) == 2:
            pads = (padding[0], padding[0], padding[1], padding[1])
        elif len(padding) == 4:
            pads = padding
        else:
            raise ShapeError(f"padding must have 1, 2 or 4 entries, got {padding}")
    if min(pads) < 0:
        raise ShapeError(f"padding must be nonnegative, got {pads}")
    return pads


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding) -> tuple[int, int]:
    pt, pb, pl, pr = normalize_padding(padding)
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    ho = (h + pt + pb - kh) // stride + 1
    wo = (w + pl + pr - kw) // stride + 1
    if h + pt + pb < kh or w + pl + pr < kw or ho <= 0 or wo <= 0:
        raise ShapeError(
            f"kernel {kh}x{kw} with stride {stride} and padding {(pt, pb, pl, pr)} "
            f"does not fit a {h}x{w} input"
        )
    return ho, wo


def _pad(x: np.ndarray, pads) -> np.ndarray:
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, kh, kw) over a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def _scatter_windows(dwin: np.ndarray, padded_shape, stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: sum (N, C, kh, kw, Ho, Wo) patches back into the padded input."""
    n, c, kh, kw, ho, wo = dwin.shape
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dwin[
                :, :, i, j
            ]
    return dxp


def _unpad(dxp: np.ndarray, pads, h: int, w: int) -> np.ndarray:
    pt, _, pl, _ = pads
    return dxp[:, :, pt : pt + h, pl : pl + w]


# --------------------------------------------------------------------------- conv


def conv2d_forward(x, weight, bias=None, stride: int = 1, padding=0, cache: dict | None = None) -> np.ndarray:
    x = as_nchw(x)
    w = _value(weight)
    if w.ndim != 4:
        raise ShapeError(f"conv weight must be (Cout, Cin, Kh, Kw), got {w.shape}")
    cout, cin, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cin}")
    b = None if bias is None else _value(bias)
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {cout} output channels")
    pads = normalize_padding(padding)
    ho, wo = conv_output_hw(h, wd, kh, kw, stride, pads)

    if kh == 1 and kw == 1 and pads == (0, 0, 0, 0):
        xs = x[:, :, ::stride, ::stride] if stride > 1 else x
        cols = xs.reshape(n, c, ho * wo)
    else:
        xp = _pad(x, pads)
        win = _windows(xp, kh, kw, stride)
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    w2 = w.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b[None, :, None]
    out = out.reshape(n, cout, ho, wo)
    if cache is not None:
        cache.update(cols=cols, w=w, x_shape=x.shape, pads=pads, stride=stride, has_bias=b is not None)
    return check_finite(out, "conv2d")


def conv2d_backward(dout: np.ndarray, cache: dict):
    """Return (dx, dweight, dbias); dbias is None when the forward had no bias."""
    _need(cache, "conv2d")
    cols, w, pads, stride = cache["cols"], cache["w"], cache["pads"], cache["stride"]
    n, c, h, wd = cache["x_shape"]
    cout, cin, kh, kw = w.shape
    _, _, ho, wo = dout.shape
    d2 = dout.reshape(n, cout, ho * wo)
    db = d2.sum(axis=(0, 2)) if cache["has_bias"] else None
    dw = np.tensordot(d2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    dcols = np.matmul(w.reshape(cout, -1).T, d2)
    if kh == 1 and kw == 1 and pads == (0, 0, 0, 0):
        dcols = dcols.reshape(n, c, ho, wo)
        if stride == 1:
            dx = dcols
        else:
            dx = np.zeros((n, c, h, wd), dtype=dout.dtype)
            dx[:, :, ::stride, ::stride][:, :, :ho, :wo] = dcols
        return dx, dw, db
    pt, pb, pl, pr = pads
    dwin = dcols.reshape(n, c, kh, kw, ho, wo)
    dxp = _scatter_windows(dwin, (n, c, h + pt + pb, wd + pl + pr), stride)
    return _unpad(dxp, pads, h, wd), dw, db


def depthwise_conv2d_forward(x, weight, stride: int = 1, padding=0, cache: dict | None = None) -> np.ndarray:
    """One spatial kernel per input channel; weight has shape (C, 1, Kh, Kw)."""
    x = as_nchw(x)
    w = _value(weight)
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be (C, 1, Kh, Kw), got {w.shape}")
    if w.shape[0] != c:
        raise ShapeError(f"depthwise conv: input has {c} channels, weight has {w.shape[0]}")
    kh, kw = w.shape[2:]
    pads = normalize_padding(padding)
    ho, wo = conv_output_hw(h, wd, kh, kw, stride, pads)
    xp = _pad(x, pads)
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
            out += sl * w[None, :, 0, i, j, None, None]
    if cache is not None:
        cache.update(xp=xp, w=w, x_shape=x.shape, pads=pads, stride=stride)
    return check_finite(out, "depthwise_conv2d")


def depthwise_conv2d_backward(dout: np.ndarray, cache: dict):
    _need(cache, "depthwise_conv2d")
    xp, w, pads, stride = cache["xp"], cache["w"], cache["pads"], cache["stride"]
    n, c, h, wd = cache["x_shape"]
    kh, kw = w.shape[2:]
    _, _, ho, wo = dout.shape
    dw = np.zeros_like(w)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            rs = slice(i, i + stride * (ho - 1) + 1, stride)
            cs = slice(j, j + stride * (wo - 1) + 1, stride)
            dw[:, 0, i, j] = np.einsum("nchw,nchw->c", dout, xp[:, :, rs, cs])
            dxp[:, :, rs, cs] += dout * w[None, :, 0, i, j, None, None]
    return _unpad(dxp, pads, h, wd), dw


def depthwise_separable_conv_forward(x, depthwise_weight, pointwise_weight, stride: int = 1, padding=0) -> np.ndarray:
    """Depthwise spatial filtering followed by a 1x1 pointwise convolution."""
    pw = _value(pointwise_weight)
    dw = _value(depthwise_weight)
    if pw.ndim != 4 or pw.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise weight must be (Cout, Cin, 1, 1), got {pw.shape}")
    if pw.shape[1] != dw.shape[0]:
        raise ShapeError(f"pointwise expects {pw.shape[1]} channels, depthwise produces {dw.shape[0]}")
    mid = depthwise_conv2d_forward(x, dw, stride, padding)
    return conv2d_forward(mid, pw, None, 1, 0)


# ---------------------------------------------------------------- normalization


def batchnorm_forward(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
    cache: dict | None = None,
) -> np.ndarray:
    """Per-channel batch normalization.

    In training mode the batch statistics are used and the running estimates
    are updated in place: ``running = momentum * running + (1 - momentum) * batch``.
    """
    x = as_nchw(x)
    g, b = _value(gamma), _value(beta)
    c = x.shape[1]
    if g.shape != (c,) or b.shape != (c,) or running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batchnorm: input has {c} channels, state has {g.shape[0]}")
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.mean(axis=(0, 2, 3))
        xc = x - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        xc = x - running_mean.astype(x.dtype)[None, :, None, None]
        var = running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv_std[None, :, None, None]
    out = xhat * g[None, :, None, None] + b[None, :, None, None]
    if cache is not None:
        cache.update(xhat=xhat, inv_std=inv_std, gamma=g, training=training)
    return check_finite(out, "batchnorm")


def batchnorm_backward(dout: np.ndarray, cache: dict):
    """Return (dx, dgamma, dbeta)."""
    _need(cache, "batchnorm")
    xhat, inv_std, g = cache["xhat"], cache["inv_std"], cache["gamma"]
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * g[None, :, None, None]
    if not cache["training"]:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# ----------------------------------------------------------- elementwise/pooling


def relu(x, cache: dict | None = None) -> np.ndarray:
    x = np.asarray(x)
    out = np.maximum(x, 0)
    if cache is not None:
        cache["mask"] = x > 0
    return check_finite(out, "relu")


def relu_backward(dout: np.ndarray, cache: dict) -> np.ndarray:
    _need(cache, "relu")
    return dout * cache["mask"]


def avg_pool(x, window: int = 2, stride: int | None = None, cache: dict | None = None) -> np.ndarray:
    x = as_nchw(x)
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    ho, wo = conv_output_hw(h, w, window, window, stride, 0)
    out = _windows(x, window, window, stride).mean(axis=(4, 5))
    if cache is not None:
        cache.update(x_shape=x.shape, window=window, stride=stride)
    return check_finite(out.astype(x.dtype, copy=False), "avg_pool")


def avg_pool_backward(dout: np.ndarray, cache: dict) -> np.ndarray:
    _need(cache, "avg_pool")
    k, s = cache["window"], cache["stride"]
    n, c, ho, wo = dout.shape
    share = dout / (k * k)
    dwin = np.broadcast_to(share[:, :, None, None], (n, c, k, k, ho, wo))
    return _scatter_windows(dwin, cache["x_shape"], s)


def max_pool(x, window: int = 2, stride: int | None = None, cache: dict | None = None) -> np.ndarray:
    x = as_nchw(x)
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    ho, wo = conv_output_hw(h, w, window, window, stride, 0)
    flat = _windows(x, window, window, stride).reshape(n, c, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if cache is not None:
        cache.update(x_shape=x.shape, window=window, stride=stride, idx=idx)
    return check_finite(out, "max_pool")


def max_pool_backward(dout: np.ndarray, cache: dict) -> np.ndarray:
    _need(cache, "max_pool")
    k, s, idx = cache["window"], cache["stride"], cache["idx"]
    n, c, ho, wo = dout.shape
    dwin = np.zeros((n, c, k, k, ho, wo), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dwin[:, :, i, j] = dout * (idx == i * k + j)
    return _scatter_windows(dwin, cache["x_shape"], s)


def global_avg_pool(x, cache: dict | None = None) -> np.ndarray:
    x = as_nchw(x)
    if cache is not None:
        cache["x_shape"] = x.shape
    return check_finite(x.mean(axis=(2, 3), keepdims=True), "global_avg_pool")


def global_avg_pool_backward(dout: np.ndarray, cache: dict) -> np.ndarray:
    _need(cache, "global_avg_pool")
    n, c, h, w = cache["x_shape"]
    return np.broadcast_to(dout / (h * w), (n, c, h, w)).copy()


def linear(x, weight, bias=None, cache: dict | None = None) -> np.ndarray:
    """Affine map on inputs flattened to (N, D); weight is (K, D)."""
    x = np.asarray(x)
    w = _value(weight)
    x2 = x.reshape(x.shape[0], -1)
    if w.ndim != 2 or w.shape[1] != x2.shape[1]:
        raise ShapeError(f"linear: input has {x2.shape[1]} features, weight is {w.shape}")
    out = x2 @ w.T
    if bias is not None:
        b = _value(bias)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match {w.shape[0]} outputs")
        out = out + b
    if cache is not None:
        cache.update(x2=x2, x_shape=x.shape, w=w, has_bias=bias is not None)
    return check_finite(out, "linear")


def linear_backward(dout: np.ndarray, cache: dict):
    _need(cache, "linear")
    x2, w = cache["x2"], cache["w"]
    dx = (dout @ w).reshape(cache["x_shape"])
    dw = dout.T @ x2
    db = dout.sum(axis=0) if cache["has_bias"] else None
    return dx, dw, db


def dropout(x, keep_prob: float, training: bool, rng: np.random.Generator | None = None, cache: dict | None = None):
    """Inverted dropout: survivors are scaled by ``1/keep_prob`` at training time."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    x = np.asarray(x)
    if not training or keep_prob == 1.0:
        if cache is not None:
            cache["mask"] = None
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) < keep_prob).astype(x.dtype) / x.dtype.type(keep_prob)
    if cache is not None:
        cache["mask"] = mask
    return x * mask


def dropout_backward(dout: np.ndarray, cache: dict) -> np.ndarray:
    _need(cache, "dropout")
    mask = cache["mask"]
    return dout if mask is None else dout * mask


def concat_channels(a, b) -> np.ndarray:
    a, b = as_nchw(a, "a"), as_nchw(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} differ outside the channel axis")
    return np.concatenate([a, b], axis=1)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean categorical cross-entropy.

    Returns ``(loss, probs, grad_logits)`` with ``grad_logits = (probs - onehot) / N``.
    """
    z = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {z.shape} vs labels {labels.shape}")
    n, k = z.shape
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    check_finite(np.asarray(loss), "softmax_cross_entropy")
    return loss, probs, grad
