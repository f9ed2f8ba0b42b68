"""Forward and backward passes for single-image ``(C, H, W)`` tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded ``same`` patches of ``x`` as a ``(C*k*k, H*W)`` matrix."""
    c, h, w = x.shape
    if k == 1:
        return x.reshape(c, h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, h * w)


def conv_forward(x, weight, bias, relu=False):
    """Stride-1 ``same`` convolution (cross-correlation) with optional ReLU."""
    cout, cin, k, _ = weight.shape
    _, h, w = x.shape
    cols = im2col(x, k)
    z = (weight.reshape(cout, -1) @ cols).reshape(cout, h, w)
    if bias is not None:
        z += bias[:, None, None]
    out = np.maximum(z, 0) if relu else z
    return out, (cols, x.shape, out if relu else None)


def conv_backward(dout, weight, cache, need_input_grad=True):
    cols, xshape, relu_out = cache
    cout, cin, k, _ = weight.shape
    if relu_out is not None:
        dout = dout * (relu_out > 0)
    d2 = dout.reshape(cout, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1)
    dx = None
    if need_input_grad:
        if k == 1:
            dx = (weight.reshape(cout, cin).T @ d2).reshape(xshape)
        else:
            # input gradient of a same conv = same conv of dout with the flipped, transposed kernel
            wt = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dx, _ = conv_forward(dout, np.ascontiguousarray(wt), None)
    return dx, dweight, dbias


def maxpool_forward(x):
    """2x2 max pooling with stride 2; the first maximum in a window wins ties."""
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool_backward(dout, cache):
    idx, (c, h, w) = cache
    dwin = np.zeros((c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def bilinear_kernel(factor: int) -> np.ndarray:
    """``(2f, 2f)`` kernel ``(1 - |a - c| / f) (1 - |b - c| / f)``, ``c = f - 1/2``."""
    size = 2 * factor
    center = factor - 0.5
    og = 1.0 - np.abs(np.arange(size) - center) / factor
    return np.outer(og, og)


def upconv_forward(x, weight, factor):
    """Channel-wise transposed convolution: stride ``f``, kernel ``2f``, crop ``f/2``.

    Output size is exactly ``f`` times the input size.  ``weight`` has shape
    ``(C, 2f, 2f)``.
    """
    c, h, w = x.shape
    f = factor
    tiles = np.zeros((c, h + 1, w + 1, f, f), dtype=np.result_type(x, weight))
    for ta in range(2):
        for tb in range(2):
            sub = weight[:, ta * f : (ta + 1) * f, tb * f : (tb + 1) * f]
            tiles[:, ta : ta + h, tb : tb + w] += x[:, :, :, None, None] * sub[:, None, None]
    full = tiles.transpose(0, 1, 3, 2, 4).reshape(c, (h + 1) * f, (w + 1) * f)
    p = f // 2
    return np.ascontiguousarray(full[:, p : p + h * f, p : p + w * f]), (x,)


def upconv_backward(dout, weight, factor, cache):
    (x,) = cache
    c, h, w = x.shape
    f = factor
    p = f // 2
    dfull = np.zeros((c, (h + 1) * f, (w + 1) * f), dtype=dout.dtype)
    dfull[:, p : p + h * f, p : p + w * f] = dout
    dtiles = dfull.reshape(c, h + 1, f, w + 1, f).transpose(0, 1, 3, 2, 4)
    dx = np.zeros_like(x)
    dweight = np.zeros_like(weight)
    for ta in range(2):
        for tb in range(2):
            block = dtiles[:, ta : ta + h, tb : tb + w]  # (C, H, W, f, f)
            sub = weight[:, ta * f : (ta + 1) * f, tb * f : (tb + 1) * f]
            dx += np.einsum("chwab,cab->chw", block, sub)
            dweight[:, ta * f : (ta + 1) * f, tb * f : (tb + 1) * f] = np.einsum("chwab,chw->cab", block, x)
    return dx, dweight


def split_log_softmax(logits, n_u):
    """Log-probabilities of the two heads (channels ``[:n_u]`` and ``[n_u:]``)."""
    out = []
    for part in (logits[:n_u], logits[n_u:]):
        shifted = part - part.max(axis=0, keepdims=True)
        out.append(shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True)))
    return out


def split_cross_entropy(logits, u_labels, v_labels, n_u, mean=True):
    """Summed cross-entropy of both heads and its gradient wrt ``logits``."""
    lpu, lpv = split_log_softmax(logits, n_u)
    h, w = u_labels.shape
    jj, ii = np.indices((h, w))
    loss = -(lpu[u_labels, jj, ii].sum() + lpv[v_labels, jj, ii].sum())
    grad = np.concatenate([np.exp(lpu), np.exp(lpv)], axis=0)
    grad[u_labels, jj, ii] -= 1.0
    grad[n_u + v_labels, jj, ii] -= 1.0
    if mean:
        loss /= h * w
        grad /= h * w
    return float(loss), grad
