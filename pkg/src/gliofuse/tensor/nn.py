"""Layer primitives for 2D and 3D networks, all rank-generic over spatial axes.

Layout is channels-first: ``(N, C, *spatial)``.
"""
from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, as_tensor, make_node, unbroadcast


def _tuple(v, n: int, name: str) -> tuple[int, ...]:
    t = (int(v),) * n if np.isscalar(v) else tuple(int(x) for x in v)
    if len(t) != n:
        raise ValueError(f"{name} needs {n} entries, got {t}")
    return t


def _windows(xp: np.ndarray, kernel, stride, out):
    """Strided window view (N, C, *out, *kernel) over a padded input."""
    nd = len(kernel)
    win = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(slice(0, s * (o - 1) + 1, s) for s, o in zip(stride, out))
    return win[sl]


def _offset_slices(idx, stride, out):
    return tuple(slice(i, i + s * (o - 1) + 1, s) for i, s, o in zip(idx, stride, out))


def _col2im(dcols: np.ndarray, padded_shape, kernel, stride, out) -> np.ndarray:
    """Scatter-add window gradients (N, C, *kernel, *out) back onto the padded grid."""
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for idx in itertools.product(*(range(k) for k in kernel)):
        dxp[(slice(None), slice(None)) + _offset_slices(idx, stride, out)] += dcols[(slice(None), slice(None)) + idx]
    return dxp


def _unpad(a: np.ndarray, padding) -> np.ndarray:
    return a[(slice(None), slice(None)) + tuple(slice(p, a.shape[2 + i] - p) for i, p in enumerate(padding))]


def conv(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` (N, Cin, *S) with ``kernel`` (Cout, Cin, *K)."""
    nd = x.ndim - 2
    if nd not in (1, 2, 3) or kernel.ndim != nd + 2:
        raise ValueError(f"conv: input rank {x.ndim} and kernel rank {kernel.ndim} disagree")
    n, cin = x.shape[:2]
    cout, kin = kernel.shape[:2]
    if cin != kin:
        raise ValueError(f"conv: input has {cin} channels, kernel expects {kin}")
    stride = _tuple(stride, nd, "stride")
    padding = _tuple(padding, nd, "padding")
    if min(stride) < 1:
        raise ValueError("conv: stride must be positive")
    ks = kernel.shape[2:]
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(p, p) for p in padding]) if any(padding) else x.data
    if any(k > s for k, s in zip(ks, xp.shape[2:])):
        raise ValueError(f"conv: kernel {ks} larger than padded input {xp.shape[2:]}")
    out_sz = tuple((s - k) // st + 1 for s, k, st in zip(xp.shape[2:], ks, stride))
    win = _windows(xp, ks, stride, out_sz)
    # (N, *out, Cin, *K) rows match the flattened kernel layout
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    m = n * int(np.prod(out_sz))
    cols = np.ascontiguousarray(win.transpose(perm)).reshape(m, -1)
    wmat = kernel.data.reshape(cout, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    out = np.ascontiguousarray(np.moveaxis(y.reshape((n,) + out_sz + (cout,)), -1, 1))
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g2 = np.moveaxis(g, 1, -1).reshape(m, cout)
        gx = gw = gb = None
        if x.requires_grad:
            if all(s == 1 for s in stride):
                # unit stride: input gradient is a full correlation with the flipped kernel
                gp = np.pad(g, [(0, 0), (0, 0)] + [(k - 1, k - 1) for k in ks])
                flipped = np.flip(kernel.data, axis=tuple(range(2, 2 + nd))).swapaxes(0, 1)
                gcols = np.ascontiguousarray(
                    _windows(gp, ks, stride, xp.shape[2:]).transpose(perm)).reshape(-1, cout * int(np.prod(ks)))
                dxp = gcols @ flipped.reshape(cin, -1).T
                dxp = np.moveaxis(dxp.reshape((n,) + xp.shape[2:] + (cin,)), -1, 1)
                gx = np.ascontiguousarray(_unpad(dxp, padding))
            else:
                dcols = (g2 @ wmat).reshape((n,) + out_sz + (cin,) + ks)
                back = (0, 1 + nd) + tuple(range(2 + nd, 2 + 2 * nd)) + tuple(range(1, 1 + nd))
                gx = _unpad(_col2im(dcols.transpose(back), xp.shape, ks, stride, out_sz), padding)
        if kernel.requires_grad:
            gw = (g2.T @ cols).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_node(out, parents, "conv", bw)


def maxpool(x: Tensor, window=2, stride=None, padding=0) -> Tensor:
    """Window maximum; gradient goes to the first (row-major) maximal element."""
    nd = x.ndim - 2
    window = _tuple(window, nd, "window")
    stride = window if stride is None else _tuple(stride, nd, "stride")
    padding = _tuple(padding, nd, "padding")
    xp = x.data
    if any(padding):
        xp = np.pad(xp, [(0, 0), (0, 0)] + [(p, p) for p in padding], constant_values=-np.inf)
    if any(w > s for w, s in zip(window, xp.shape[2:])):
        raise ValueError(f"maxpool: window {window} larger than input {xp.shape[2:]}")
    out_sz = tuple((s - w) // st + 1 for s, w, st in zip(xp.shape[2:], window, stride))
    win = _windows(xp, window, stride, out_sz)
    flat = win.reshape(win.shape[: 2 + nd] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for j, idx in enumerate(itertools.product(*(range(w) for w in window))):
            dxp[(slice(None), slice(None)) + _offset_slices(idx, stride, out_sz)] += np.where(arg == j, g, 0)
        return (_unpad(dxp, padding),)

    return make_node(np.ascontiguousarray(out), (x,), "maxpool", bw)


def upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour repetition along every spatial axis."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("upsample: factor must be >= 1")
    nd = x.ndim - 2
    out = x.data
    for ax in range(2, 2 + nd):
        out = np.repeat(out, factor, axis=ax)

    def bw(g):
        shp = list(x.shape[:2])
        for s in x.shape[2:]:
            shp += [s, factor]
        return (g.reshape(shp).sum(axis=tuple(range(3, 3 + 2 * nd, 2))),)

    return make_node(out, (x,), "upsample", bw)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(out, tensors, "concat", lambda g: tuple(np.split(g, bounds, axis=axis)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return make_node(s, (z,), "softmax", lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for x (N, Din), w (Din, Dout), b (Dout,)."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine: inner extents {x.shape[-1]} and {w.shape[0]} differ")
    out = x.data @ w.data
    if b is not None:
        if b.shape[-1] != w.shape[1]:
            raise ValueError("affine: bias length does not match output width")
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, unbroadcast(g, b.shape)

    return make_node(out, parents, "affine", bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, *S) -> (N, C)."""
    axes = tuple(range(2, x.ndim))
    n = int(np.prod(x.shape[2:]))
    return make_node(x.data.mean(axis=axes), (x,), "avgpool",
                     lambda g: (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)) / n, x.shape).copy(),))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, mode: str = "train",
               running: dict | None = None, momentum: float = 0.1) -> Tensor:
    """Per-channel normalisation over batch and spatial axes.

    ``running`` holds ``mean`` and ``var`` arrays; train mode updates them in
    place (when given), eval mode reads them.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if mode == "train":
        n = x.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if running is not None:
            unbiased = var.reshape(c) * (n / (n - 1) if n > 1 else 1.0)
            running["mean"] *= 1 - momentum
            running["mean"] += momentum * mu.reshape(c)
            running["var"] *= 1 - momentum
            running["var"] += momentum * unbiased
    elif mode == "eval":
        if running is None:
            raise ValueError("batch_norm: eval mode needs running statistics")
        inv = 1.0 / np.sqrt(running["var"].reshape(bshape) + eps)
        xhat = (x.data - running["mean"].reshape(bshape)) * inv
    else:
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    xhat = xhat.astype(x.dtype, copy=False)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if mode == "train":
            m = x.size // c
            gx = inv / m * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = dxhat * inv
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return make_node(out, (x, gamma, beta), "batch_norm", bw)


def dropout(x: Tensor, rate: float, seed=None, mode: str = "train") -> Tensor:
    """Inverted dropout.  ``seed`` may be an int or a numpy Generator."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return make_node(x.data * keep, (x,), "dropout", lambda g: (g * keep,))
