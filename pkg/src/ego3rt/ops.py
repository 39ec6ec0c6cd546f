"""Dense-tensor kernel layer: parameters, linear maps, softmax variants,
bilinear sampling, normalization, activations and small convolutions.

Plain ``numpy.ndarray`` (row-major, float64 by default) is the tensor
type throughout the package.  Every differentiable operation here returns
``(output, backward)`` where ``backward(d_output)`` yields the gradients
with respect to the differentiable inputs, in argument order.  There is no
autodiff tape; composite models collect the closures they need and chain
them in reverse (see :func:`chain`).
"""

import numpy as np

from . import kernels
from .errors import DomainError, NumericError, ShapeError

FLOAT = np.float64


class Param:
    """A named learnable array with an accumulated gradient buffer."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, value, name="", trainable=True):
        self.value = np.ascontiguousarray(value, dtype=FLOAT)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.trainable = trainable

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Param({self.name!r}, shape={self.value.shape}{flag})"


class Block:
    """Base class for parameterized blocks; discovers Params by attribute walk."""

    def named_params(self, prefix=""):
        for key, obj in vars(self).items():
            name = f"{prefix}{key}" if not prefix else f"{prefix}.{key}"
            if isinstance(obj, Param):
                yield name, obj
            elif isinstance(obj, Block):
                yield from obj.named_params(name)
            elif isinstance(obj, (list, tuple)):
                for i, item in enumerate(obj):
                    if isinstance(item, Param):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Block):
                        yield from item.named_params(f"{name}.{i}")

    def params(self):
        for _, p in self.named_params():
            yield p

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()


def chain(backwards):
    """Compose single-argument backward closures, applied in reverse order."""

    def backward(d_out):
        for fn in reversed(backwards):
            d_out = fn(d_out)
        return d_out

    return backward


def ensure_finite(name, arr):
    """Raise NumericError if ``arr`` contains NaN or infinity."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr


# ---------------------------------------------------------------------------
# linear maps

def linear(weights, bias, x):
    """Affine map ``y = x @ weights.T + bias`` over the last axis of ``x``.

    ``weights`` is ``(n_out, n_in)``, ``bias`` ``(n_out,)``; ``x`` may carry
    arbitrary leading batch axes.  Backward returns ``(d_w, d_b, d_x)``.
    """
    weights = np.asarray(weights, dtype=FLOAT)
    bias = np.asarray(bias, dtype=FLOAT)
    x = np.asarray(x, dtype=FLOAT)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ShapeError(
            f"linear: weights {weights.shape} incompatible with input {x.shape}"
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} vs weights {weights.shape}")
    y = x @ weights.T + bias

    def backward(d_y):
        d_y = np.asarray(d_y, dtype=FLOAT)
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = d_y.reshape(-1, weights.shape[0])
        d_w = dy2.T @ x2
        d_b = dy2.sum(axis=0)
        d_x = d_y @ weights
        return d_w, d_b, d_x

    return y, backward


# ---------------------------------------------------------------------------
# softmax family

def grouped_softmax(logits, groups):
    """Softmax normalized independently inside each index group.

    ``groups`` is an iterable of integer index arrays into the flattened
    ``logits``; entries not covered by any group come out zero.  Computed
    with per-group max subtraction.  Backward returns ``(d_logits,)``.
    """
    logits = np.asarray(logits, dtype=FLOAT)
    flat = logits.reshape(-1)
    out = np.zeros_like(flat)
    groups = [np.asarray(g, dtype=np.intp).reshape(-1) for g in groups]
    for g in groups:
        if g.size == 0:
            raise DomainError("grouped_softmax: empty group")
        z = flat[g]
        z = np.exp(z - z.max())
        out[g] = z / z.sum()
    result = out.reshape(logits.shape)

    def backward(d_out):
        d_flat = np.asarray(d_out, dtype=FLOAT).reshape(-1)
        d_logits = np.zeros_like(flat)
        for g in groups:
            p = out[g]
            d = d_flat[g]
            d_logits[g] = p * (d - np.dot(p, d))
        return (d_logits.reshape(logits.shape),)

    return result, backward


def softmax_last(x):
    """Stable softmax over the last axis.  Backward returns ``(d_x,)``."""
    x = np.asarray(x, dtype=FLOAT)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    p = z / z.sum(axis=-1, keepdims=True)

    def backward(d_p):
        inner = (p * d_p).sum(axis=-1, keepdims=True)
        return (p * (d_p - inner),)

    return p, backward


def masked_softmax_last(x, mask):
    """Softmax over the last axis restricted to ``mask``-true entries.

    Masked entries get weight exactly 0.  Rows with no unmasked entry come
    out all-zero (reported by the accompanying ``empty`` boolean array).
    Returns ``(probs, empty_rows, backward)``.
    """
    x = np.asarray(x, dtype=FLOAT)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    neg = np.where(mask, x, -np.inf)
    peak = neg.max(axis=-1, keepdims=True)
    empty = ~mask.any(axis=-1)
    safe_peak = np.where(np.isfinite(peak), peak, 0.0)
    z = np.where(mask, np.exp(neg - safe_peak), 0.0)
    total = z.sum(axis=-1, keepdims=True)
    denom = np.where(total > 0.0, total, 1.0)
    p = z / denom

    def backward(d_p):
        inner = (p * d_p).sum(axis=-1, keepdims=True)
        return (np.where(mask, p * (d_p - inner), 0.0),)

    return p, empty, backward


# ---------------------------------------------------------------------------
# bilinear sampling

def bilinear_sample(fmap, locations):
    """Sample an ``(H, W, C)`` map at normalized ``(u, v)`` locations.

    ``(0, 0)`` addresses the center of the top-left cell and ``(1, 1)``
    the center of the bottom-right cell; components beyond ``[0, 1]`` are
    clamped to the border (replicate).  ``locations`` is ``(2,)`` or
    ``(N, 2)`` with columns ``(u, v)``; the result is ``(C,)`` or
    ``(N, C)``.  Backward returns ``(d_map, d_locations)``.
    """
    fmap = np.ascontiguousarray(fmap, dtype=FLOAT)
    if fmap.ndim != 3:
        raise ShapeError(f"bilinear_sample: map must be H x W x C, got {fmap.shape}")
    locs = np.asarray(locations, dtype=FLOAT)
    single = locs.ndim == 1
    locs = np.ascontiguousarray(locs.reshape(-1, 2))
    h, w, _ = fmap.shape
    rows = np.ascontiguousarray(locs[:, 1] * (h - 1))
    cols = np.ascontiguousarray(locs[:, 0] * (w - 1))
    out = kernels.sample_bilinear_fwd(fmap, rows, cols, wrap_cols=False)

    def backward(d_out):
        d_out2 = np.ascontiguousarray(
            np.asarray(d_out, dtype=FLOAT).reshape(out.shape)
        )
        d_map, d_rows, d_cols = kernels.sample_bilinear_bwd(
            fmap, rows, cols, d_out2, wrap_cols=False
        )
        d_locs = np.stack([d_cols * (w - 1), d_rows * (h - 1)], axis=1)
        if single:
            return d_map, d_locs[0]
        return d_map, d_locs

    return (out[0] if single else out), backward


# ---------------------------------------------------------------------------
# normalization and activations

def layer_norm(x, gain, bias, eps=1e-6):
    """Layer normalization over the last axis; backward -> (d_gain, d_bias, d_x)."""
    x = np.asarray(x, dtype=FLOAT)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain + bias
    n = x.shape[-1]

    def backward(d_y):
        d_gain = (d_y * xhat).reshape(-1, n).sum(axis=0)
        d_bias = d_y.reshape(-1, n).sum(axis=0)
        d_xhat = d_y * gain
        d_x = inv * (
            d_xhat
            - d_xhat.mean(axis=-1, keepdims=True)
            - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        return d_gain, d_bias, d_x

    return y, backward


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """Smooth GELU (tanh form); backward -> (d_x,)."""
    x = np.asarray(x, dtype=FLOAT)
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(d_y):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        d_x = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        return (d_y * d_x,)

    return y, backward


def sigmoid(x):
    """Logistic function; backward -> (d_x,)."""
    x = np.asarray(x, dtype=FLOAT)
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(d_y):
        return (d_y * y * (1.0 - y),)

    return y, backward


# ---------------------------------------------------------------------------
# small convolutions

def conv3x3(x, kernel, bias, stride=1, pad_mode="zero"):
    """3x3 convolution with padding 1 over an ``(H, W, C_in)`` map.

    ``kernel`` is ``(C_out, C_in, 3, 3)``; output ``(H', W', C_out)`` with
    ``H' = (H - 1) // stride + 1``.  ``pad_mode`` is ``"zero"`` or
    ``"edge"`` (replicate).  Backward -> (d_kernel, d_bias, d_x).
    """
    x = np.asarray(x, dtype=FLOAT)
    kernel = np.asarray(kernel, dtype=FLOAT)
    bias = np.asarray(bias, dtype=FLOAT)
    h, w, cin = x.shape
    cout = kernel.shape[0]
    if kernel.shape != (cout, cin, 3, 3) or bias.shape != (cout,):
        raise ShapeError(f"conv3x3: kernel {kernel.shape} vs input {x.shape}")
    if pad_mode not in ("zero", "edge"):
        raise DomainError(f"conv3x3: unknown pad mode {pad_mode!r}")
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    numpy_mode = "constant" if pad_mode == "zero" else "edge"
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode=numpy_mode)
    y = np.tile(bias, (ho, wo, 1)).astype(FLOAT)
    patches = {}
    for ki in range(3):
        for kj in range(3):
            patch = xp[ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            patches[ki, kj] = patch
            y += patch @ kernel[:, :, ki, kj].T

    def backward(d_y):
        d_y = np.asarray(d_y, dtype=FLOAT)
        d_k = np.zeros_like(kernel)
        d_xp = np.zeros_like(xp)
        dy2 = d_y.reshape(-1, cout)
        for ki in range(3):
            for kj in range(3):
                patch = patches[ki, kj].reshape(-1, cin)
                d_k[:, :, ki, kj] = dy2.T @ patch
                d_xp[ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                    d_y @ kernel[:, :, ki, kj]
                )
        d_b = dy2.sum(axis=0)
        d_x = d_xp[1:-1, 1:-1].copy()
        if pad_mode == "edge":
            d_x[0] += d_xp[0, 1:-1]
            d_x[-1] += d_xp[-1, 1:-1]
            d_x[:, 0] += d_xp[1:-1, 0]
            d_x[:, -1] += d_xp[1:-1, -1]
            d_x[0, 0] += d_xp[0, 0]
            d_x[0, -1] += d_xp[0, -1]
            d_x[-1, 0] += d_xp[-1, 0]
            d_x[-1, -1] += d_xp[-1, -1]
        return d_k, d_b, d_x

    return y, backward


def conv1x1(x, weights, bias):
    """Pointwise convolution: channel-mixing linear map on an (H, W, C) map."""
    return linear(weights, bias, x)


def depthwise_conv3x3(x, kernel, wrap_cols=False):
    """Per-channel 3x3 convolution over an ``(H, W, C)`` map.

    Rows are zero-padded; columns wrap periodically when ``wrap_cols`` is
    set (angular layouts) and are zero-padded otherwise.  ``kernel`` is
    ``(3, 3, C)``.  Backward -> (d_kernel, d_x).
    """
    x = np.ascontiguousarray(x, dtype=FLOAT)
    kernel = np.ascontiguousarray(kernel, dtype=FLOAT)
    if kernel.shape != (3, 3, x.shape[2]):
        raise ShapeError(f"depthwise_conv3x3: kernel {kernel.shape} vs {x.shape}")
    y = kernels.depthwise3x3_fwd(x, kernel, wrap_cols)

    def backward(d_y):
        d_y2 = np.ascontiguousarray(np.asarray(d_y, dtype=FLOAT))
        d_x, d_k = kernels.depthwise3x3_bwd(x, kernel, d_y2, wrap_cols)
        return d_k, d_x

    return y, backward
