"""Dense kernels with hand-written reverse-mode gradients.

Arrays are plain ``numpy.ndarray``; forward functions return ``(out, cache)``
and the matching ``*_backward(cache, grad_out)`` returns input/parameter
gradients. Verification runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np
from scipy.special import erf

__all__ = [
    "MhsaParams",
    "finite_diff_check",
    "finite_diff_grad",
    "gelu",
    "gelu_backward",
    "init_linear",
    "layernorm",
    "layernorm_backward",
    "linear",
    "linear_backward",
    "mhsa_backward",
    "mhsa_forward",
    "mlp1",
    "mlp1_backward",
    "ordered_sum",
    "softmax",
    "softmax_backward",
]

LN_EPS = 1e-6
_MASKED_LOGIT = -1e30
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def ordered_sum(a: np.ndarray, axis: int) -> np.ndarray:
    """Sum along ``axis`` in value order, so the result is bitwise invariant
    under any permutation of that axis."""
    return np.sort(a, axis=axis).sum(axis=axis)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64):
    """Fan-in scaled uniform weights ``(fan_in, fan_out)`` and a zero bias."""
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    return w, np.zeros(fan_out, dtype=dtype)


# -- elementwise / row kernels -----------------------------------------------


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, gy: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (gy - np.sum(gy * y, axis=axis, keepdims=True))


def linear(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def linear_backward(cache, gy):
    x, w, has_bias = cache
    gx = gy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = gy.reshape(-1, gy.shape[-1])
    gw = x2.T @ g2
    gb = g2.sum(axis=0) if has_bias else None
    return gx, gw, gb


def gelu(x):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(cache, gy):
    x, cdf = cache
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)


def layernorm(x, gamma, beta, eps: float = LN_EPS):
    """Normalise over the last (channel) axis with learnable scale and shift."""
    # shift by the first element so constant rows centre to exactly zero
    x0 = x[..., :1]
    mu = x0 + (x - x0).mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layernorm_backward(cache, gy):
    xhat, inv, gamma = cache
    c = xhat.shape[-1]
    flat_g = gy.reshape(-1, c)
    flat_h = xhat.reshape(-1, c)
    ggamma = (flat_g * flat_h).sum(axis=0)
    gbeta = flat_g.sum(axis=0)
    gxhat = gy * gamma
    gx = inv * (
        gxhat
        - gxhat.mean(axis=-1, keepdims=True)
        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, ggamma, gbeta


def mlp1(x, w1, b1, w2, b2):
    """Single-hidden-layer MLP: ``linear -> GELU -> linear``."""
    h, c1 = linear(x, w1, b1)
    a, cg = gelu(h)
    y, c2 = linear(a, w2, b2)
    return y, (c1, cg, c2)


def mlp1_backward(cache, gy):
    c1, cg, c2 = cache
    ga, gw2, gb2 = linear_backward(c2, gy)
    gh = gelu_backward(cg, ga)
    gx, gw1, gb1 = linear_backward(c1, gh)
    return gx, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}


# -- multi-head self-attention ---------------------------------------------


@dataclass
class MhsaParams:
    """Weights of one multi-head self-attention layer.

    Projection matrices are ``(C, C)`` laid out as ``x @ w``. ``bias`` is an
    optional additive logit term of shape ``(heads, seq, seq)``.
    """

    num_heads: int
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        c = self.wq.shape[0]
        if c % self.num_heads:
            raise ValueError(f"channels {c} not divisible by {self.num_heads} heads")

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.num_heads

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, num_heads: int, dtype=np.float64):
        ws = {}
        for name in ("q", "k", "v", "o"):
            ws["w" + name], ws["b" + name] = init_linear(rng, channels, channels, dtype)
        return cls(num_heads=num_heads, **ws)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name != "num_heads" and getattr(self, f.name) is not None
        }

    def with_arrays(self, **arrays) -> "MhsaParams":
        return replace(self, **arrays)


def _split_heads(t, heads):
    *lead, n, c = t.shape
    return np.moveaxis(t.reshape(*lead, n, heads, c // heads), -2, -3)


def _merge_heads(t):
    t = np.moveaxis(t, -3, -2)
    *lead, n, h, d = t.shape
    return t.reshape(*lead, n, h * d)


def _rowwise_project(x, w, b):
    # accumulation order independent of the row's position in x
    return (x[..., :, :, None] * w).sum(axis=-2) + b


def mhsa_forward(
    x: np.ndarray,
    p: MhsaParams,
    bias: np.ndarray | None = None,
    key_mask: np.ndarray | None = None,
    exact: bool = False,
):
    """Scaled dot-product multi-head self-attention.

    ``x`` is ``(..., seq, C)``. ``bias`` (``(heads, seq, seq)``) overrides
    ``p.bias`` and is added to the logits before the softmax. ``key_mask``
    (``(..., seq)`` booleans) removes keys from attention. With ``exact``
    every reduction over the sequence axis is value-ordered, making outputs
    bitwise equivariant under token permutation; it costs a sort and is
    meant for short sequences.
    """
    if x.ndim < 2 or x.shape[-1] != p.channels:
        raise ValueError(f"expected (..., seq, {p.channels}) input, got {x.shape}")
    n = x.shape[-2]
    if bias is None:
        bias = p.bias
    if bias is not None and bias.shape != (p.num_heads, n, n):
        raise ValueError(f"bias must be {(p.num_heads, n, n)}, got {bias.shape}")
    h = p.num_heads
    scale = 1.0 / math.sqrt(p.head_dim)

    if exact:
        q = _rowwise_project(x, p.wq, p.bq)
        k = _rowwise_project(x, p.wk, p.bk)
        v = _rowwise_project(x, p.wv, p.bv)
    else:
        q = x @ p.wq + p.bq
        k = x @ p.wk + p.bk
        v = x @ p.wv + p.bv
    qh, kh, vh = _split_heads(q, h), _split_heads(k, h), _split_heads(v, h)

    if exact:
        logits = (qh[..., :, None, :] * kh[..., None, :, :]).sum(axis=-1) * scale
    else:
        logits = (qh @ np.swapaxes(kh, -1, -2)) * scale
    if bias is not None:
        logits = logits + bias
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)[..., None, None, :]
        logits = np.where(km, logits, _MASKED_LOGIT)

    if exact:
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        attn = e / ordered_sum(e, axis=-1)[..., None]
        oh = ordered_sum(attn[..., :, :, None] * vh[..., None, :, :], axis=-2)
    else:
        attn = softmax(logits, axis=-1)
        oh = attn @ vh
    o = _merge_heads(oh)
    if exact:
        y = _rowwise_project(o, p.wo, p.bo)
    else:
        y = o @ p.wo + p.bo
    cache = (x, qh, kh, vh, attn, o, scale, p)
    return y, cache


def mhsa_backward(cache, gy: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of an :func:`mhsa_forward` call.

    Returns a dict with ``x``, every projection weight/bias, and ``bias``
    (the logit bias, summed over leading batch axes).
    """
    x, qh, kh, vh, attn, o, scale, p = cache
    h = p.num_heads
    c = x.shape[-1]

    def wgrad(inp, g):
        return inp.reshape(-1, c).T @ g.reshape(-1, c), g.reshape(-1, c).sum(axis=0)

    grads = {}
    grads["wo"], grads["bo"] = wgrad(o, gy)
    go = _split_heads(gy @ p.wo.T, h)
    gattn = go @ np.swapaxes(vh, -1, -2)
    gvh = np.swapaxes(attn, -1, -2) @ go
    glog = softmax_backward(attn, gattn, axis=-1)
    grads["bias"] = glog.reshape(-1, *glog.shape[-3:]).sum(axis=0)
    gqh = (glog @ kh) * scale
    gkh = (np.swapaxes(glog, -1, -2) @ qh) * scale
    gq, gk, gv = _merge_heads(gqh), _merge_heads(gkh), _merge_heads(gvh)
    grads["wq"], grads["bq"] = wgrad(x, gq)
    grads["wk"], grads["bk"] = wgrad(x, gk)
    grads["wv"], grads["bv"] = wgrad(x, gv)
    grads["x"] = gq @ p.wq.T + gk @ p.wk.T + gv @ p.wv.T
    return grads


# -- finite-difference oracle ----------------------------------------------


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max gradient discrepancy between ``analytic`` and central differences.

    The error is ``max|g_analytic - g_numeric| / max(1, max|g_numeric|)``:
    relative to the gradient's scale, and absolute once that scale drops
    below one (so a vanishing gradient does not divide by round-off).
    """
    numeric = finite_diff_grad(f, x, h)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"gradient shape {analytic.shape} != input shape {numeric.shape}")
    denom = max(1.0, float(np.max(np.abs(numeric), initial=0.0)))
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / denom)
