"""Reference inference in the +/-1 / real domain.

Nothing here touches packed words: activations are float arrays of +/-1,
convolution is a literal sum of products over the padded window, and
normalization is evaluated as real-valued batch-norm followed by a sign
step. Slow by design; used as ground truth for the packed path.

Threshold modes for the sign step:

``"exact"``
    ``Binarize(BN(y))`` evaluated directly in double precision.
``"rounded"``
    the zero crossing of ``BN`` is moved to the nearest attainable
    accumulator value (ties away from zero) before comparing, which is
    what integer hardware with one stored constant per channel computes.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .layers import LayerKind

PAD_BINARY = -1.0
PAD_FIRST = 0.0


def as_real_tensor(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("tensor contains non-finite values")
    return x


def conv_real(fmap, filters, pad_value, pad=1):
    """Same-padded stride-1 convolution, ``(H, W, D) x (N, FH, FW, D) -> (Ho, Wo, N)``."""
    fmap = as_real_tensor(fmap)
    filters = as_real_tensor(filters)
    H, W, D = fmap.shape
    N, FH, FW, FD = filters.shape
    if FD != D:
        raise ValueError(f"filter depth {FD} != map depth {D}")
    padded = np.full((H + 2 * pad, W + 2 * pad, D), pad_value, dtype=np.float64)
    padded[pad:pad + H, pad:pad + W] = fmap
    Ho, Wo = H + 2 * pad - FH + 1, W + 2 * pad - FW + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("filter larger than padded map")
    out = np.zeros((Ho, Wo, N))
    for h in range(FH):
        for w in range(FW):
            out += padded[h:h + Ho, w:w + Wo, :] @ filters[:, h, w, :].T
    return out


def batchnorm_real(y, p):
    s2 = p.sigma2 + p.epsilon
    if np.any(s2 <= 0):
        raise ValueError("sigma2 + epsilon must be positive")
    return (np.asarray(y, dtype=np.float64) - p.mu) / np.sqrt(s2) * p.gamma + p.beta


def binarize_real(z):
    return (np.asarray(z) >= 0).astype(np.uint8)


def xnor_dot_pm1(a, w):
    a = np.asarray(a).ravel()
    w = np.asarray(w).ravel()
    if a.size != w.size:
        raise ValueError("length mismatch")
    for v in (a, w):
        if not np.all((v == 1) | (v == -1)):
            raise ValueError("elements must be +/-1")
    return int(np.sum(a.astype(np.int64) * w.astype(np.int64)))


def max_pool_real(y):
    H, W, D = y.shape
    out = np.empty((H // 2, W // 2, D))
    for i in range(H // 2):
        for j in range(W // 2):
            out[i, j] = np.max(y[2 * i:2 * i + 2, 2 * j:2 * j + 2], axis=(0, 1))
    return out


def _round_half_away(x):
    a = abs(x)
    r = math.floor(a)
    if a - r >= 0.5:
        r += 1
    return math.copysign(r, x)


def snapped_crossing(p, cnum=None):
    """Per-channel value of the pre-normalization sum at which ``BN`` crosses
    zero, snapped to the integer grid of the accumulator (NaN if gamma == 0).

    With ``cnum`` the accumulator counts matches (sum = 2 * count - cnum) and
    the snap happens on the count; without it, on the sum itself.
    """
    out = np.full(p.mu.shape, np.nan)
    for i in range(p.mu.size):
        g = p.gamma[i]
        if g == 0:
            continue
        std = math.sqrt(p.sigma2[i] + p.epsilon)
        if cnum is None:
            out[i] = _round_half_away(p.mu[i] - p.beta[i] * std / g)
        else:
            count = _round_half_away((cnum + p.mu[i] - p.beta[i] * std / g) * 0.5)
            out[i] = 2 * count - cnum
    return out


def norm_binarize_real(y, p, cnum=None, mode="rounded"):
    """Sign of batch-norm applied to the +/-1-domain sum ``y`` (channels last).

    ``cnum`` is None for the first layer, whose sums are not match counts.
    """
    y = np.asarray(y, dtype=np.float64)
    if mode == "exact":
        return binarize_real(batchnorm_real(y, p))
    if mode != "rounded":
        raise ValueError(f"unknown mode {mode!r}")
    t = snapped_crossing(p, cnum)
    g = np.broadcast_to(p.gamma, y.shape)
    b = np.broadcast_to(p.beta, y.shape)
    # Between crossings the sign of BN is the sign of gamma * (y - t).
    with np.errstate(invalid="ignore"):
        z = np.where(g == 0, b, g * (y - t))
    return binarize_real(z)


@dataclass
class OracleTrace:
    sums: list = field(default_factory=list)         # +/-1-domain conv outputs, pre-pool
    pooled: list = field(default_factory=list)
    activations: list = field(default_factory=list)  # +/-1 arrays
    scores: np.ndarray = None
    prediction: int = None


def forward(spec, weights_pm1, bn_params, image, mode="rounded"):
    """Reference pass.

    ``weights_pm1[i]`` is an ``(N, FH, FW, FD)`` array of +/-1;
    ``bn_params[i]`` holds the layer's raw batch-norm constants (the output
    layer's entry may be None for identity); ``image`` is ``(H, W, D)``.
    """
    x = as_real_tensor(image)
    tr = OracleTrace()
    for i, layer in enumerate(spec.layers):
        w = np.asarray(weights_pm1[i], dtype=np.float64)
        if layer.is_conv:
            pad_value = PAD_FIRST if layer.kind is LayerKind.CONV_FIRST else PAD_BINARY
            y = conv_real(x, w, pad_value, layer.pad)
        else:
            vec = x.reshape(-1)
            y = (w.reshape(layer.n_filters, -1) @ vec).reshape(1, 1, -1)
        tr.sums.append(y)
        p = bn_params[i]
        if layer.kind is LayerKind.FC_OUTPUT:
            scores = y.reshape(-1) if p is None else batchnorm_real(y.reshape(-1), p)
            tr.scores = np.asarray(scores, dtype=np.float64)
            tr.prediction = int(np.argmax(tr.scores))
            break
        if layer.pool_after:
            y = max_pool_real(y)
        tr.pooled.append(y)
        cnum = None if layer.kind is LayerKind.CONV_FIRST else layer.cnum
        x = norm_binarize_real(y, p, cnum, mode).astype(np.float64) * 2 - 1
        tr.activations.append(x)
    return tr
