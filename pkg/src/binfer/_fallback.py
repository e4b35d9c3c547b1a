"""Numpy implementations of the convolution kernels.

Used when the compiled extension is unavailable, or forced with
``BINFER_PURE_PYTHON=1``. Signatures and results match ``_kernels.pyx``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Upper bound on elements materialized per filter chunk.
_CHUNK_ELEMS = 1 << 22


def _word_masks(nw, last_mask):
    masks = np.full(nw, 0xFFFFFFFF, dtype=np.uint32)
    masks[-1] = last_mask
    return masks


def xnor_dot_words(a, w, last_mask):
    a = np.asarray(a, dtype=np.uint32)
    w = np.asarray(w, dtype=np.uint32)
    if a.shape != w.shape:
        raise ValueError("word count mismatch")
    if a.size == 0:
        return 0
    return int(np.bitwise_count(~(a ^ w) & _word_masks(a.size, last_mask)).sum())


def xnor_conv2d(inp, filt, pad, last_mask):
    H, W, nw = inp.shape
    N, FH, FW, fnw = filt.shape
    if fnw != nw:
        raise ValueError(f"filter depth words {fnw} != input depth words {nw}")
    if nw == 0:
        raise ValueError("empty depth")
    padded = np.zeros((H + 2 * pad, W + 2 * pad, nw), dtype=np.uint32)
    padded[pad:pad + H, pad:pad + W] = inp
    if padded.shape[0] < FH or padded.shape[1] < FW:
        raise ValueError("filter larger than padded input")
    # (Ho, Wo, nw, FH, FW) -> (Ho, Wo, 1, FH, FW, nw)
    win = sliding_window_view(padded, (FH, FW), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    Ho, Wo = win.shape[:2]
    win = win[:, :, None]
    masks = _word_masks(nw, last_mask)

    out = np.empty((Ho, Wo, N), dtype=np.int32)
    step = max(1, _CHUNK_ELEMS // max(1, Ho * Wo * FH * FW * nw))
    for n0 in range(0, N, step):
        f = filt[n0:n0 + step]
        x = ~(win ^ f) & masks
        out[:, :, n0:n0 + step] = np.bitwise_count(x).sum(axis=(3, 4, 5), dtype=np.int32)
    return out


def fixed_conv2d(inp, filt, pad):
    H, W, D = inp.shape
    N, FH, FW, FD = filt.shape
    if FD != D:
        raise ValueError(f"filter depth {FD} != input depth {D}")
    padded = np.zeros((H + 2 * pad, W + 2 * pad, D), dtype=np.int64)
    padded[pad:pad + H, pad:pad + W] = inp
    if padded.shape[0] < FH or padded.shape[1] < FW:
        raise ValueError("filter larger than padded input")
    win = sliding_window_view(padded, (FH, FW), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    Ho, Wo = win.shape[:2]
    cols = win.reshape(Ho * Wo, FH * FW * D)
    return (cols @ filt.reshape(N, -1).astype(np.int64).T).reshape(Ho, Wo, N)
