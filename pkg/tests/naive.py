"""Slow loop-based references, independent of numpy vectorization and packing."""
import numpy as np

WORDBITS = 32


def pack_column_bits(bits):
    """Per-bit loop packing of one depth column into python ints (LSB first)."""
    words = [0] * (-(-len(bits) // WORDBITS))
    for d, b in enumerate(bits):
        if b:
            words[d // WORDBITS] |= 1 << (d % WORDBITS)
    return words


def xnor_count(a_bits, w_bits):
    return sum(1 for x, y in zip(a_bits, w_bits) if x == y)


def binary_conv_bits(in_bits, filt_bits, pad=1):
    """Loop-level binary conv over 0/1 arrays; pad taps carry bit 0.

    ``in_bits`` is (H, W, D), ``filt_bits`` (N, FH, FW, D); returns match counts.
    """
    H, W, D = in_bits.shape
    N, FH, FW, _ = filt_bits.shape
    out = np.zeros((H + 2 * pad - FH + 1, W + 2 * pad - FW + 1, N), dtype=np.int64)
    for oh in range(out.shape[0]):
        for ow in range(out.shape[1]):
            for n in range(N):
                acc = 0
                for kh in range(FH):
                    for kw in range(FW):
                        ih, iw = oh + kh - pad, ow + kw - pad
                        inside = 0 <= ih < H and 0 <= iw < W
                        for d in range(D):
                            a = int(in_bits[ih, iw, d]) if inside else 0
                            acc += a == int(filt_bits[n, kh, kw, d])
                out[oh, ow, n] = acc
    return out


def conv6(fmap, filters, pad_value, pad=1):
    """Six nested loops straight from the convolution sum."""
    H, W, D = fmap.shape
    N, FH, FW, _ = filters.shape
    Ho, Wo = H + 2 * pad - FH + 1, W + 2 * pad - FW + 1
    out = np.zeros((Ho, Wo, N))
    for n in range(N):
        for oh in range(Ho):
            for ow in range(Wo):
                s = 0.0
                for kh in range(FH):
                    for kw in range(FW):
                        for d in range(D):
                            ih, iw = oh + kh - pad, ow + kw - pad
                            v = fmap[ih, iw, d] if 0 <= ih < H and 0 <= iw < W else pad_value
                            s += filters[n, kh, kw, d] * v
                out[oh, ow, n] = s
    return out


def max_pool_scan(y):
    H, W, D = y.shape
    out = np.empty((H // 2, W // 2, D), dtype=y.dtype)
    for i in range(H // 2):
        for j in range(W // 2):
            for d in range(D):
                out[i, j, d] = max(y[2 * i, 2 * j, d], y[2 * i + 1, 2 * j, d],
                                   y[2 * i, 2 * j + 1, d], y[2 * i + 1, 2 * j + 1, d])
    return out
