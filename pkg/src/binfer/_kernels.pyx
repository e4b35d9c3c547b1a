"""Compiled XNOR-popcount and fixed-point convolution kernels.

Array layouts match :mod:`binfer._fallback`; both modules expose the same
three functions and must agree bit for bit.
"""
import numpy as np

from libc.stdint cimport int8_t, int32_t, int64_t, uint32_t

cdef extern from *:
    """
    static inline int bf_popcount32(unsigned int x) { return __builtin_popcount(x); }
    """
    int bf_popcount32(unsigned int x) nogil


def xnor_dot_words(const uint32_t[::1] a, const uint32_t[::1] w, uint32_t last_mask):
    cdef Py_ssize_t nw = a.shape[0], k
    cdef int64_t acc = 0
    if w.shape[0] != nw:
        raise ValueError("word count mismatch")
    if nw == 0:
        return 0
    with nogil:
        for k in range(nw - 1):
            acc += bf_popcount32(~(a[k] ^ w[k]))
        acc += bf_popcount32(~(a[nw - 1] ^ w[nw - 1]) & last_mask)
    return acc


def xnor_conv2d(const uint32_t[:, :, ::1] inp, const uint32_t[:, :, :, ::1] filt,
                int pad, uint32_t last_mask):
    cdef Py_ssize_t H = inp.shape[0], W = inp.shape[1], nw = inp.shape[2]
    cdef Py_ssize_t N = filt.shape[0], FH = filt.shape[1], FW = filt.shape[2]
    cdef Py_ssize_t Ho, Wo, oh, ow, n, kh, kw, k, ih, iw, last
    cdef int32_t acc, s
    if filt.shape[3] != nw:
        raise ValueError("filter depth words %d != input depth words %d" % (filt.shape[3], nw))
    if nw == 0:
        raise ValueError("empty depth")
    Ho = H + 2 * pad - FH + 1
    Wo = W + 2 * pad - FW + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError("filter larger than padded input")
    last = nw - 1

    out = np.empty((Ho, Wo, N), dtype=np.int32)
    pad_pop = np.empty((N, FH, FW), dtype=np.int32)
    cdef int32_t[:, :, ::1] o = out
    cdef int32_t[:, :, ::1] pp = pad_pop

    with nogil:
        # A pad tap holds all-zero words, so XNOR leaves ~filter.
        for n in range(N):
            for kh in range(FH):
                for kw in range(FW):
                    s = 0
                    for k in range(last):
                        s += bf_popcount32(~filt[n, kh, kw, k])
                    s += bf_popcount32(~filt[n, kh, kw, last] & last_mask)
                    pp[n, kh, kw] = s

        for oh in range(Ho):
            for ow in range(Wo):
                for n in range(N):
                    acc = 0
                    for kh in range(FH):
                        ih = oh + kh - pad
                        for kw in range(FW):
                            iw = ow + kw - pad
                            if ih < 0 or ih >= H or iw < 0 or iw >= W:
                                acc += pp[n, kh, kw]
                                continue
                            for k in range(last):
                                acc += bf_popcount32(~(inp[ih, iw, k] ^ filt[n, kh, kw, k]))
                            acc += bf_popcount32(
                                ~(inp[ih, iw, last] ^ filt[n, kh, kw, last]) & last_mask)
                    o[oh, ow, n] = acc
    return out


def fixed_conv2d(const int32_t[:, :, ::1] inp, const int8_t[:, :, :, ::1] filt, int pad):
    cdef Py_ssize_t H = inp.shape[0], W = inp.shape[1], D = inp.shape[2]
    cdef Py_ssize_t N = filt.shape[0], FH = filt.shape[1], FW = filt.shape[2]
    cdef Py_ssize_t Ho, Wo, oh, ow, n, kh, kw, d, ih, iw
    if filt.shape[3] != D:
        raise ValueError("filter depth %d != input depth %d" % (filt.shape[3], D))
    Ho = H + 2 * pad - FH + 1
    Wo = W + 2 * pad - FW + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError("filter larger than padded input")

    # filters laid out (kh, kw, d, n) so the innermost loop runs over
    # contiguous output channels
    ft_arr = np.ascontiguousarray(np.transpose(np.asarray(filt), (1, 2, 3, 0)), dtype=np.int64)
    out = np.zeros((Ho, Wo, N), dtype=np.int64)
    cdef const int64_t[:, :, :, ::1] ft = ft_arr
    cdef int64_t[:, :, ::1] o = out
    cdef int64_t v
    cdef int64_t* orow
    cdef const int64_t* frow
    with nogil:
        for oh in range(Ho):
            for kh in range(FH):
                ih = oh + kh - pad
                if ih < 0 or ih >= H:
                    continue
                for ow in range(Wo):
                    for kw in range(FW):
                        iw = ow + kw - pad
                        if iw < 0 or iw >= W:
                            continue
                        orow = &o[oh, ow, 0]
                        for d in range(D):
                            v = inp[ih, iw, d]
                            frow = &ft[kh, kw, d, 0]
                            for n in range(N):
                                orow[n] += v * frow[n]
    return out
