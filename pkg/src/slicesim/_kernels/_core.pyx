# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pure.py``.

Arithmetic is written operation-for-operation like the numpy versions so the
results are bit-identical; do not build with -ffast-math.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, copysign, rint, trunc

cnp.import_array()

cdef double TIE_SCALE = 1e12


cdef inline double _round_half_away(double x) noexcept nogil:
    cdef double t = trunc(x)
    if fabs(x - t) >= 0.5:
        return t + copysign(1.0, x)
    return t


cdef inline double _clip(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def quantize_groups(w, Py_ssize_t group_size, int bits, bint asymmetric):
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0]
    cdef Py_ssize_t n_groups = (n + group_size - 1) // group_size
    cdef double qmax = (1 << bits) - 1
    cdef double half = (1 << (bits - 1)) - 1
    cdef double mid = 1 << (bits - 1)

    codes = np.empty(n, dtype=np.uint8)
    scales = np.empty(n_groups, dtype=np.float32)
    zps = np.empty(n_groups, dtype=np.uint8)
    cdef unsigned char[::1] cv = codes
    cdef float[::1] sv = scales
    cdef unsigned char[::1] zv = zps

    cdef Py_ssize_t g, i, lo, hi
    cdef double mn, mx, rng, amax, s64, zp, x
    cdef float s32
    with nogil:
        for g in range(n_groups):
            lo = g * group_size
            hi = lo + group_size
            if hi > n:
                hi = n
            mn = wv[lo]
            mx = wv[lo]
            for i in range(lo + 1, hi):
                x = wv[i]
                if x < mn:
                    mn = x
                if x > mx:
                    mx = x
            if asymmetric:
                rng = mx - mn
                if rng == 0.0:
                    s64 = fabs(mn)
                    if s64 == 0.0:
                        s64 = 1.0
                    s32 = <float>s64
                    if s32 == 0:
                        s32 = 1.0
                        s64 = 1.0
                    zp = _round_half_away(-mn / s64)
                else:
                    s64 = rng / qmax
                    s32 = <float>s64
                    if s32 == 0:
                        s32 = 1.0
                        s64 = 1.0
                    zp = _round_half_away((-mn * qmax) / rng)
                zp = _clip(zp, 0.0, qmax)
            else:
                amax = fabs(mn)
                if fabs(mx) > amax:
                    amax = fabs(mx)
                if amax == 0.0:
                    s64 = 1.0
                else:
                    s64 = amax / half
                s32 = <float>s64
                if s32 == 0:
                    s32 = 1.0
                    s64 = 1.0
                zp = mid
            sv[g] = s32
            zv[g] = <unsigned char>zp
            for i in range(lo, hi):
                cv[i] = <unsigned char>_clip(_round_half_away(wv[i] / s64) + zp, 0.0, qmax)
    return codes, scales, zps


def dequantize_groups(codes, scales, zero_points, Py_ssize_t group_size):
    cdef const unsigned char[::1] cv = np.ascontiguousarray(codes, dtype=np.uint8)
    cdef const float[::1] sv = np.ascontiguousarray(scales, dtype=np.float32)
    cdef const unsigned char[::1] zv = np.ascontiguousarray(zero_points, dtype=np.uint8)
    cdef Py_ssize_t n = cv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, g
    with nogil:
        for i in range(n):
            g = i // group_size
            ov[i] = <double>sv[g] * (<double>cv[i] - <double>zv[g])
    return out


def split_codes(codes, int shift):
    cdef const unsigned char[::1] cv = np.ascontiguousarray(codes, dtype=np.uint8)
    cdef Py_ssize_t n = cv.shape[0]
    high = np.empty(n, dtype=np.uint8)
    low = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] hv = high
    cdef unsigned char[::1] lv = low
    cdef unsigned char mask = (1 << shift) - 1
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            hv[i] = cv[i] >> shift
            lv[i] = cv[i] & mask
    return high, low


def merge_codes(high, low, int shift):
    cdef const unsigned char[::1] hv = np.ascontiguousarray(high, dtype=np.uint8)
    cdef const unsigned char[::1] lv = np.ascontiguousarray(low, dtype=np.uint8)
    cdef Py_ssize_t n = hv.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ov[i] = <unsigned char>(((<unsigned int>hv[i]) << shift) | lv[i])
    return out


cdef void _stable_desc_order(const double[::1] v, Py_ssize_t[::1] order, double[::1] keys) noexcept nogil:
    # insertion sort; E is small and the input is usually nearly sorted
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, j, idx
    cdef double key
    for i in range(n):
        keys[i] = rint(v[i] * TIE_SCALE)
    for i in range(n):
        idx = i
        key = keys[i]
        j = i - 1
        while j >= 0 and keys[order[j]] < key:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = idx


def topk(values, Py_ssize_t k):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    if k > n:
        k = n
    out = np.empty(k, dtype=np.int64)
    cdef long long[::1] ov = out
    cdef Py_ssize_t i, j, best
    cdef double bkey, key
    if k * 4 >= n:
        order = np.empty(n, dtype=np.intp)
        keys = np.empty(n, dtype=np.float64)
        _stable_desc_order(v, order, keys)
        return order[:k].astype(np.int64)
    taken = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] tv = taken
    with nogil:
        for i in range(k):
            best = -1
            bkey = 0.0
            for j in range(n):
                if tv[j]:
                    continue
                key = rint(v[j] * TIE_SCALE)
                if best < 0 or key > bkey:
                    best = j
                    bkey = key
            tv[best] = 1
            ov[i] = best
    return out


def cumsum_prefix(values, double mass):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    order = np.empty(n, dtype=np.intp)
    keys = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] o = order
    _stable_desc_order(v, o, keys)
    cdef Py_ssize_t i, count = n
    cdef double c = 0.0
    for i in range(n):
        c += v[o[i]]
        if c >= mass - 1e-12:
            count = i + 1
            break
    return order[:count].astype(np.int64)


def topk_rows(matrix, Py_ssize_t k):
    cdef const double[:, ::1] m = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef Py_ssize_t rows = m.shape[0]
    cdef Py_ssize_t n = m.shape[1]
    if k > n:
        k = n
    out = np.empty((rows, k), dtype=np.int64)
    cdef long long[:, ::1] ov = out
    order = np.empty(n, dtype=np.intp)
    keys = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] o = order
    cdef double[::1] kv = keys
    cdef Py_ssize_t r, i
    with nogil:
        for r in range(rows):
            _stable_desc_order(m[r], o, kv)
            for i in range(k):
                ov[r, i] = o[i]
    return out
