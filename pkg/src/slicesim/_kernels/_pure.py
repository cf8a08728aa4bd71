"""Numpy implementations of the hot kernels.

Every function here has a twin in ``_core.pyx`` and the two must agree
bit for bit; the test suite runs both against each other.
"""
import numpy as np

# Keys for ordering gating scores; values closer than this are ties.
TIE_SCALE = 1e12


def round_half_away(x):
    # floor(|x| + 0.5) would round 0.49999999999999994 up
    t = np.trunc(x)
    return np.where(np.abs(x - t) >= 0.5, t + np.copysign(1.0, x), t)


def _stored_scales(scale64):
    """Float32 copies of the scales, plus the float64 values to round against.

    Codes are rounded against the exact scale so range endpoints land on
    0 and qmax.  A scale that underflows float32 is replaced by 1 in both,
    which still reconstructs such a group to within its (tiny) range.
    """
    s32 = scale64.astype(np.float32)
    under = s32 == 0
    return np.where(under, np.float32(1.0), s32), np.where(under, 1.0, scale64)


def quantize_groups(w, group_size, bits, asymmetric):
    w = np.ascontiguousarray(w, dtype=np.float64)
    n = w.shape[0]
    n_groups = -(-n // group_size)
    qmax = (1 << bits) - 1
    pad = n_groups * group_size - n
    # pad with the group's first element so min/max are unaffected
    if pad:
        tail_fill = np.full(pad, w[(n_groups - 1) * group_size])
        wp = np.concatenate([w, tail_fill])
    else:
        wp = w
    g = wp.reshape(n_groups, group_size)
    mn = g.min(axis=1)
    mx = g.max(axis=1)

    if asymmetric:
        rng = mx - mn
        degenerate = rng == 0.0
        safe_rng = np.where(degenerate, 1.0, rng)
        scale64 = np.where(degenerate, np.abs(mn), safe_rng / qmax)
        scale64 = np.where(scale64 == 0.0, 1.0, scale64)
        scales, scale64 = _stored_scales(scale64)
        zp_f = np.where(
            degenerate,
            round_half_away(-mn / scale64),
            round_half_away((-mn * qmax) / safe_rng),
        )
        zps = np.clip(zp_f, 0, qmax)
    else:
        amax = np.maximum(np.abs(mn), np.abs(mx))
        half = (1 << (bits - 1)) - 1
        scale64 = np.where(amax == 0.0, 1.0, amax / half)
        scales, scale64 = _stored_scales(scale64)
        zps = np.full(n_groups, float(1 << (bits - 1)))

    s = np.repeat(scale64, group_size)[:n]
    z = np.repeat(zps, group_size)[:n]
    q = np.clip(round_half_away(w / s) + z, 0, qmax)
    return q.astype(np.uint8), scales, zps.astype(np.uint8)


def dequantize_groups(codes, scales, zero_points, group_size):
    n = codes.shape[0]
    s = np.repeat(np.asarray(scales, dtype=np.float32).astype(np.float64), group_size)[:n]
    z = np.repeat(np.asarray(zero_points, dtype=np.float64), group_size)[:n]
    return s * (codes.astype(np.float64) - z)


def split_codes(codes, shift):
    codes = np.asarray(codes, dtype=np.uint8)
    return codes >> shift, codes & ((1 << shift) - 1)


def merge_codes(high, low, shift):
    high = np.asarray(high, dtype=np.uint8)
    low = np.asarray(low, dtype=np.uint8)
    return ((high.astype(np.uint16) << shift) | low).astype(np.uint8)


def topk(values, k):
    v = np.asarray(values, dtype=np.float64)
    keys = np.rint(v * TIE_SCALE)
    order = np.argsort(-keys, kind="stable")
    return order[:k].astype(np.int64)


def cumsum_prefix(values, mass):
    """Indices of the shortest score-descending prefix holding ``mass``."""
    v = np.asarray(values, dtype=np.float64)
    order = topk(v, v.shape[0])
    c = np.cumsum(v[order])
    hit = np.nonzero(c >= mass - 1e-12)[0]
    count = int(hit[0]) + 1 if hit.size else v.shape[0]
    return order[:count]


def topk_rows(matrix, k):
    m = np.asarray(matrix, dtype=np.float64)
    keys = np.rint(m * TIE_SCALE)
    return np.argsort(-keys, axis=1, kind="stable")[:, :k].astype(np.int64)
