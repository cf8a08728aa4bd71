"""Reference implementations used as test oracles.

These are deliberately naive (scalar loops, plain lists) and share no code
with the package beyond dataclass types.
"""
import math
from collections import OrderedDict

import numpy as np


def round_away(x):
    t = math.trunc(x)
    if abs(x - t) >= 0.5:
        return t + (1 if x > 0 else -1)
    return t


def quantize_ref(weights, bits, group_size=32):
    """Scalar-loop asymmetric min-max quantizer.

    Returns (codes, scales, zero_points) as Python lists.  Codes are rounded
    against the exact scale; the returned scales are the float32 values
    that get stored.
    """
    qmax = 2 ** bits - 1
    w = [float(x) for x in weights]
    codes, scales, zps = [], [], []
    for start in range(0, len(w), group_size):
        g = w[start:start + group_size]
        lo, hi = min(g), max(g)
        s = abs(lo) or 1.0 if hi == lo else (hi - lo) / qmax
        s32 = float(np.float32(s))
        if s32 == 0.0:
            s = s32 = 1.0
        if hi == lo:
            zp = round_away(-lo / s)
        else:
            zp = round_away(-lo * qmax / (hi - lo))
        zp = min(max(zp, 0), qmax)
        scales.append(s32)
        zps.append(int(zp))
        for x in g:
            codes.append(int(min(max(round_away(x / s) + zp, 0), qmax)))
    return codes, scales, zps


def dequantize_ref(codes, scales, zps, group_size=32):
    out = []
    for i, q in enumerate(codes):
        g = i // group_size
        out.append(scales[g] * (q - zps[g]))
    return out


def mse_ref(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b)) / len(a)


def footprint_ref(params, bits, group_size=32, scale_bits=16):
    groups = (params + group_size - 1) // group_size
    return params * bits + groups * (scale_bits + bits)


class PlainLRU:
    """Whole-item LRU with a capacity counted in items."""

    def __init__(self, slots):
        self.slots = slots
        self.items = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __contains__(self, key):
        return key in self.items

    def touch(self, key):
        if key in self.items:
            self.items.move_to_end(key)
            self.hits += 1
            return True
        self.misses += 1
        if len(self.items) >= self.slots:
            self.items.popitem(last=False)
        self.items[key] = None
        return False

    def event(self, keys):
        """Access a group of keys: resident ones first, then the rest."""
        present = [k for k in keys if k in self.items]
        absent = [k for k in keys if k not in self.items]
        for k in present + absent:
            self.touch(k)


def lru_reference_run(decode_scores, k, slots, boost=None):
    """Top-k (or cache-boosted top-k) routing over a plain LRU.

    ``decode_scores`` has shape (tokens, layers, experts).  Returns
    (hits, misses).
    """
    cache = PlainLRU(slots)
    T, L, E = decode_scores.shape
    for t in range(T):
        for layer in range(L):
            s = [float(x) for x in decode_scores[t, layer]]
            if boost is not None:
                s = [x * (1 + boost) if (layer, e) in cache else x for e, x in enumerate(s)]
            chosen = sorted(range(E), key=lambda e: (-s[e], e))[:k]
            cache.event([(layer, e) for e in chosen])
    return cache.hits, cache.misses


def spearman_ref(x, y):
    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for m in range(i, j + 1):
                r[order[m]] = (i + j) / 2.0
            i = j + 1
        return r

    rx, ry = ranks(list(x)), ranks(list(y))
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        return 0.0
    return cov / math.sqrt(vx * vy)
