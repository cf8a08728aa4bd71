"""Group-wise linear quantization and Matryoshka bit slicing.

A b_high-bit tensor can be cut into an MSB slice (a complete b_low-bit
quantized tensor with its own scales and zero-points) and an LSB slice of
residual bits.  Three ways of getting a low-bit tensor out of a high-bit one
are provided for comparison:

* independent quantization at b_low (``quantize``),
* naive truncation, which shifts the codes but keeps the zero-point
  (``truncate_naive``),
* zero-point-aware truncation, which shifts codes and zero-points together
  (``truncate_amat``).
"""
import enum
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError

SCALE_BITS = 16
FLOAT32_SAFE = 1e38
MAT_CONFIGS = {"MAT42": (4, 2), "MAT63": (6, 3), "MAT84": (8, 4)}


class Scheme(str, enum.Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


@dataclass(frozen=True)
class QuantConfig:
    bits: int
    group_size: int = 32
    scheme: Scheme = Scheme.ASYMMETRIC

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ConfigError(f"must be in [2, 8], got {self.bits}", "bits")
        if self.group_size < 1:
            raise ConfigError(f"must be >= 1, got {self.group_size}", "group_size")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    def replace_bits(self, bits):
        return QuantConfig(bits, self.group_size, self.scheme)


def num_groups(length, group_size):
    return -(-length // group_size)


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    codes: np.ndarray
    scales: np.ndarray
    zero_points: np.ndarray
    config: QuantConfig

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        zps = np.ascontiguousarray(self.zero_points, dtype=np.uint8)
        for arr in (codes, scales, zps):
            arr.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "zero_points", zps)
        n_groups = num_groups(codes.shape[0], self.config.group_size)
        if scales.shape != (n_groups,) or zps.shape != (n_groups,):
            raise ConfigError(
                f"expected {n_groups} scales and zero-points, got "
                f"{scales.shape[0]} and {zps.shape[0]}"
            )
        if codes.size and int(codes.max()) >= 1 << self.config.bits:
            raise ConfigError(f"code exceeds {self.config.bits}-bit range", "codes")

    @property
    def length(self):
        return self.codes.shape[0]

    @property
    def bits(self):
        return self.config.bits

    def check_invariants(self):
        """Raise if zero-points are outside the scheme's legal range.

        Not enforced at construction because naive truncation produces
        out-of-range zero-points on purpose.
        """
        b = self.config.bits
        if self.config.scheme is Scheme.SYMMETRIC:
            if np.any(self.zero_points != 1 << (b - 1)):
                raise ConfigError("symmetric zero-point must be the midpoint", "zero_points")
        elif self.zero_points.size and int(self.zero_points.max()) >= 1 << b:
            raise ConfigError(f"zero-point exceeds {b}-bit range", "zero_points")

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.zero_points, other.zero_points)
            # bitwise, so -0.0 != 0.0 and NaN payloads count
            and np.array_equal(self.scales.view(np.uint32), other.scales.view(np.uint32))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SlicePair:
    """MSB slice plus the residual bits needed to rebuild the high-bit tensor.

    ``zp_residual`` holds the low ``shift`` bits of every group's high-bit
    zero-point so the merge is exact while the MSB slice stays usable alone.
    """

    msb: QuantizedTensor
    lsb: np.ndarray
    zp_residual: np.ndarray
    shift: int

    def __post_init__(self):
        lsb = np.ascontiguousarray(self.lsb, dtype=np.uint8)
        zr = np.ascontiguousarray(self.zp_residual, dtype=np.uint8)
        object.__setattr__(self, "lsb", lsb)
        object.__setattr__(self, "zp_residual", zr)
        limit = 1 << self.shift
        if lsb.size and int(lsb.max()) >= limit:
            raise ConfigError(f"residual exceeds {self.shift} bits", "lsb")
        if zr.size and int(zr.max()) >= limit:
            raise ConfigError(f"zero-point residual exceeds {self.shift} bits", "zp_residual")


def quantize(weights, cfg):
    """Min-max linear quantization, one scale and zero-point per group.

    Rounding is half-away-from-zero.  A constant group stores the constant
    exactly (scale = |c|, or 1 for an all-zero group).
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    finite = np.isfinite(w)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise ConfigError(f"non-finite weight {w[idx]!r} at index {idx}", "weights")
    if w.size and np.abs(w).max() > FLOAT32_SAFE:
        idx = int(np.argmax(np.abs(w)))
        raise ConfigError(f"weight {w[idx]!r} at index {idx} is outside float32 scale range", "weights")
    if w.size == 0:
        return QuantizedTensor(np.zeros(0, np.uint8), np.zeros(0, np.float32), np.zeros(0, np.uint8), cfg)
    codes, scales, zps = _kernels.quantize_groups(
        w, cfg.group_size, cfg.bits, cfg.scheme is Scheme.ASYMMETRIC
    )
    return QuantizedTensor(codes, scales, zps, cfg)


def dequantize(qt):
    return _kernels.dequantize_groups(qt.codes, qt.scales, qt.zero_points, qt.config.group_size)


def _shift_for(qt, b_low, allow_noop=False):
    b_high = qt.config.bits
    if b_low == b_high and allow_noop:
        return 0
    if b_low >= b_high:
        raise ConfigError(f"b_low={b_low} must be below b_high={b_high}", "b_low")
    if b_low < 2:
        raise ConfigError(f"must be >= 2, got {b_low}", "b_low")
    return b_high - b_low


def truncate_naive(qt, b_low):
    """Drop the low bits of every code, leaving zero-points untouched.

    This is the broken baseline: the zero-point stays on the high-bit grid
    while codes move to the low-bit grid.
    """
    shift = _shift_for(qt, b_low)
    codes, _ = _kernels.split_codes(qt.codes, shift)
    return QuantizedTensor(
        codes,
        qt.scales * np.float32(1 << shift),
        qt.zero_points,
        qt.config.replace_bits(b_low),
    )


def truncate_amat(qt, b_low, allow_noop=False):
    """Shift codes and zero-points down by the same amount; scale up to match."""
    shift = _shift_for(qt, b_low, allow_noop)
    if shift == 0:
        return qt
    if qt.config.scheme is Scheme.SYMMETRIC:
        warnings.warn(
            "zero-point truncation on a symmetric tensor is not a tested configuration",
            stacklevel=2,
        )
    codes, _ = _kernels.split_codes(qt.codes, shift)
    zps, _ = _kernels.split_codes(qt.zero_points, shift)
    return QuantizedTensor(
        codes,
        qt.scales * np.float32(1 << shift),
        zps,
        qt.config.replace_bits(b_low),
    )


def split_slices(qt, b_low):
    shift = _shift_for(qt, b_low)
    msb_codes, lsb = _kernels.split_codes(qt.codes, shift)
    msb_zp, zp_res = _kernels.split_codes(qt.zero_points, shift)
    msb = QuantizedTensor(
        msb_codes,
        qt.scales * np.float32(1 << shift),
        msb_zp,
        qt.config.replace_bits(b_low),
    )
    return SlicePair(msb, lsb, zp_res, shift)


def merge_slices(pair):
    msb = pair.msb
    if pair.lsb.shape != msb.codes.shape:
        raise ConfigError(
            f"LSB has {pair.lsb.shape[0]} residuals for {msb.length} codes", "lsb"
        )
    if pair.zp_residual.shape != msb.zero_points.shape:
        raise ConfigError("zero-point residual count does not match groups", "zp_residual")
    shift = pair.shift
    b_high = msb.config.bits + shift
    if b_high > 8:
        raise ConfigError(f"merged width {b_high} exceeds 8 bits", "shift")
    return QuantizedTensor(
        _kernels.merge_codes(msb.codes, pair.lsb, shift),
        msb.scales / np.float32(1 << shift),
        _kernels.merge_codes(msb.zero_points, pair.zp_residual, shift),
        msb.config.replace_bits(b_high),
    )


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    d = a - b
    return float(np.mean(d * d))


# -- footprints -------------------------------------------------------------

def msb_slice_bits(params, group_size, b_low):
    """Bits for an MSB slice: codes plus a 16-bit scale and zero-point per group."""
    return params * b_low + math.ceil(params / group_size) * (SCALE_BITS + b_low)


def lsb_slice_bits(params, group_size, shift):
    """Bits for an LSB slice: residual codes plus residual zero-point bits."""
    return params * shift + math.ceil(params / group_size) * shift


def high_bits(params, group_size, b_high):
    return params * b_high + math.ceil(params / group_size) * (SCALE_BITS + b_high)


def parse_mat(name):
    """``"MAT84"`` or ``"8,4"`` to ``(8, 4)``."""
    key = str(name).upper().replace(" ", "")
    if key in MAT_CONFIGS:
        return MAT_CONFIGS[key]
    if key.startswith("MAT") and len(key) == 5 and key[3:].isdigit():
        return int(key[3]), int(key[4])
    parts = key.replace("/", ",").split(",")
    if len(parts) == 2 and all(p.isdigit() for p in parts):
        return int(parts[0]), int(parts[1])
    raise ConfigError(f"unrecognized MAT configuration {name!r}", "mat")


# -- binary dump ------------------------------------------------------------

_MAGIC = b"SMQT"
_VERSION = 1
_HEADER = struct.Struct("<4sHBBIQ")
_SCHEME_CODE = {Scheme.SYMMETRIC: 0, Scheme.ASYMMETRIC: 1}


def dump(qt, path):
    cfg = qt.config
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, cfg.bits, _SCHEME_CODE[cfg.scheme], cfg.group_size, qt.length))
        fh.write(qt.codes.tobytes())
        fh.write(qt.scales.astype("<f4").tobytes())
        fh.write(qt.zero_points.tobytes())


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ConfigError("file too short for header", "path")
    magic, version, bits, scheme, group_size, length = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ConfigError(f"bad magic {magic!r}", "path")
    if version != _VERSION:
        raise ConfigError(f"unsupported version {version}", "path")
    cfg = QuantConfig(bits, group_size, Scheme.SYMMETRIC if scheme == 0 else Scheme.ASYMMETRIC)
    n_groups = num_groups(length, group_size)
    expected = _HEADER.size + length + 4 * n_groups + n_groups
    if len(data) != expected:
        raise ConfigError(f"expected {expected} bytes, found {len(data)}", "path")
    off = _HEADER.size
    codes = np.frombuffer(data, np.uint8, length, off)
    off += length
    scales = np.frombuffer(data, "<f4", n_groups, off).astype(np.float32)
    off += 4 * n_groups
    zps = np.frombuffer(data, np.uint8, n_groups, off)
    return QuantizedTensor(codes.copy(), scales, zps.copy(), cfg)
