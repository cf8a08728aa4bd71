"""Trace-driven simulation of bit-sliced MoE expert caching.

Submodules: ``quant`` (group-wise quantization and bit slicing), ``trace``
(routing traces), ``router`` (expert selection and the miss-rate
constraint), ``cache`` (slice cache), ``warmup`` (decode cache
initialization), ``cost`` (energy and latency), ``harness`` (end-to-end
runs, sweeps, reports).
"""
from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import CapacityError, ConfigError, SliceSimError, TraceFormatError

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "CapacityError", "ConfigError", "SliceSimError", "TraceFormatError"]
