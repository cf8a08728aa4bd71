"""Energy and latency accounting for an XPU / DRAM / Flash hierarchy."""
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

PJ_PER_J = 1e12
NS_PER_S = 1e9


@dataclass(frozen=True)
class SystemSpec:
    """Hardware constants.  Bandwidths in bits/s, energies in pJ/bit,
    throughput in ops/s, efficiency in ops/J."""

    dram_bw: float = 104e9
    dram_energy: float = 1.5
    flash_bw: float = 10e9
    flash_energy: float = 103.0
    xpu_throughput: float = 16.4e12
    xpu_efficiency: float = 3.18e12
    dram_bytes: float = 8e9
    flash_bytes: float = 128e9

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"must be a positive number, got {v!r}", f"system.{f.name}")
        if not self.flash_energy > self.dram_energy:
            raise ConfigError("Flash must cost more per bit than DRAM", "system.flash_energy")
        if not self.dram_bw > self.flash_bw:
            raise ConfigError("DRAM must be faster than Flash", "system.dram_bw")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "system")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self):
        return asdict(self)


@dataclass
class StepCost:
    dram_bits: int = 0
    flash_bits: int = 0
    compute_ops: int = 0
    regime: str = "decode"


@dataclass
class CostLedger:
    """Bits moved and ops executed, with a per-step breakdown."""

    phase: str = "decode"
    dram_bits: int = 0
    flash_bits: int = 0
    compute_ops: int = 0
    steps: dict = field(default_factory=dict)

    def charge(self, step, dram_bits=0, flash_bits=0, compute_ops=0, regime=None):
        if dram_bits < 0 or flash_bits < 0 or compute_ops < 0:
            raise ConfigError("charges must be non-negative")
        self.dram_bits += dram_bits
        self.flash_bits += flash_bits
        self.compute_ops += compute_ops
        sc = self.steps.get(step)
        if sc is None:
            sc = self.steps[step] = StepCost(regime=regime or self.phase)
        sc.dram_bits += dram_bits
        sc.flash_bits += flash_bits
        sc.compute_ops += compute_ops

    def restricted(self, steps):
        """A new ledger holding only the given steps."""
        out = CostLedger(self.phase)
        for s in steps:
            sc = self.steps.get(s)
            if sc is not None:
                out.charge(s, sc.dram_bits, sc.flash_bits, sc.compute_ops, sc.regime)
        return out

    def __add__(self, other):
        out = CostLedger(self.phase)
        for ledger in (self, other):
            for s, sc in ledger.steps.items():
                out.charge(s, sc.dram_bits, sc.flash_bits, sc.compute_ops, sc.regime)
        return out

    def summary(self):
        return {
            "dram_bits": self.dram_bits,
            "flash_bits": self.flash_bits,
            "compute_ops": self.compute_ops,
            "steps": len(self.steps),
        }


@dataclass(frozen=True)
class ExpertExecution:
    """One expert run for one token.

    ``msb_hit`` / ``lsb_hit`` are the cache outcomes; ``lsb_hit`` is None
    when no LSB was requested.  ``used_lsb`` is whether the LSB took part
    in compute (it may have been requested and then degraded).
    """

    expert: int
    msb_hit: bool
    lsb_hit: object = None
    used_lsb: bool = False


def charge_token(ledger, step, executions, table, expert_params):
    """Charge one (token, layer) worth of expert executions."""
    dram = flash = 0
    for ex in executions:
        dram += table.msb_bits
        if ex.used_lsb:
            dram += table.lsb_bits
        if not ex.msb_hit:
            flash += table.msb_bits
        if ex.lsb_hit is False:
            flash += table.lsb_bits
    # the PE array is 8-bit regardless of slice width
    ops = 2 * expert_params * len(executions)
    ledger.charge(step, dram, flash, ops)
    return ledger


def energy(ledger, spec):
    """Energy in pJ, split by component."""
    dram = ledger.dram_bits * spec.dram_energy
    flash = ledger.flash_bits * spec.flash_energy
    compute = ledger.compute_ops / spec.xpu_efficiency * PJ_PER_J
    return {"dram": dram, "flash": flash, "compute": compute, "total": dram + flash + compute}


def step_latency_ns(sc, spec):
    compute = sc.compute_ops / spec.xpu_throughput
    dram = sc.dram_bits / spec.dram_bw
    flash = sc.flash_bits / spec.flash_bw
    if sc.regime == "dram_limited":
        t = max(compute, dram)
    elif sc.regime == "one_to_one":
        t = max(compute, flash)
    else:
        # a missed slice must land before its expert can run
        t = max(compute, dram) + flash
    return t * NS_PER_S


def latency(ledger, spec):
    """Total latency in ns, summed step by step."""
    return math.fsum(step_latency_ns(sc, spec) for _, sc in sorted(ledger.steps.items()))


@dataclass(frozen=True)
class Comparison:
    energy_gain: float
    speedup: float
    degenerate: bool = False


def compare(a, b, spec, phase="decode"):
    """Gain of run ``a`` over run ``b``: b's cost divided by a's.

    ``a`` and ``b`` are mappings phase -> CostLedger.  A zero-cost ``a``
    gives ``inf`` with ``degenerate`` set.
    """
    ea, eb = energy(a[phase], spec)["total"], energy(b[phase], spec)["total"]
    la, lb = latency(a[phase], spec), latency(b[phase], spec)
    degenerate = ea == 0 or la == 0

    def ratio(num, den):
        if den == 0:
            return math.inf if num > 0 else 1.0
        return num / den

    return Comparison(ratio(eb, ea), ratio(lb, la), degenerate)
