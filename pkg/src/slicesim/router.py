"""Expert selection, precision demand, and the miss-rate constraint."""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError

TOPK = "topk"
CUMSUM = "cumsum"
CACHE_PRIOR = "cache_prior"


@dataclass(frozen=True)
class RoutingPolicy:
    kind: str = TOPK
    k: int = 2
    mass_threshold: float = 0.9
    boost: float = 1.0
    boost_mode: str = "multiplicative"

    def __post_init__(self):
        if self.kind not in (TOPK, CUMSUM, CACHE_PRIOR):
            raise ConfigError(f"unknown policy {self.kind!r}", "policy.kind")
        if self.k < 1:
            raise ConfigError("must be >= 1", "policy.k")
        if not 0.0 < self.mass_threshold <= 1.0:
            raise ConfigError("must be in (0, 1]", "policy.mass_threshold")
        if not self.boost >= 0.0:
            raise ConfigError("must be >= 0", "policy.boost")
        if self.boost_mode not in ("multiplicative", "additive"):
            raise ConfigError(f"unknown boost mode {self.boost_mode!r}", "policy.boost_mode")


@dataclass
class Selection:
    experts: list
    weights: np.ndarray

    def __len__(self):
        return len(self.experts)


def _renormalized(scores, experts):
    w = scores[experts]
    total = w.sum()
    if total > 0:
        return w / total
    return np.full(len(experts), 1.0 / len(experts))


def route(policy, scores, cached_high=frozenset(), cached_msb=frozenset()):
    """Pick experts for one (token, layer).

    Ties anywhere go to the lower expert index.  Weights are the original
    scores of the chosen experts, renormalized to sum to one.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if policy.kind == TOPK:
        chosen = _kernels.topk(scores, policy.k)
    elif policy.kind == CACHE_PRIOR:
        if cached_msb and policy.boost > 0:
            adjusted = scores.copy()
            idx = np.fromiter(cached_msb, dtype=np.int64, count=len(cached_msb))
            if policy.boost_mode == "multiplicative":
                adjusted[idx] *= 1.0 + policy.boost
            else:
                adjusted[idx] += policy.boost
        else:
            adjusted = scores
        chosen = _kernels.topk(adjusted, policy.k)
    else:
        prefix = _kernels.cumsum_prefix(scores, policy.mass_threshold)
        # cached experts first, score order kept within each group
        cached = [e for e in prefix.tolist() if e in cached_msb]
        rest = [e for e in prefix.tolist() if e not in cached_msb]
        chosen = np.array(cached + rest, dtype=np.int64)
    experts = chosen.tolist()
    return Selection(experts, _renormalized(scores, chosen))


HIGH = "high"
LOW = "low"


@dataclass
class PrecisionDemand:
    experts: list
    precision: list
    weights: np.ndarray

    @property
    def high_count(self):
        return sum(p == HIGH for p in self.precision)

    def copy(self):
        return PrecisionDemand(list(self.experts), list(self.precision), self.weights.copy())


def assign_precision(scores, selection, theta=0.5, dominance_c=2.0):
    """Mark selected experts critical (high) or not (low).

    Critical means s_i / max selected score >= theta, and only if the top
    selected score clears the dominance floor ``dominance_c / E``; a flat
    token gets no critical experts at all.
    """
    if not 0.0 < theta <= 1.0:
        raise ConfigError(f"must be in (0, 1], got {theta}", "theta")
    experts = list(selection.experts)
    if not experts:
        raise ConfigError("empty selection", "selected")
    scores = np.asarray(scores, dtype=np.float64)
    sel = scores[experts]
    top = sel.max()
    if top <= dominance_c / scores.shape[0]:
        precision = [LOW] * len(experts)
    else:
        precision = [HIGH if s / top >= theta else LOW for s in sel]
    return PrecisionDemand(experts, precision, np.asarray(selection.weights, dtype=np.float64))


@dataclass
class MissConstraint:
    """Running high-bit-normalized miss-rate budget over decode.

    Counting starts at decode step ``warmup_steps``; earlier steps pass
    through untouched and are not counted.
    """

    tau: float = 1.0
    warmup_steps: int = 10
    miss_bits: int = 0
    full_bits: int = 0
    overshoot_events: int = 0
    substitutions: int = 0
    downgrades: int = 0
    token_miss_bits: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"must be in [0, 1], got {self.tau}", "tau")
        if self.warmup_steps < 0:
            raise ConfigError("must be >= 0", "warmup_steps")

    def active(self, step):
        return step >= self.warmup_steps

    def normalized_miss_rate(self):
        if self.full_bits == 0:
            return 0.0
        return self.miss_bits / self.full_bits

    def _over(self, extra_miss, extra_full):
        return (self.miss_bits + extra_miss) > self.tau * (self.full_bits + extra_full)

    def enforce(self, step, scores, demand, view):
        """Trim ``demand`` so admitting it keeps the running rate within tau.

        ``view`` is a ``CacheView`` that prices a demand in Flash bits
        without touching the cache.  Returns a (possibly new) demand.
        """
        if not self.active(step) or self.tau >= 1.0:
            return demand
        full = len(demand.experts) * view.high_bits
        if not self._over(view.miss_bits(demand), full):
            return demand
        demand = demand.copy()
        scores = np.asarray(scores, dtype=np.float64)

        # 1. drop LSB fetches, least important first
        order = sorted(range(len(demand.experts)), key=lambda i: (scores[demand.experts[i]], -demand.experts[i]))
        for i in order:
            e = demand.experts[i]
            if demand.precision[i] == HIGH and not view.lsb_resident(e):
                demand.precision[i] = LOW
                self.downgrades += 1
                full = len(demand.experts) * view.high_bits
                if not self._over(view.miss_bits(demand), full):
                    return demand

        # 2. swap uncached experts for the best cached ones not already chosen
        chosen = set(demand.experts)
        candidates = sorted(
            (e for e in view.cached_msb() if e not in chosen),
            key=lambda e: (-scores[e], e),
        )
        for i in order:
            e = demand.experts[i]
            if view.msb_resident(e):
                continue
            if not candidates:
                break
            sub = candidates.pop(0)
            demand.experts[i] = sub
            demand.precision[i] = LOW
            self.substitutions += 1
            if not self._over(view.miss_bits(demand), full):
                break
        demand.weights = _renormalized(scores, np.asarray(demand.experts, dtype=np.int64))
        if self._over(view.miss_bits(demand), full):
            self.overshoot_events += 1
        return demand

    def record(self, step, miss_bits, full_bits):
        if not self.active(step):
            return
        self.miss_bits += miss_bits
        self.full_bits += full_bits
        self.token_miss_bits[step] = self.token_miss_bits.get(step, 0) + miss_bits

    def largest_token_contribution(self):
        """Largest single decode token's miss bits over the final denominator."""
        if not self.token_miss_bits or self.full_bits == 0:
            return 0.0
        return max(self.token_miss_bits.values()) / self.full_bits
