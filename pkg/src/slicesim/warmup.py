"""Cache state at the prefill-to-decode transition.

``build_initial_cache`` turns prefill hotness into an ordered slice list for
``SliceCache.bulk_install``.  Besides the hotness-driven strategy (PCW) it
provides the naive starting states it is compared against.
"""
from dataclasses import dataclass

import numpy as np

from . import trace as trace_mod
from .cache import LSB, MSB, SliceId
from .cost import CostLedger
from .errors import CapacityError, ConfigError

EMPTY = "empty"
LAST_LAYER = "last_layer"
RANDOM = "random"
PCW = "pcw"


@dataclass(frozen=True)
class WarmupStrategy:
    kind: str = EMPTY
    seed: int = 0
    theta: float = 0.5
    decode_window_hint: int = 10
    msb_first: bool = False

    def __post_init__(self):
        if self.kind not in (EMPTY, LAST_LAYER, RANDOM, PCW):
            raise ConfigError(f"unknown strategy {self.kind!r}", "warmup.kind")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("must be in (0, 1]", "warmup.theta")


def run_prefill(trace, require_tokens=False):
    """Hotness accumulated over the prefill phase under plain top-k."""
    if require_tokens and trace.prefill_tokens == 0:
        raise ConfigError("trace has no prefill tokens", "trace")
    return trace_mod.hotness(trace)


def _truncate(items, table, capacity_bits):
    out, used = [], 0
    for sid in items:
        size = table.footprint(sid.kind)
        if used + size > capacity_bits:
            break
        out.append(sid)
        used += size
    return out


def pcw_ranking(hotness):
    """(layer, expert) pairs, hottest first: count, then gating mass, then index."""
    counts = hotness.prefill_counts
    mass = hotness.prefill_mass
    L, E = counts.shape
    flat = np.arange(L * E)
    order = np.lexsort((flat, -mass.ravel(), -counts.ravel()))
    return [(int(i) // E, int(i) % E) for i in order]


def build_initial_cache(strategy, hotness, table, capacity_bits, geometry):
    if capacity_bits < min(table.msb_bits, table.lsb_bits or table.msb_bits):
        raise CapacityError("capacity smaller than one slice")
    L, E = geometry.num_layers, geometry.experts_per_layer

    if strategy.kind == EMPTY:
        return []

    if strategy.kind == LAST_LAYER:
        items = [SliceId(L - 1, e, MSB) for e in range(E)]
        if table.has_lsb:
            items += [SliceId(L - 1, e, LSB) for e in range(E)]
        return _truncate(items, table, capacity_bits)

    if strategy.kind == RANDOM:
        rng = np.random.default_rng(strategy.seed)
        order = rng.permutation(L * E)
        items = [SliceId(int(i) // E, int(i) % E, MSB) for i in order]
        return _truncate(items, table, capacity_bits)

    if hotness is None or hotness.prefill_tokens == 0:
        raise ConfigError("PCW needs prefill statistics", "warmup")
    norm = hotness.mean_norm_score()
    msbs, lsbs, interleaved = [], [], []
    for layer, e in pcw_ranking(hotness):
        m = SliceId(layer, e, MSB)
        msbs.append(m)
        interleaved.append(m)
        if table.has_lsb and norm[layer, e] > strategy.theta:
            s = SliceId(layer, e, LSB)
            lsbs.append(s)
            interleaved.append(s)
    items = msbs + lsbs if strategy.msb_first else interleaved
    return _truncate(items, table, capacity_bits)


def retention_ratios(slices, geometry):
    """Fraction of experts with an installed MSB, and of those, with an LSB too."""
    msb = sum(1 for s in slices if s.kind == MSB)
    lsb = sum(1 for s in slices if s.kind == LSB)
    total = geometry.num_layers * geometry.experts_per_layer
    return {
        "msb_retention": msb / total,
        "lsb_retention": lsb / msb if msb else 0.0,
    }


DRAM_LIMITED = "dram_limited"
ONE_TO_ONE = "one_to_one"


def preloaded_experts(capacity_bits, high_bits):
    return int(capacity_bits) // int(high_bits)


def exchange_phase(consumed, preloaded):
    """Regime of the ``consumed``-th expert (0-based) during prefill.

    The first ``preloaded`` experts come from DRAM; after that every expert
    consumed needs one loaded from Flash.
    """
    return DRAM_LIMITED if consumed < preloaded else ONE_TO_ONE


def prefill_ledger(trace, table_high_bits, capacity_bits, hot=None):
    """Cost of streaming every expert of every layer once at full precision.

    Compute per expert is 2 * P ops per token routed to it under top-k.
    """
    g = trace.geometry
    hot = hot if hot is not None else run_prefill(trace)
    n_pre = preloaded_experts(capacity_bits, table_high_bits)
    ledger = CostLedger("prefill")
    if trace.prefill_tokens == 0:
        return ledger
    step = 0
    for layer in range(g.num_layers):
        for e in range(g.experts_per_layer):
            regime = exchange_phase(step, n_pre)
            ops = 2 * g.expert_params * int(hot.prefill_counts[layer, e])
            flash = table_high_bits if regime == ONE_TO_ONE else 0
            ledger.charge(step, table_high_bits, flash, ops, regime=regime)
            step += 1
    return ledger
