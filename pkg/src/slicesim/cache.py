"""Capacity-bounded, slice-granular expert cache.

MSB slices are kept in LRU order.  LSB slices have no recency: they are
always evicted before any MSB, oldest admission first, and are also dropped
as soon as their combined size passes ``lsb_fraction`` of capacity.
"""
import contextlib
import enum
import json
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

from . import quant
from .errors import CapacityError, ConfigError

MSB = "msb"
LSB = "lsb"


class Outcome(enum.Enum):
    HIT = "hit"
    MISS = "miss"


class SliceId(NamedTuple):
    layer: int
    expert: int
    kind: str

    def to_json(self):
        return {"layer": self.layer, "expert": self.expert, "kind": self.kind}


@dataclass(frozen=True)
class SliceTable:
    """Footprint in bits of each slice kind.

    ``lsb_bits == 0`` means the single-slice degenerate case where the MSB
    slice is the whole expert.
    """

    msb_bits: int
    lsb_bits: int

    def __post_init__(self):
        if self.msb_bits <= 0 or self.lsb_bits < 0:
            raise ConfigError("slice footprints must be positive", "slice_table")

    @property
    def high_bits(self):
        return self.msb_bits + self.lsb_bits

    @property
    def has_lsb(self):
        return self.lsb_bits > 0

    def footprint(self, kind):
        return self.msb_bits if kind == MSB else self.lsb_bits

    @classmethod
    def from_geometry(cls, geometry, group_size=32):
        P = geometry.expert_params
        return cls(
            quant.msb_slice_bits(P, group_size, geometry.b_low),
            quant.lsb_slice_bits(P, group_size, geometry.shift),
        )

    @classmethod
    def whole_expert(cls, geometry, group_size=32):
        """A single slice holding the full b_high expert."""
        return cls(quant.high_bits(geometry.expert_params, group_size, geometry.b_high), 0)


class SliceCache:
    def __init__(self, capacity_bits, table, lsb_fraction=0.1, log_evictions=False):
        capacity_bits = int(capacity_bits)
        if capacity_bits < table.msb_bits:
            raise CapacityError(
                f"capacity {capacity_bits} bits cannot hold one MSB slice ({table.msb_bits} bits)"
            )
        if not 0.0 <= lsb_fraction <= 1.0:
            raise ConfigError("must be in [0, 1]", "lsb_fraction")
        self.capacity_bits = capacity_bits
        self.table = table
        self.lsb_fraction = lsb_fraction
        self._msb = OrderedDict()  # oldest first
        self._lsb = OrderedDict()  # admission order, oldest first
        self._by_layer = {MSB: {}, LSB: {}}  # layer -> set of experts
        self._pinned = set()
        self._pinning = False
        self.occupancy_bits = 0
        self.lsb_bits_resident = 0
        self.stats = {
            MSB: {"hits": 0, "misses": 0, "flash_bits": 0},
            LSB: {"hits": 0, "misses": 0, "flash_bits": 0},
        }
        self.step = 0
        self.eviction_log = [] if log_evictions else None

    # -- queries --

    def __contains__(self, sid):
        return sid in (self._msb if sid.kind == MSB else self._lsb)

    def probe(self, sid):
        return Outcome.HIT if sid in self else Outcome.MISS

    def __len__(self):
        return len(self._msb) + len(self._lsb)

    def resident(self):
        return list(self._msb) + list(self._lsb)

    def msb_recency(self):
        """Resident MSB slices, most recent first."""
        return list(reversed(self._msb))

    def lsb_order(self):
        """Resident LSB slices, next victim first."""
        return list(self._lsb)

    def snapshot_stats(self):
        return {kind: dict(v) for kind, v in self.stats.items()}

    # -- pinning --

    @contextlib.contextmanager
    def pinning(self):
        """Pin every slice accessed inside the block until it exits."""
        self._pinning = True
        try:
            yield self
        finally:
            self._pinning = False
            self._pinned.clear()

    def pin(self, sids):
        self._pinned.update(sids)

    # -- mutation --

    def _add(self, sid):
        size = self.table.footprint(sid.kind)
        if sid.kind == MSB:
            self._msb[sid] = None
        else:
            self._lsb[sid] = None
            self.lsb_bits_resident += size
        self._by_layer[sid.kind].setdefault(sid.layer, set()).add(sid.expert)
        self.occupancy_bits += size

    def _remove(self, sid, reason):
        size = self.table.footprint(sid.kind)
        if sid.kind == MSB:
            del self._msb[sid]
        else:
            del self._lsb[sid]
            self.lsb_bits_resident -= size
        self._by_layer[sid.kind][sid.layer].discard(sid.expert)
        self.occupancy_bits -= size
        if self.eviction_log is not None:
            self.eviction_log.append({"step": self.step, "evicted": sid.to_json(), "reason": reason})

    def _next_victim(self):
        for sid in self._lsb:
            if sid not in self._pinned:
                return sid
        for sid in self._msb:
            if sid not in self._pinned:
                return sid
        return None

    def evict_until_fits(self, needed_bits):
        if needed_bits > self.capacity_bits:
            raise CapacityError(f"{needed_bits} bits exceeds capacity {self.capacity_bits}")
        while self.occupancy_bits + needed_bits > self.capacity_bits:
            victim = self._next_victim()
            if victim is None:
                raise CapacityError(
                    f"need {needed_bits} bits but every resident slice is pinned "
                    f"({self.occupancy_bits}/{self.capacity_bits} bits used)"
                )
            self._remove(victim, "lsb_pressure" if victim.kind == LSB else "lru")

    def _trim_lsb(self):
        limit = self.lsb_fraction * self.capacity_bits
        if self.lsb_bits_resident <= limit:
            return
        for sid in list(self._lsb):
            if self.lsb_bits_resident <= limit:
                break
            if sid not in self._pinned:
                self._remove(sid, "lsb_pressure")

    def access(self, sid):
        size = self.table.footprint(sid.kind)
        if size == 0:
            raise ConfigError("this cache has no LSB slices", "kind")
        if size > self.capacity_bits:
            raise CapacityError(f"slice of {size} bits exceeds capacity {self.capacity_bits}")
        self.step += 1
        st = self.stats[sid.kind]
        if self._pinning:
            self._pinned.add(sid)
        if sid.kind == MSB and sid in self._msb:
            self._msb.move_to_end(sid)
            st["hits"] += 1
            return Outcome.HIT
        if sid.kind == LSB and sid in self._lsb:
            st["hits"] += 1
            return Outcome.HIT
        st["misses"] += 1
        st["flash_bits"] += size
        self.evict_until_fits(size)
        self._add(sid)
        if sid.kind == LSB:
            self._trim_lsb()
        return Outcome.MISS

    def bulk_install(self, slices):
        """Replace the contents; the first listed MSB becomes most recent.

        LSBs are installed so the last-listed one is evicted first.
        Statistics are not touched.
        """
        slices = list(slices)
        if len(set(slices)) != len(slices):
            raise ConfigError("duplicate slice in install list", "slices")
        total = sum(self.table.footprint(s.kind) for s in slices)
        if any(self.table.footprint(s.kind) == 0 for s in slices):
            raise ConfigError("this cache has no LSB slices", "slices")
        if total > self.capacity_bits:
            raise CapacityError(f"install list needs {total} bits, capacity is {self.capacity_bits}")
        self._msb.clear()
        self._lsb.clear()
        self._by_layer = {MSB: {}, LSB: {}}
        self._pinned.clear()
        self.occupancy_bits = 0
        self.lsb_bits_resident = 0
        for sid in reversed(slices):
            self._add(sid)

    def write_eviction_log(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.eviction_log or ():
                fh.write(json.dumps(rec) + "\n")

    def layer_view(self, layer, lsb_miss_degrade=False):
        return LayerView(self, layer, lsb_miss_degrade)


class LayerView:
    """Read-only pricing of demands against one layer of a cache."""

    def __init__(self, cache, layer, lsb_miss_degrade=False):
        self.cache = cache
        self.layer = layer
        self.lsb_miss_degrade = lsb_miss_degrade
        self.high_bits = cache.table.high_bits

    def msb_resident(self, expert):
        return SliceId(self.layer, expert, MSB) in self.cache._msb

    def lsb_resident(self, expert):
        return SliceId(self.layer, expert, LSB) in self.cache._lsb

    def cached_msb(self):
        return set(self.cache._by_layer[MSB].get(self.layer, ()))

    def cached_high(self):
        return self.cached_msb() & self.cache._by_layer[LSB].get(self.layer, set())

    def miss_bits(self, demand):
        table = self.cache.table
        bits = 0
        for e, p in zip(demand.experts, demand.precision):
            if not self.msb_resident(e):
                bits += table.msb_bits
            if p == "high" and table.has_lsb and not self.lsb_resident(e):
                if not self.lsb_miss_degrade:
                    bits += table.lsb_bits
        return bits
