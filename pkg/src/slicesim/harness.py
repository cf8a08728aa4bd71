"""Configuration, the end-to-end simulation driver, sweeps, and reports."""
import copy
import csv
import functools
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import yaml

from . import _kernels, quant, router, warmup
from . import trace as trace_mod
from .cache import LSB, MSB, SliceCache, SliceId, SliceTable
from .cost import CostLedger, ExpertExecution, SystemSpec, charge_token, energy, latency
from .errors import ConfigError

SCHEMA_VERSION = 1

HIGH_BIT_BASELINE = "high_bit_baseline"
LOW_BIT_UNIFORM = "low_bit_uniform"
AMAT_ONLY = "amat_only"
DBSC = "dbsc"
DBSC_PCW = "dbsc_pcw"
MODES = (HIGH_BIT_BASELINE, LOW_BIT_UNIFORM, AMAT_ONLY, DBSC, DBSC_PCW)

CAPACITY_PRESETS_GB = (1.8, 2.4, 3.6)
FIRST_WINDOW = 10

DEFAULT_CONFIG = {
    "seed": 0,
    "mode": DBSC,
    "geometry": {
        "preset": "deepseek-v2-lite",
        "layers": None,
        "experts": None,
        "top_k": None,
        "expert_params": None,
    },
    "mat": "MAT84",
    "group_size": 32,
    "capacity_gb": 1.8,
    "policy": {
        "kind": router.CACHE_PRIOR,
        "k": None,
        "mass_threshold": 0.9,
        "boost": 1.0,
        "boost_mode": "multiplicative",
    },
    "precision": {"theta": 0.5, "dominance_c": 2.0},
    "constraint": {"tau": 1.0, "warmup_steps": 10},
    "cache": {"lsb_fraction": 0.1, "lsb_miss_degrade": False},
    "warmup": {"kind": warmup.EMPTY, "seed": None, "theta": None, "msb_first": False},
    "trace": {
        "path": None,
        "seed": None,
        "prefill_tokens": 512,
        "decode_tokens": 128,
        "sharpness_base": 1.0,
        "sharpness_depth_slope": 0.02,
        "hotness_correlation": 0.8,
        "popularity_concentration": 0.3,
        "token_noise": 1.0,
    },
    "quality": {"samples": 65536, "mean": 0.3, "std": 1.0},
    "system": SystemSpec().to_dict(),
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError("unknown key", where)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a mapping", where)
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def set_path(d, dotted, value):
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


@dataclass(frozen=True)
class SimConfig:
    raw: dict
    geometry: trace_mod.ModelGeometry
    mode: str
    group_size: int
    capacity_bits: int
    policy: router.RoutingPolicy
    theta: float
    dominance_c: float
    tau: float
    warmup_steps: int
    lsb_fraction: float
    lsb_miss_degrade: bool
    warmup: warmup.WarmupStrategy
    trace_path: object
    trace_seed: int
    gen_params: trace_mod.GenParams
    system: SystemSpec
    seed: int

    def to_dict(self):
        return copy.deepcopy(self.raw)

    @property
    def sliced(self):
        return self.mode in (DBSC, DBSC_PCW)

    def slice_table(self):
        if self.mode == HIGH_BIT_BASELINE:
            return SliceTable.whole_expert(self.geometry, self.group_size)
        table = SliceTable.from_geometry(self.geometry, self.group_size)
        if not self.sliced:
            # uniform low-bit: the MSB-sized expert is all there is
            return SliceTable(table.msb_bits, 0)
        return table


def _num(d, key, kind, where):
    v = d[key]
    try:
        if kind is int:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {kind.__name__}, got {v!r}", f"{where}{key}") from None


def build_config(overrides=None):
    """Validate a (partial) config mapping into a SimConfig."""
    raw = _merge(DEFAULT_CONFIG, overrides or {})
    seed = _num(raw, "seed", int, "")

    g = raw["geometry"]
    preset = g["preset"]
    if preset is not None and preset not in trace_mod.GEOMETRY_PRESETS:
        raise ConfigError(f"unknown preset {preset!r}", "geometry.preset")
    base = trace_mod.GEOMETRY_PRESETS.get(preset)
    fields = {}
    for key, attr in (("layers", "num_layers"), ("experts", "experts_per_layer"),
                      ("top_k", "top_k"), ("expert_params", "expert_params")):
        if g[key] is not None:
            fields[attr] = _num(g, key, int, "geometry.")
        elif base is not None:
            fields[attr] = getattr(base, attr)
        else:
            raise ConfigError("required when no preset is given", f"geometry.{key}")
    b_high, b_low = quant.parse_mat(raw["mat"])
    geometry = trace_mod.ModelGeometry(b_high=b_high, b_low=b_low, **fields)

    mode = raw["mode"]
    if mode not in MODES:
        raise ConfigError(f"must be one of {MODES}, got {mode!r}", "mode")

    group_size = _num(raw, "group_size", int, "")
    if group_size < 1:
        raise ConfigError("must be >= 1", "group_size")
    capacity_gb = _num(raw, "capacity_gb", float, "")
    if capacity_gb <= 0:
        raise ConfigError("must be > 0", "capacity_gb")
    capacity_bits = int(round(capacity_gb * 1e9 * 8))

    p = raw["policy"]
    policy = router.RoutingPolicy(
        kind=p["kind"],
        k=_num(p, "k", int, "policy.") if p["k"] is not None else geometry.top_k,
        mass_threshold=_num(p, "mass_threshold", float, "policy."),
        boost=_num(p, "boost", float, "policy."),
        boost_mode=p["boost_mode"],
    )
    if policy.k > geometry.experts_per_layer:
        raise ConfigError("exceeds experts per layer", "policy.k")

    theta = _num(raw["precision"], "theta", float, "precision.")
    if not 0.0 < theta <= 1.0:
        raise ConfigError("must be in (0, 1]", "precision.theta")
    dominance_c = _num(raw["precision"], "dominance_c", float, "precision.")
    tau = _num(raw["constraint"], "tau", float, "constraint.")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("must be in [0, 1]", "constraint.tau")
    warmup_steps = _num(raw["constraint"], "warmup_steps", int, "constraint.")
    if warmup_steps < 0:
        raise ConfigError("must be >= 0", "constraint.warmup_steps")

    c = raw["cache"]
    lsb_fraction = _num(c, "lsb_fraction", float, "cache.")
    if not 0.0 <= lsb_fraction <= 1.0:
        raise ConfigError("must be in [0, 1]", "cache.lsb_fraction")

    w = raw["warmup"]
    kind = warmup.PCW if mode == DBSC_PCW else w["kind"]
    strategy = warmup.WarmupStrategy(
        kind=kind,
        seed=_num(w, "seed", int, "warmup.") if w["seed"] is not None else seed,
        theta=_num(w, "theta", float, "warmup.") if w["theta"] is not None else theta,
        decode_window_hint=FIRST_WINDOW,
        msb_first=bool(w["msb_first"]),
    )

    t = raw["trace"]
    gen = trace_mod.GenParams(
        prefill_tokens=_num(t, "prefill_tokens", int, "trace."),
        decode_tokens=_num(t, "decode_tokens", int, "trace."),
        sharpness_base=_num(t, "sharpness_base", float, "trace."),
        sharpness_depth_slope=_num(t, "sharpness_depth_slope", float, "trace."),
        hotness_correlation=_num(t, "hotness_correlation", float, "trace."),
        popularity_concentration=_num(t, "popularity_concentration", float, "trace."),
        token_noise=_num(t, "token_noise", float, "trace."),
    )
    try:
        gen.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"trace.{exc.field}") from None

    q = raw["quality"]
    if _num(q, "samples", int, "quality.") < 1:
        raise ConfigError("must be >= 1", "quality.samples")
    if _num(q, "std", float, "quality.") < 0:
        raise ConfigError("must be >= 0", "quality.std")
    _num(q, "mean", float, "quality.")

    system = SystemSpec.from_dict(raw["system"])
    cfg = SimConfig(
        raw=raw,
        geometry=geometry,
        mode=mode,
        group_size=group_size,
        capacity_bits=capacity_bits,
        policy=policy,
        theta=theta,
        dominance_c=dominance_c,
        tau=tau,
        warmup_steps=warmup_steps,
        lsb_fraction=lsb_fraction,
        lsb_miss_degrade=bool(c["lsb_miss_degrade"]),
        warmup=strategy,
        trace_path=t["path"],
        trace_seed=_num(t, "seed", int, "trace.") if t["seed"] is not None else seed,
        gen_params=gen,
        system=system,
        seed=seed,
    )
    if capacity_bits < cfg.slice_table().msb_bits:
        raise ConfigError("cannot hold a single slice", "capacity_gb")
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse: {exc}", str(path)) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", str(path))
    return data


def default_config_text():
    return yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False, default_flow_style=False)


# -- quality proxy ----------------------------------------------------------

@functools.lru_cache(maxsize=64)
def precision_mse(b_high, b_low, group_size, samples, mean, std, seed):
    """Reconstruction MSE of a synthetic weight sample at each precision."""
    rng = np.random.default_rng(seed)
    w = rng.normal(mean, std, samples)
    hi = quant.quantize(w, quant.QuantConfig(b_high, group_size))
    out = {"high": quant.mse(w, quant.dequantize(hi))}
    if b_low < b_high:
        amat = quant.truncate_amat(hi, b_low)
        base = quant.quantize(w, quant.QuantConfig(b_low, group_size))
        out["amat_low"] = quant.mse(w, quant.dequantize(amat))
        out["base_low"] = quant.mse(w, quant.dequantize(base))
    else:
        out["amat_low"] = out["base_low"] = out["high"]
    return out


# -- reports ----------------------------------------------------------------

class RunReport:
    """Result of one simulation; ``data`` is the JSON-ready mapping."""

    REQUIRED = (
        "schema_version", "config", "seed", "prefill", "decode", "decode_first10",
        "cache", "normalized_miss_rate", "quality_mse", "energy_pj", "latency_ns",
    )

    def __init__(self, data, ledgers=None):
        self.data = data
        self.ledgers = ledgers or {}

    def __getitem__(self, key):
        return self.data[key]

    def __eq__(self, other):
        if not isinstance(other, RunReport):
            return NotImplemented
        return self.data == other.data

    __hash__ = None

    def to_dict(self):
        return copy.deepcopy(self.data)

    def to_json(self):
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        missing = [k for k in cls.REQUIRED if k not in data]
        if missing:
            raise ConfigError(f"report is missing {missing}", "report")
        if data["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {data['schema_version']}", "report")
        return cls(copy.deepcopy(data))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def load_trace_for(cfg):
    if cfg.trace_path:
        tr = trace_mod.load(cfg.trace_path)
        if tr.geometry != cfg.geometry:
            raise ConfigError(
                f"trace geometry {tr.geometry.to_json()} differs from config", "trace.path")
        return tr
    return trace_mod.generate(cfg.geometry, cfg.gen_params, cfg.trace_seed)


def _access_event(cache, layer, demand, table, degrade):
    """Run the cache accesses for one (token, layer); return executions.

    Resident slices are touched before missing ones, and every touched
    slice stays pinned until the event ends.
    """
    plan = []
    for e, p in zip(demand.experts, demand.precision):
        plan.append(SliceId(layer, e, MSB))
        if p == router.HIGH and table.has_lsb:
            sid = SliceId(layer, e, LSB)
            if sid in cache or not degrade:
                plan.append(sid)
    outcome = {}
    with cache.pinning():
        cache.pin([s for s in plan if s in cache])
        for sid in sorted(plan, key=lambda s: s not in cache):
            outcome[sid] = cache.access(sid).value == "hit"
    execs = []
    for e in demand.experts:
        lsb = SliceId(layer, e, LSB)
        lsb_hit = outcome.get(lsb)
        execs.append(ExpertExecution(e, outcome[SliceId(layer, e, MSB)], lsb_hit, lsb_hit is not None))
    return execs


def run(cfg, trace=None, access_log=None):
    """Simulate prefill, warmup, and constrained decode for one config.

    ``access_log``, if a list, receives ``(step, layer, demand, executions)``
    for every decode event.
    """
    if isinstance(cfg, dict):
        cfg = build_config(cfg)
    g = cfg.geometry
    tr = trace if trace is not None else load_trace_for(cfg)
    table = cfg.slice_table()
    full_table = SliceTable.whole_expert(g, cfg.group_size)

    hot = warmup.run_prefill(tr, require_tokens=cfg.warmup.kind == warmup.PCW)
    prefill = warmup.prefill_ledger(tr, full_table.msb_bits, cfg.capacity_bits, hot)

    cache = SliceCache(cfg.capacity_bits, table, cfg.lsb_fraction)
    initial = warmup.build_initial_cache(cfg.warmup, hot, table, cfg.capacity_bits, g)
    cache.bulk_install(initial)

    q = cfg.raw["quality"]
    mse_levels = precision_mse(g.b_high, g.b_low, cfg.group_size, int(q["samples"]),
                               float(q["mean"]), float(q["std"]), cfg.seed)
    if cfg.mode == HIGH_BIT_BASELINE:
        level_of = {router.LOW: "high", router.HIGH: "high"}
    elif cfg.mode == LOW_BIT_UNIFORM:
        level_of = {router.LOW: "base_low", router.HIGH: "base_low"}
    else:
        level_of = {router.LOW: "amat_low", router.HIGH: "high"}

    constraint = router.MissConstraint(cfg.tau, cfg.warmup_steps)
    decode = CostLedger("decode")
    quality_sum = 0.0
    retained_sum = 0.0
    events = 0
    critical_hist = [0, 0, 0, 0]
    k = g.top_k

    for t in range(tr.decode_tokens):
        for layer in range(g.num_layers):
            scores = tr.decode_scores[t, layer]
            view = cache.layer_view(layer, cfg.lsb_miss_degrade)
            sel = router.route(cfg.policy, scores, view.cached_high(), view.cached_msb())
            if cfg.sliced:
                demand = router.assign_precision(scores, sel, cfg.theta, cfg.dominance_c)
                critical_hist[min(demand.high_count, 3)] += 1
            else:
                demand = router.PrecisionDemand(sel.experts, [router.LOW] * len(sel), sel.weights)
            demand = constraint.enforce(t, scores, demand, view)
            execs = _access_event(cache, layer, demand, table, cfg.lsb_miss_degrade)
            if access_log is not None:
                access_log.append((t, layer, demand, execs))
            before = decode.flash_bits
            charge_token(decode, t, execs, table, g.expert_params)
            constraint.record(t, decode.flash_bits - before, len(execs) * table.high_bits)

            for w, ex in zip(demand.weights, execs):
                level = level_of[router.HIGH if ex.used_lsb else router.LOW]
                quality_sum += float(w) * mse_levels[level]
            top = _kernels.topk(scores, k)
            top_mass = float(scores[top].sum())
            kept = float(sum(scores[e] for e in set(demand.experts) & set(top.tolist())))
            retained_sum += kept / top_mass if top_mass > 0 else 1.0
            events += 1

    first = decode.restricted(range(min(FIRST_WINDOW, tr.decode_tokens)))
    stats = cache.snapshot_stats()
    spec = cfg.system
    dec_energy = energy(decode, spec)
    data = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "mode": cfg.mode,
        "slice_table": {"msb_bits": table.msb_bits, "lsb_bits": table.lsb_bits,
                        "high_bits": table.high_bits},
        "capacity_bits": cfg.capacity_bits,
        "prefill": prefill.summary(),
        "decode": decode.summary(),
        "decode_first10": first.summary(),
        "cache": stats,
        "miss_bits": constraint.miss_bits,
        "full_bits": constraint.full_bits,
        "normalized_miss_rate": constraint.normalized_miss_rate(),
        "max_token_miss_fraction": constraint.largest_token_contribution(),
        "quality_mse": quality_sum / events if events else 0.0,
        "precision_mse": dict(mse_levels),
        "routed_mass_retained": retained_sum / events if events else 1.0,
        "energy_pj": dec_energy,
        "latency_ns": latency(decode, spec),
        "first10_energy_pj": energy(first, spec),
        "first10_latency_ns": latency(first, spec),
        "prefill_energy_pj": energy(prefill, spec),
        "prefill_latency_ns": latency(prefill, spec),
        "warmup": {
            "kind": cfg.warmup.kind,
            "installed_msb": sum(1 for s in initial if s.kind == MSB),
            "installed_lsb": sum(1 for s in initial if s.kind == LSB),
            **warmup.retention_ratios(initial, g),
        },
        "routing": {
            "policy": cfg.policy.kind,
            "substitutions": constraint.substitutions,
            "downgrades": constraint.downgrades,
            "overshoot_events": constraint.overshoot_events,
            "critical_histogram": critical_hist,
        },
    }
    return RunReport(data, {"prefill": prefill, "decode": decode, "decode_first10": first})


# -- sweeps -----------------------------------------------------------------

def expand_axes(base, axes):
    """Cartesian product of ``axes`` (dotted key -> values) over ``base``."""
    keys = list(axes)
    cells = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        d = copy.deepcopy(base)
        for key, value in zip(keys, combo):
            set_path(d, key, value)
        cells.append(d)
    return cells


def _run_cell(d):
    return run(build_config(d))


def sweep(base, axes, jobs=1):
    cells = expand_axes(base, axes)
    # validate every cell before running any
    for d in cells:
        build_config(d)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(d) for d in cells]


def parse_axis(text):
    """``"constraint.tau=0.05,0.1"`` to ``("constraint.tau", [0.05, 0.1])``."""
    if "=" not in text:
        raise ConfigError(f"expected key=v1,v2,... got {text!r}", "axis")
    key, values = text.split("=", 1)
    return key.strip(), [yaml.safe_load(v) for v in values.split(",")]


# -- emission ---------------------------------------------------------------

def flatten(d, prefix=""):
    out = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        elif isinstance(value, list):
            out[name] = json.dumps(value)
        else:
            out[name] = value
    return out


def to_csv(reports):
    rows = [flatten(r.data) for r in reports]
    header = []
    for row in rows:
        for key in row:
            if key not in header:
                header.append(key)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def to_json(reports):
    if isinstance(reports, RunReport):
        return reports.to_json()
    return json.dumps([r.data for r in reports], sort_keys=True, indent=2) + "\n"


def emit(reports, fmt="json", path=None):
    if fmt == "json":
        text = to_json(reports)
    elif fmt == "csv":
        if isinstance(reports, RunReport):
            reports = [reports]
        text = to_csv(reports)
    else:
        raise ConfigError(f"unknown format {fmt!r}", "format")
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def load_reports(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        return [RunReport.from_dict(d) for d in data]
    return RunReport.from_dict(data)
