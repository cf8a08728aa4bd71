"""Routing traces: synthetic generation, JSONL I/O, and hotness statistics."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, TraceFormatError

PREFILL = "prefill"
DECODE = "decode"
SCORE_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ModelGeometry:
    num_layers: int
    experts_per_layer: int
    top_k: int
    expert_params: int
    b_high: int = 8
    b_low: int = 4

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError("must be >= 1", "num_layers")
        if self.experts_per_layer < 1:
            raise ConfigError("must be >= 1", "experts_per_layer")
        if not 1 <= self.top_k <= self.experts_per_layer:
            raise ConfigError(
                f"must be in [1, {self.experts_per_layer}], got {self.top_k}", "top_k"
            )
        if self.expert_params < 1:
            raise ConfigError("must be >= 1", "expert_params")
        if not 2 <= self.b_low <= self.b_high <= 8:
            raise ConfigError(
                f"need 2 <= b_low <= b_high <= 8, got ({self.b_high}, {self.b_low})", "b_low"
            )

    @property
    def shift(self):
        return self.b_high - self.b_low

    def to_json(self):
        return {
            "layers": self.num_layers,
            "experts": self.experts_per_layer,
            "top_k": self.top_k,
            "expert_params": self.expert_params,
            "b_high": self.b_high,
            "b_low": self.b_low,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            num_layers=int(d["layers"]),
            experts_per_layer=int(d["experts"]),
            top_k=int(d["top_k"]),
            expert_params=int(d["expert_params"]),
            b_high=int(d["b_high"]),
            b_low=int(d["b_low"]),
        )


# Shapes modeled on public MoE checkpoints; configuration, not measurements.
GEOMETRY_PRESETS = {
    "deepseek-v2-lite": ModelGeometry(26, 64, 6, 3 * 2048 * 1408, 8, 4),
    "qwen1.5-moe": ModelGeometry(24, 60, 4, 3 * 2048 * 1408, 6, 3),
    "tiny": ModelGeometry(4, 8, 2, 4096, 8, 4),
}


@dataclass(frozen=True)
class RoutingEvent:
    phase: str
    token_index: int
    layer: int
    scores: np.ndarray


def _check_scores(scores, where):
    if scores.ndim != 1:
        raise ConfigError(f"{where}: scores must be 1-D")
    if not np.all(np.isfinite(scores)):
        raise ConfigError(f"{where}: non-finite score")
    if np.any(scores < 0):
        raise ConfigError(f"{where}: negative score")
    total = float(scores.sum())
    if abs(total - 1.0) > SCORE_SUM_TOL:
        raise ConfigError(f"{where}: scores sum to {total!r}, not 1")


class Trace:
    """Gating scores for every (token, layer), prefill tokens first.

    Stored as two arrays of shape (tokens, layers, experts); ``events()``
    yields the flat ordered event view.
    """

    def __init__(self, geometry, prefill_scores, decode_scores):
        self.geometry = geometry
        shape_tail = (geometry.num_layers, geometry.experts_per_layer)
        arrays = []
        for name, arr in ((PREFILL, prefill_scores), (DECODE, decode_scores)):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.size == 0:
                arr = arr.reshape((0,) + shape_tail)
            if arr.ndim != 3 or arr.shape[1:] != shape_tail:
                raise ConfigError(f"{name} scores must have shape (tokens, {shape_tail[0]}, {shape_tail[1]})")
            if arr.size:
                if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                    raise ConfigError(f"{name} scores must be finite and non-negative")
                sums = arr.sum(axis=2)
                bad = np.abs(sums - 1.0) > SCORE_SUM_TOL
                if bad.any():
                    t, layer = np.argwhere(bad)[0]
                    raise ConfigError(f"{name} token {t} layer {layer}: scores sum to {sums[t, layer]!r}")
            arr.setflags(write=False)
            arrays.append(arr)
        self.prefill_scores, self.decode_scores = arrays

    @property
    def prefill_tokens(self):
        return self.prefill_scores.shape[0]

    @property
    def decode_tokens(self):
        return self.decode_scores.shape[0]

    def events(self):
        for phase, arr in ((PREFILL, self.prefill_scores), (DECODE, self.decode_scores)):
            for t in range(arr.shape[0]):
                for layer in range(arr.shape[1]):
                    yield RoutingEvent(phase, t, layer, arr[t, layer])

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.prefill_scores, other.prefill_scores)
            and np.array_equal(self.decode_scores, other.decode_scores)
        )

    __hash__ = None


# -- synthetic generation ---------------------------------------------------

@dataclass(frozen=True)
class GenParams:
    prefill_tokens: int = 512
    decode_tokens: int = 128
    sharpness_base: float = 1.0
    sharpness_depth_slope: float = 0.02
    hotness_correlation: float = 0.8
    popularity_concentration: float = 0.3
    token_noise: float = 1.0
    min_temperature: float = 0.05

    def validate(self):
        if self.prefill_tokens < 0:
            raise ConfigError("must be >= 0", "prefill_tokens")
        if self.decode_tokens < 0:
            raise ConfigError("must be >= 0", "decode_tokens")
        if not self.sharpness_base > 0:
            raise ConfigError("must be > 0", "sharpness_base")
        if not np.isfinite(self.sharpness_depth_slope):
            raise ConfigError("must be finite", "sharpness_depth_slope")
        if not 0.0 <= self.hotness_correlation <= 1.0:
            raise ConfigError("must be in [0, 1]", "hotness_correlation")
        if not self.popularity_concentration > 0:
            raise ConfigError("must be > 0", "popularity_concentration")
        if not self.token_noise >= 0:
            raise ConfigError("must be >= 0", "token_noise")
        if not self.min_temperature > 0:
            raise ConfigError("must be > 0", "min_temperature")
        return self


def layer_temperatures(num_layers, params):
    tau = params.sharpness_base - params.sharpness_depth_slope * np.arange(num_layers)
    return np.maximum(tau, params.min_temperature)


def _softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def generate(geometry, params=None, seed=0):
    """Sample a trace with phase-correlated expert popularity.

    Popularity logits come from log Gamma(alpha) draws, so the implied
    expert popularity is Dirichlet(alpha): small alpha concentrates traffic on
    a few experts.  Decode logits mix the prefill logits with an independent
    draw in proportion ``hotness_correlation``.  Per-token Gaussian noise
    is added, and deeper layers use a lower softmax temperature.
    """
    params = (params or GenParams()).validate()
    rng = np.random.default_rng(seed)
    L, E = geometry.num_layers, geometry.experts_per_layer
    alpha = params.popularity_concentration
    # one sorted profile, dealt to experts by an independent permutation per layer
    profile = np.sort(np.log(np.maximum(rng.gamma(alpha, size=E), 1e-300)))
    profile = profile - profile.mean()
    prefill_logits = np.stack([profile[rng.permutation(E)] for _ in range(L)])
    fresh_logits = np.stack([profile[rng.permutation(E)] for _ in range(L)])
    rho = params.hotness_correlation
    decode_logits = rho * prefill_logits + (1.0 - rho) * fresh_logits
    temps = layer_temperatures(L, params)[None, :, None]

    def sample(logits, tokens):
        noise = rng.standard_normal((tokens, L, E)) * params.token_noise
        return _softmax((logits[None] + noise) / temps, axis=2)

    return Trace(geometry, sample(prefill_logits, params.prefill_tokens),
                 sample(decode_logits, params.decode_tokens))


# -- JSONL I/O --------------------------------------------------------------

def save(trace, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"geometry": trace.geometry.to_json()}) + "\n")
        for ev in trace.events():
            fh.write(json.dumps({
                "phase": ev.phase,
                "token": ev.token_index,
                "layer": ev.layer,
                "scores": [float(s) for s in ev.scores],
            }) + "\n")


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError("empty file", 1)
    try:
        header = json.loads(lines[0])
        geometry = ModelGeometry.from_json(header["geometry"])
    except (ValueError, KeyError, TypeError) as exc:
        raise TraceFormatError(f"bad header: {exc}", 1) from None
    L, E = geometry.num_layers, geometry.experts_per_layer

    rows = {PREFILL: [], DECODE: []}
    expect_phase, expect_token, expect_layer = PREFILL, 0, 0
    for lineno, text in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(text)
            phase = rec["phase"]
            token = rec["token"]
            layer = rec["layer"]
            scores = np.asarray(rec["scores"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceFormatError(f"malformed event: {exc}", lineno) from None
        if phase not in rows or type(token) is not int or type(layer) is not int:
            raise TraceFormatError("bad phase/token/layer field", lineno)
        if phase == DECODE and expect_phase == PREFILL and expect_layer == 0:
            expect_phase, expect_token = DECODE, 0
        if (phase, token, layer) != (expect_phase, expect_token, expect_layer):
            raise TraceFormatError(
                f"expected {expect_phase} token {expect_token} layer {expect_layer}, "
                f"got {phase} token {token} layer {layer}", lineno)
        if scores.shape != (E,):
            raise TraceFormatError(f"expected {E} scores, got {scores.size}", lineno)
        try:
            _check_scores(scores, "event")
        except ConfigError as exc:
            raise TraceFormatError(str(exc), lineno) from None
        if layer == 0:
            rows[phase].append(np.empty((L, E)))
        rows[phase][-1][layer] = scores
        expect_layer += 1
        if expect_layer == L:
            expect_layer = 0
            expect_token += 1
    if expect_layer != 0:
        raise TraceFormatError(
            f"truncated: token {expect_token} has {expect_layer} of {L} layers", len(lines) + 1)

    def stack(phase):
        return np.stack(rows[phase]) if rows[phase] else np.zeros((0, L, E))

    return Trace(geometry, stack(PREFILL), stack(DECODE))


# -- hotness ----------------------------------------------------------------

@dataclass
class HotnessStats:
    """Per-(layer, expert) access counts and gating mass, split by phase.

    ``prefill_norm_score`` sums s_i / s_max over the prefill tokens that
    routed to expert i; divide by the count for the mean.
    """

    prefill_counts: np.ndarray
    prefill_mass: np.ndarray
    prefill_norm_score: np.ndarray
    decode_counts: np.ndarray
    decode_mass: np.ndarray
    prefill_tokens: int
    decode_tokens: int
    decode_window: int = 0
    extra: dict = field(default_factory=dict)

    def mean_norm_score(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.prefill_norm_score / self.prefill_counts
        return np.where(self.prefill_counts > 0, out, 0.0)


def _phase_hotness(scores, k):
    T, L, E = scores.shape
    counts = np.zeros((L, E), dtype=np.int64)
    mass = np.zeros((L, E))
    norm = np.zeros((L, E))
    if T == 0:
        return counts, mass, norm
    for layer in range(L):
        s = np.ascontiguousarray(scores[:, layer, :])
        sel = _kernels.topk_rows(s, k)
        picked = np.take_along_axis(s, sel, axis=1)
        smax = s.max(axis=1, keepdims=True)
        np.add.at(counts[layer], sel.ravel(), 1)
        np.add.at(norm[layer], sel.ravel(), (picked / smax).ravel())
        mass[layer] = s.sum(axis=0)
    return counts, mass, norm


def hotness(trace, decode_window=0):
    """Phase-wise top-k access frequencies.

    Access means "in the plain top-k set", whatever policy a simulation
    later uses.  ``decode_window`` limits decode statistics to the first N
    decode tokens; 0 means all of them.
    """
    if decode_window < 0:
        raise ConfigError("must be >= 0", "decode_window")
    k = trace.geometry.top_k
    pc, pm, pn = _phase_hotness(trace.prefill_scores, k)
    dec = trace.decode_scores if decode_window == 0 else trace.decode_scores[:decode_window]
    dc, dm, _ = _phase_hotness(dec, k)
    return HotnessStats(pc, pm, pn, dc, dm, trace.prefill_tokens, dec.shape[0], decode_window)


def params_to_dict(params):
    return asdict(params)
