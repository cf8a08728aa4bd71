import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import spearman_ref
from slicesim import trace as trace_mod
from slicesim.errors import ConfigError, TraceFormatError
from slicesim.trace import GenParams, ModelGeometry, Trace


def freq_correlations(tr, window=10):
    """Per-layer Spearman of prefill vs early-decode top-k frequency."""
    hot = trace_mod.hotness(tr, decode_window=window)
    return [spearman_ref(hot.prefill_counts[l], hot.decode_counts[l]) for l in range(tr.geometry.num_layers)]


def test_geometry_validation():
    with pytest.raises(ConfigError):
        ModelGeometry(4, 8, 9, 64)
    with pytest.raises(ConfigError):
        ModelGeometry(4, 8, 2, 64, b_high=4, b_low=8)
    g = ModelGeometry(4, 8, 2, 64)
    assert ModelGeometry.from_json(g.to_json()) == g


def test_presets():
    g = trace_mod.GEOMETRY_PRESETS["deepseek-v2-lite"]
    assert (g.num_layers, g.experts_per_layer, g.top_k) == (26, 64, 6)


def test_same_seed_byte_identical(tiny, tmp_path):
    a = trace_mod.generate(tiny, GenParams(prefill_tokens=8, decode_tokens=8), seed=11)
    b = trace_mod.generate(tiny, GenParams(prefill_tokens=8, decode_tokens=8), seed=11)
    trace_mod.save(a, tmp_path / "a.jsonl")
    trace_mod.save(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    c = trace_mod.generate(tiny, GenParams(prefill_tokens=8, decode_tokens=8), seed=12)
    assert not a == c


def test_events_satisfy_invariants(tiny_trace):
    n = 0
    for ev in tiny_trace.events():
        assert ev.scores.shape == (tiny_trace.geometry.experts_per_layer,)
        assert np.all(ev.scores >= 0)
        assert abs(ev.scores.sum() - 1) <= trace_mod.SCORE_SUM_TOL
        n += 1
    g = tiny_trace.geometry
    assert n == (tiny_trace.prefill_tokens + tiny_trace.decode_tokens) * g.num_layers


def test_trace_rejects_bad_scores(tiny):
    bad = np.full((1, tiny.num_layers, tiny.experts_per_layer), 1 / 8)
    bad[0, 1, 0] = -0.1
    with pytest.raises(ConfigError):
        Trace(tiny, bad, np.zeros((0, tiny.num_layers, tiny.experts_per_layer)))


def test_gen_params_validation():
    with pytest.raises(ConfigError, match="hotness_correlation"):
        GenParams(hotness_correlation=1.5).validate()
    with pytest.raises(ConfigError, match="sharpness_base"):
        GenParams(sharpness_base=0).validate()


def test_rho_one_zero_noise_rankings_identical(tiny):
    p = GenParams(prefill_tokens=64, decode_tokens=64, hotness_correlation=1.0, token_noise=0.0)
    hot = trace_mod.hotness(trace_mod.generate(tiny, p, seed=4))
    assert np.array_equal(hot.prefill_counts, hot.decode_counts)
    for layer in range(tiny.num_layers):
        assert np.argmax(hot.prefill_counts[layer]) == np.argmax(hot.decode_counts[layer])


def test_rho_one_top_expert_matches_early_decode():
    g = ModelGeometry(6, 16, 2, 64)
    tr = trace_mod.generate(g, GenParams(prefill_tokens=256, decode_tokens=10, hotness_correlation=1.0), seed=9)
    hot = trace_mod.hotness(tr, decode_window=10)
    agree = sum(np.argmax(hot.prefill_counts[l]) == np.argmax(hot.decode_counts[l]) for l in range(6))
    assert agree >= 5


def test_rho_zero_correlation_is_noise():
    g = ModelGeometry(4, 16, 2, 64)
    p = GenParams(prefill_tokens=128, decode_tokens=64, hotness_correlation=0.0)
    rs = [np.mean(freq_correlations(trace_mod.generate(g, p, seed=s), window=64)) for s in range(20)]
    assert stats.ttest_1samp(rs, 0.0).pvalue > 0.01


def test_correlation_monotone_in_rho():
    g = ModelGeometry(4, 16, 2, 64)
    means = []
    for rho in (0.0, 0.5, 1.0):
        p = GenParams(prefill_tokens=128, decode_tokens=64, hotness_correlation=rho)
        means.append(np.mean([np.mean(freq_correlations(trace_mod.generate(g, p, seed=s), 64)) for s in range(10)]))
    assert means[0] <= means[1] <= means[2]


def test_monotone_sharpness():
    g = ModelGeometry(12, 16, 2, 64)
    tr = trace_mod.generate(g, GenParams(prefill_tokens=400, decode_tokens=0, sharpness_depth_slope=0.05), seed=2)
    mean_max = tr.prefill_scores.max(axis=2).mean(axis=0)
    # sampling noise aside, deeper layers are sharper
    assert stats.spearmanr(np.arange(12), mean_max).statistic > 0.8
    assert mean_max[-1] > mean_max[0]


def test_layer_temperature_floor():
    t = trace_mod.layer_temperatures(100, GenParams(sharpness_base=1.0, sharpness_depth_slope=0.1))
    assert t.min() == pytest.approx(0.05)
    assert np.all(np.diff(t) <= 0)


# -- JSONL -------------------------------------------------------------------

def test_save_load_round_trip(tiny_trace, tmp_path):
    path = tmp_path / "t.jsonl"
    trace_mod.save(tiny_trace, path)
    assert trace_mod.load(path) == tiny_trace


def _write_trace(path, tiny, tokens=2):
    tr = trace_mod.generate(tiny, GenParams(prefill_tokens=tokens, decode_tokens=tokens), seed=0)
    trace_mod.save(tr, path)
    return path.read_text().splitlines()


def test_load_negative_score_reports_line(tiny, tmp_path):
    path = tmp_path / "t.jsonl"
    lines = _write_trace(path, tiny)
    rec = json.loads(lines[3])
    rec["scores"][0] = -rec["scores"][0]
    lines[3] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceFormatError) as exc:
        trace_mod.load(path)
    assert exc.value.line == 4


def test_load_truncated_file(tiny, tmp_path):
    path = tmp_path / "t.jsonl"
    lines = _write_trace(path, tiny)
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(TraceFormatError, match="truncated"):
        trace_mod.load(path)


def test_load_out_of_order(tiny, tmp_path):
    path = tmp_path / "t.jsonl"
    lines = _write_trace(path, tiny)
    lines[1], lines[2] = lines[2], lines[1]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceFormatError) as exc:
        trace_mod.load(path)
    assert exc.value.line == 2


def test_load_bad_sum(tiny, tmp_path):
    path = tmp_path / "t.jsonl"
    lines = _write_trace(path, tiny)
    rec = json.loads(lines[1])
    rec["scores"][0] += 0.01
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceFormatError):
        trace_mod.load(path)


# -- hotness -----------------------------------------------------------------

def test_single_token_counts(tiny):
    tr = trace_mod.generate(tiny, GenParams(prefill_tokens=1, decode_tokens=0), seed=1)
    hot = trace_mod.hotness(tr)
    for layer in range(tiny.num_layers):
        assert np.count_nonzero(hot.prefill_counts[layer]) == tiny.top_k
        assert hot.prefill_counts[layer].max() == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 40), st.integers(0, 1000))
def test_counts_conserved(tokens, seed):
    g = ModelGeometry(3, 8, 3, 64)
    tr = trace_mod.generate(g, GenParams(prefill_tokens=tokens, decode_tokens=5), seed=seed)
    hot = trace_mod.hotness(tr)
    assert np.all(hot.prefill_counts.sum(axis=1) == g.top_k * tokens)
    norm = hot.mean_norm_score()
    assert np.all((norm >= 0) & (norm <= 1 + 1e-12))


def test_uniform_scores_frequency():
    g = ModelGeometry(1, 8, 2, 64)
    rng = np.random.default_rng(0)
    T = 20000
    # tiny jitter keeps the ordering random instead of always favouring low indices
    s = np.full((T, 1, 8), 1 / 8) + rng.uniform(0, 1e-6, (T, 1, 8))
    s /= s.sum(axis=2, keepdims=True)
    tr = Trace(g, s, np.zeros((0, 1, 8)))
    freq = trace_mod.hotness(tr).prefill_counts[0] / T
    # analytic expectation 2/8 with a 4-sigma binomial band
    sigma = np.sqrt(0.25 * 0.75 / T)
    assert np.all(np.abs(freq - 0.25) <= 4 * sigma)


def test_rho_one_hotness_matches_decode_popularity(tiny):
    p = GenParams(prefill_tokens=200, decode_tokens=200, hotness_correlation=1.0, token_noise=0.3)
    hot = trace_mod.hotness(trace_mod.generate(tiny, p, seed=6))
    for layer in range(tiny.num_layers):
        assert spearman_ref(hot.prefill_counts[layer], hot.decode_counts[layer]) > 0.8
