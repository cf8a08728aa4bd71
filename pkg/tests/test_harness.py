import csv
import io
import json

import pytest

from conftest import tiny_config
from oracles import lru_reference_run
from slicesim import harness
from slicesim.errors import CapacityError, ConfigError


def run(**over):
    return harness.run(harness.build_config(tiny_config(**over)))


def test_same_config_byte_identical():
    assert run(seed=4).to_json() == run(seed=4).to_json()
    assert run(seed=4).to_json() != run(seed=5).to_json()


def test_json_round_trip(tmp_path):
    rep = run(mode="dbsc_pcw")
    again = harness.RunReport.from_json(rep.to_json())
    assert again == rep
    assert again.to_json() == rep.to_json()
    path = tmp_path / "r.json"
    harness.emit(rep, "json", path)
    assert harness.load_reports(path) == rep


def test_report_rejects_missing_keys():
    with pytest.raises(ConfigError, match="missing"):
        harness.RunReport.from_dict({"schema_version": 1})
    data = run().to_dict()
    data["schema_version"] = 99
    with pytest.raises(ConfigError, match="schema_version"):
        harness.RunReport.from_dict(data)


def test_miss_rate_consistent_with_counters():
    r = run(constraint={"tau": 0.3, "warmup_steps": 2})
    assert r["normalized_miss_rate"] == pytest.approx(r["miss_bits"] / r["full_bits"], rel=1e-12)


def test_csv_parses():
    reps = [run(seed=s) for s in range(3)]
    text = harness.to_csv(reps)
    rows = list(csv.DictReader(io.StringIO(text, newline="")))
    assert len(rows) == 3
    assert rows[1]["seed"] == "1"
    assert float(rows[0]["decode.flash_bits"]) == reps[0]["decode"]["flash_bits"]
    assert json.loads(rows[0]["routing.critical_histogram"]) == reps[0]["routing"]["critical_histogram"]


def test_sweep_cartesian_and_parallel():
    base = tiny_config()
    axes = {"constraint.tau": [1.0, 0.2], "mode": ["dbsc", "amat_only"]}
    serial = harness.sweep(base, axes, jobs=1)
    assert len(serial) == 4
    assert [r["mode"] for r in serial] == ["dbsc", "amat_only", "dbsc", "amat_only"]
    parallel = harness.sweep(base, axes, jobs=2)
    assert [r.to_json() for r in parallel] == [r.to_json() for r in serial]


def test_sweep_validates_before_running():
    with pytest.raises(ConfigError, match="constraint.tau"):
        harness.sweep(tiny_config(), {"constraint.tau": [0.5, 2.0]})


def test_parse_axis():
    assert harness.parse_axis("constraint.tau=0.05,0.1") == ("constraint.tau", [0.05, 0.1])
    assert harness.parse_axis("mode=dbsc") == ("mode", ["dbsc"])
    with pytest.raises(ConfigError):
        harness.parse_axis("mode")


@pytest.mark.parametrize("over,field", [
    ({"mode": "fastest"}, "mode"),
    ({"constraint": {"tau": -0.1}}, "constraint.tau"),
    ({"policy": {"kind": "psychic"}}, "policy.kind"),
    ({"geometry": {"experts": "many"}}, "geometry.experts"),
    ({"capacity_gb": 1e-9}, "capacity_gb"),
    ({"trace": {"hotness_correlation": 2}}, "trace.hotness_correlation"),
    ({"bogus": 1}, "bogus"),
    ({"mat": "MAT48"}, "b_low"),
])
def test_config_errors_name_field(over, field):
    with pytest.raises(ConfigError) as exc:
        harness.build_config(tiny_config(**over))
    assert exc.value.field == field


def test_yaml_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("mode: amat_only\nconstraint:\n  tau: 0.5\n")
    cfg = harness.build_config(harness.load_config(path))
    assert cfg.mode == "amat_only" and cfg.tau == 0.5
    path.write_text("- a list\n")
    with pytest.raises(ConfigError):
        harness.load_config(path)


def test_default_config_text_round_trips():
    import yaml

    assert yaml.safe_load(harness.default_config_text()) == harness.DEFAULT_CONFIG


def test_trace_file_geometry_mismatch(tmp_path, tiny_trace):
    from slicesim import trace as trace_mod

    path = tmp_path / "t.jsonl"
    trace_mod.save(tiny_trace, path)
    r = run(trace={"path": str(path)})
    assert r["decode"]["steps"] == tiny_trace.decode_tokens
    with pytest.raises(ConfigError, match="trace.path"):
        harness.run(harness.build_config(tiny_config(geometry={"preset": "tiny", "experts": 6},
                                                     trace={"path": str(path)})))


def test_degenerate_slices_match_whole_expert():
    for policy in ("topk", "cache_prior"):
        a = run(mode="dbsc", mat="8,8", policy={"kind": policy})
        b = run(mode="high_bit_baseline", policy={"kind": policy})
        assert a["cache"] == b["cache"]
        assert a["decode"] == b["decode"]


def test_whole_expert_matches_plain_lru(tiny_trace):
    cfg = harness.build_config(tiny_config(mode="high_bit_baseline", policy={"kind": "topk"}))
    rep = harness.run(cfg, trace=tiny_trace)
    slots = cfg.capacity_bits // cfg.slice_table().high_bits
    hits, misses = lru_reference_run(tiny_trace.decode_scores, cfg.geometry.top_k, slots)
    assert (rep["cache"]["msb"]["hits"], rep["cache"]["msb"]["misses"]) == (hits, misses)


def test_access_log_hits_first():
    cfg = harness.build_config(tiny_config())
    log = []
    harness.run(cfg, access_log=log)
    assert len(log) == 24 * cfg.geometry.num_layers
    t, layer, demand, execs = log[0]
    assert (t, layer) == (0, 0) and [e.expert for e in execs] == demand.experts


def test_mode_lattice():
    base = {"capacity_gb": 1.8, "seed": 3, "trace": {"decode_tokens": 64}}
    tr = harness.load_trace_for(harness.build_config(base))
    reps = {m: harness.run(harness.build_config({**base, "mode": m}), trace=tr) for m in harness.MODES}
    q = {m: r["quality_mse"] for m, r in reps.items()}
    f = {m: r["decode"]["flash_bits"] for m, r in reps.items()}
    assert q["high_bit_baseline"] <= q["dbsc"] <= q["low_bit_uniform"]
    assert f["low_bit_uniform"] <= f["dbsc"] <= f["high_bit_baseline"]


def test_pinned_overflow_is_capacity_error():
    # cumsum on flat scores can select more experts than the cache holds
    over = dict(policy={"kind": "cumsum", "mass_threshold": 1.0},
                capacity_gb=2 * 35840 / 8e9, mode="high_bit_baseline")
    with pytest.raises(CapacityError):
        run(**over)


def test_flatten():
    assert harness.flatten({"a": {"b": 1, "c": [1, 2]}, "d": None}) == {"a.b": 1, "a.c": "[1, 2]", "d": None}
