import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slicesim import trace as trace_mod  # noqa: E402

TINY = trace_mod.GEOMETRY_PRESETS["tiny"]


@pytest.fixture
def tiny():
    return TINY


@pytest.fixture
def tiny_trace():
    params = trace_mod.GenParams(prefill_tokens=32, decode_tokens=24)
    return trace_mod.generate(TINY, params, seed=3)


def tiny_config(**over):
    """Harness config on the tiny geometry with a short trace."""
    cfg = {
        "geometry": {"preset": "tiny"},
        # room for six whole tiny experts (35840 bits each)
        "capacity_gb": 6 * 35840 / 8e9,
        "trace": {"prefill_tokens": 32, "decode_tokens": 24},
        "quality": {"samples": 4096},
    }
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    return cfg


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
