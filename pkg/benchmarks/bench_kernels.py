"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

The end-to-end row runs a full default simulation once per backend in a
subprocess, since the backend is picked at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from slicesim import _kernels

E2E = (
    "import time; from slicesim import harness;"
    "cfg = harness.build_config({'trace': {'decode_tokens': 64}});"
    "t = time.perf_counter(); harness.run(cfg); print(time.perf_counter() - t)"
)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    w = rng.normal(0.3, 1.0, 1_000_000)
    codes = rng.integers(0, 256, 1_000_000).astype(np.uint8)
    hi, lo = codes >> 4, codes & 15
    scores = rng.dirichlet(np.full(64, 0.3), size=(2000,))
    return {
        "quantize 1e6 (8-bit)": lambda k: k.quantize_groups(w, 32, 8, True),
        "split 1e6 codes": lambda k: k.split_codes(codes, 4),
        "merge 1e6 codes": lambda k: k.merge_codes(hi, lo, 4),
        "topk per event x2000 (E=64, k=6)": lambda k: [k.topk(s, 6) for s in scores],
        "cumsum per event x2000 (p=0.9)": lambda k: [k.cumsum_prefix(s, 0.9) for s in scores],
        "topk_rows 2000x64": lambda k: k.topk_rows(scores, 6),
    }


def end_to_end(backend):
    env = dict(os.environ, SLICESIM_PURE="1" if backend == "pure" else "0")
    out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = _kernels.backends()
    names = sorted(backends)
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)

    print(f"{'case':38s}" + "".join(f"{n:>12s}" for n in names) + ("    speedup" if len(names) > 1 else ""))
    for label, fn in cases.items():
        t = {n: best_of(lambda: fn(backends[n]), args.repeat) for n in names}
        row = f"{label:38s}" + "".join(f"{t[n] * 1e3:10.2f}ms" for n in names)
        if "cython" in t:
            row += f"  {t['pure'] / t['cython']:8.2f}x"
        print(row)

    t = {n: end_to_end(n) for n in names}
    row = f"{'end-to-end run (64 decode tokens)':38s}" + "".join(f"{t[n] * 1e3:10.2f}ms" for n in names)
    if "cython" in t:
        row += f"  {t['pure'] / t['cython']:8.2f}x"
    print(row)


if __name__ == "__main__":
    main()
