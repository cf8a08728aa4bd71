"""Command-line entry point: ``slicesim <command> ...``."""
import argparse
import sys
import time

from . import _kernels, harness, quant
from . import trace as trace_mod
from .errors import CapacityError, ConfigError, TraceFormatError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_CAPACITY = 3


def _config_arg(path, seed=None):
    data = harness.load_config(path) if path else {}
    if seed is not None:
        data["seed"] = seed
    return data


def cmd_simulate(args):
    cfg = harness.build_config(_config_arg(args.config, args.seed))
    report = harness.run(cfg)
    text = harness.emit(report, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args):
    base = _config_arg(args.config, args.seed)
    axes = dict(harness.parse_axis(a) for a in args.axis or [])
    reports = harness.sweep(base, axes, jobs=args.jobs)
    text = harness.emit(reports, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_trace(args):
    cfg = harness.build_config(_config_arg(args.params, args.seed))
    tr = trace_mod.generate(cfg.geometry, cfg.gen_params, cfg.trace_seed)
    trace_mod.save(tr, args.out)
    print(f"wrote {tr.prefill_tokens} prefill + {tr.decode_tokens} decode tokens "
          f"x {cfg.geometry.num_layers} layers to {args.out}")
    return EXIT_OK


def cmd_print_config(args):
    sys.stdout.write(harness.default_config_text())
    return EXIT_OK


def quant_checks(b_high, b_low, n_codes=1_000_000, n_weights=100_000, seed=0):
    """Oracle checks for one MAT configuration; returns [(name, ok, detail)]."""
    import numpy as np

    rng = np.random.default_rng(seed)
    results = []
    group = 32
    n_groups = -(-n_codes // group)
    codes = rng.integers(0, 1 << b_high, n_codes, dtype=np.uint8)
    zps = rng.integers(0, 1 << b_high, n_groups, dtype=np.uint8)
    scales = rng.uniform(1e-3, 1.0, n_groups).astype(np.float32)
    qt = quant.QuantizedTensor(codes, scales, zps, quant.QuantConfig(b_high, group))

    t0 = time.perf_counter()
    merged = quant.merge_slices(quant.split_slices(qt, b_low))
    shift = b_high - b_low
    low = quant.truncate_amat(qt, b_low)
    ok = merged == qt
    ok_formula = (
        np.array_equal(low.codes, codes // (1 << shift))
        and np.array_equal(low.zero_points, zps // (1 << shift))
        and np.array_equal(low.scales, scales * np.float32(1 << shift))
    )
    dt = time.perf_counter() - t0
    results.append(("split/merge round trip", ok, f"{n_codes} codes"))
    results.append(("truncation formula", ok_formula, f"{dt:.2f}s"))

    w = rng.normal(0.3, 1.0, n_weights)
    hi = quant.quantize(w, quant.QuantConfig(b_high, group))
    m_naive = quant.mse(w, quant.dequantize(quant.truncate_naive(hi, b_low)))
    m_amat = quant.mse(w, quant.dequantize(quant.truncate_amat(hi, b_low)))
    m_base = quant.mse(w, quant.dequantize(quant.quantize(w, quant.QuantConfig(b_low, group))))
    results.append(("naive/AMAT MSE >= 10", m_naive / m_amat >= 10, f"{m_naive / m_amat:.3g}"))
    results.append(("AMAT/independent MSE <= 2", m_amat / m_base <= 2.0, f"{m_amat / m_base:.3f}"))
    return results


def cmd_quant_check(args):
    configs = list(quant.MAT_CONFIGS.values()) if args.mat.lower() == "all" else [quant.parse_mat(args.mat)]
    failed = False
    print(f"kernel backend: {_kernels.BACKEND}")
    for b_high, b_low in configs:
        for name, ok, detail in quant_checks(b_high, b_low, seed=args.seed or 0):
            failed |= not ok
            print(f"MAT{b_high}{b_low}  {'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="slicesim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("config", nargs="?", help="YAML config (defaults if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the Cartesian product of axes")
    p.add_argument("config", nargs="?")
    p.add_argument("--axis", action="append", metavar="KEY=V1,V2,...")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-trace", help="write a synthetic JSONL trace")
    p.add_argument("params", nargs="?", help="YAML config; geometry and trace sections are used")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("quant-check", help="run the quantization oracle checks")
    p.add_argument("mat", nargs="?", default="all", help="MAT42, MAT63, MAT84, 8,4 or 'all'")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_quant_check)

    p = sub.add_parser("print-config", help="dump the default config")
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
