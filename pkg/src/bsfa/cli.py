"""Command-line harness: gen, calibrate, verify, bench, density.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from .calibration import calibrate, load_dump, save_dump
from .core import HeadInput, masked_dense_attention, max_rel_err
from .costs import (CostConfig, attention_flops, hbm_traffic, measured_density,
                    predicted_density, table1_rows)
from .engine import GateTrace, flash_forward, pad_to_blocks
from .errors import ConfigurationError, FormatError, InvalidInputError
from .gates import (GateContext, dense_gate, frontier_only_gate, running_max_gate,
                    sliding_window_gate, threshold_gate)
from .thresholds import load_thresholds, save_thresholds
from .tiling import TileConfig, off_frontier_count
from .workloads import WorkloadSpec, gen_dump

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3

GATE_CHOICES = ("dense", "frontier", "threshold", "sliding-window", "running-max")

_REPORT_KEYS = {
    None: {"schema", "config", "timing", "cost", "density", "verify"},
    "config": {"n", "d", "layers", "heads", "bm", "bn", "gate", "params"},
    "timing": {"mean_ms", "std_ms", "repeats"},
    "cost": {"qk_flops", "pv_flops", "softmax_ops", "v_traffic", "k_traffic",
             "gate_overhead_ops"},
    "density": {"predicted", "measured_mean", "measured_std"},
    "verify": {"max_rel_err", "rtol", "pass"},
}


def load_report(path) -> dict:
    """Read a run report, rejecting unknown fields at every level."""
    with open(path, "r", encoding="utf-8") as f:
        report = json.load(f)
    if report.get("schema") != 1:
        raise FormatError(f"{path}: unsupported report schema {report.get('schema')!r}")
    for section, keys in _REPORT_KEYS.items():
        obj = report if section is None else report.get(section)
        if obj is None:
            continue
        extra = set(obj) - keys - ({"timestamp"} if section is None else set())
        if extra:
            raise FormatError(f"{path}: unknown report fields {sorted(extra)}")
    return report


def _write_report(path, config, timing, cost, density, verify) -> None:
    report = {
        "schema": 1,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": config,
        "timing": timing,
        "cost": cost,
        "density": density,
        "verify": verify,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")


def save_traces(path, traces_by_sample, tiles: TileConfig, causal: bool) -> None:
    arrays = {"meta": np.frombuffer(json.dumps(
        {"bm": tiles.b_m, "bn": tiles.b_n, "causal": causal,
         "samples": len(traces_by_sample)}).encode(), dtype=np.uint8)}
    for si, traces in enumerate(traces_by_sample):
        for t in traces:
            arrays[f"s{si}_l{t.layer}_h{t.head}"] = t.decisions
    np.savez(path, **arrays)


def load_traces(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]))
        tiles = TileConfig(meta["bm"], meta["bn"])
        by_sample = [[] for _ in range(meta["samples"])]
        for name in data.files:
            if name == "meta":
                continue
            si, l, h = (int(part[1:]) for part in name.split("_"))
            by_sample[si].append(GateTrace(decisions=data[name], tiles=tiles,
                                           causal=meta["causal"], layer=l, head=h))
    return by_sample


def _parse_k_list(text):
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError:
        raise ConfigurationError(f"bad sparsity-level list {text!r}") from None


def _build_gate(args, tiles):
    """Gate instance plus its parameter echo for reports."""
    if args.gate == "dense":
        return dense_gate(), {}
    if args.gate == "frontier":
        return frontier_only_gate(), {}
    if args.gate == "sliding-window":
        if args.window is None:
            raise ConfigurationError("sliding-window gate needs --window")
        return sliding_window_gate(args.window), {"window": args.window}
    if args.gate == "running-max":
        if args.lam is None:
            raise ConfigurationError("running-max gate needs --lambda")
        return running_max_gate(args.lam), {"lambda": args.lam}
    if args.gate == "threshold":
        if not args.thresholds:
            raise ConfigurationError("threshold gate needs --thresholds FILE")
        if args.k is None:
            raise ConfigurationError("threshold gate needs --k")
        tensor = load_thresholds(args.thresholds)
        return threshold_gate(tensor), {"thresholds": args.thresholds, "k": args.k}
    raise ConfigurationError(f"unknown gate {args.gate!r}")


def _run_dump(dump, tiles, gate, k_level, threads, inject_fault=False):
    """flash_forward over every (sample, layer, head); yields run records."""
    for sample in sorted(dump.samples, key=lambda s: s.sample_id):
        if sample.v is None:
            raise ConfigurationError(
                f"sample {sample.sample_id} has no V tensor; regenerate with values"
            )
        for l in range(dump.num_layers):
            for h in range(dump.num_heads):
                inp = HeadInput(sample.q[l, h], sample.k[l, h], sample.v[l, h])
                ctx = GateContext(layer=l, head=h, k_level=k_level)
                out, trace = flash_forward(inp, tiles, gate, ctx, threads=threads,
                                           inject_fault=inject_fault)
                yield sample, l, h, inp, out, trace


# --- subcommands ------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = WorkloadSpec(
        kind=args.kind, n=args.n, d=args.d, layers=args.layers, heads=args.heads,
        seed=args.seed, needle_position=args.needle_pos,
        needle_strength=args.strength, sink_width=args.sink_width,
        window_width=args.window_width, heavy_hitter_count=args.heavy_hitters,
    )
    tiles = TileConfig(args.bm, args.bn)
    dump = gen_dump(spec, tiles, num_samples=args.samples,
                    sample_offset=args.sample_offset, include_v=not args.no_v)
    manifest = save_dump(dump, args.out)
    print(manifest)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    tiles = TileConfig(args.bm, args.bn)
    dump = load_dump(args.data)
    k_levels = _parse_k_list(args.k)
    tensor = calibrate(dump, k_levels, tiles)
    save_thresholds(tensor, args.out)
    diag = tensor.diagnostics
    print(f"calibrated {tensor.num_levels} levels on {diag.num_samples} samples "
          f"(L={tensor.num_layers}, H={tensor.num_heads}, P={tensor.num_positions})")
    for k in tensor.k_levels:
        lo, mean, hi = diag.threshold_stats[k]
        if lo is None:
            print(f"  k={k}: no finite thresholds, ties={diag.tie_counts[k]}")
        else:
            print(f"  k={k}: min={lo:.4f} mean={mean:.4f} max={hi:.4f} "
                  f"ties={diag.tie_counts[k]}")
    print(args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    tiles = TileConfig(args.bm, args.bn)
    gate, params = _build_gate(args, tiles)
    dump = load_dump(args.data)
    worst = 0.0
    traces_by_sample = []
    current = None
    for sample, l, h, inp, out, trace in _run_dump(
            dump, tiles, gate, args.k, args.threads, inject_fault=args.inject_fault):
        padded, valid = pad_to_blocks(inp, tiles)
        oracle = masked_dense_attention(padded, trace.to_mask(), tiles)
        err = max_rel_err(out.o, oracle.o[:valid])
        worst = max(worst, err)
        if current is None or current[0] is not sample:
            current = (sample, [])
            traces_by_sample.append(current[1])
        current[1].append(trace)
        if args.table and args.gate == "threshold":
            retained = trace.retained_off_frontier()
            print(f"sample {sample.sample_id} layer {l} head {h} retained "
                  "(position: kept/target):")
            for p in range(len(retained)):
                target = min(args.k, off_frontier_count(p, tiles))
                print(f"  {p:4d}: {int(retained[p])}/{target}")
    ok = worst <= args.rtol
    print(f"max relative error {worst:.3e} vs rtol {args.rtol:.1e}: "
          f"{'PASS' if ok else 'FAIL'}")
    if args.trace_out:
        save_traces(args.trace_out, traces_by_sample, tiles, causal=True)
    if args.json:
        mean, std = measured_density(traces_by_sample)
        pred = predicted_density(dump.samples[0].seq_len, tiles, args.k) \
            if args.gate == "threshold" else None
        cfg = CostConfig(n=dump.samples[0].seq_len, d=dump.head_dim,
                         h=dump.num_layers * dump.num_heads, tiles=tiles)
        _write_json_report(args, dump, tiles, params, None, mean, std, pred, cfg,
                           verify={"max_rel_err": worst, "rtol": args.rtol, "pass": ok})
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


def _write_json_report(args, dump, tiles, params, timing, mean, std, pred, cfg,
                       verify=None):
    rep = attention_flops(cfg, mean if mean is not None else 1.0)
    k_traf, v_traf = hbm_traffic(cfg, mean if mean is not None else 1.0)
    _write_report(
        args.json,
        config={"n": dump.samples[0].seq_len, "d": dump.head_dim,
                "layers": dump.num_layers, "heads": dump.num_heads,
                "bm": tiles.b_m, "bn": tiles.b_n, "gate": args.gate,
                "params": params},
        timing=timing or {"mean_ms": None, "std_ms": None, "repeats": 0},
        cost={"qk_flops": rep.qk_flops, "pv_flops": rep.pv_flops,
              "softmax_ops": rep.softmax_ops, "v_traffic": v_traf,
              "k_traffic": k_traf, "gate_overhead_ops": rep.gate_overhead_ops},
        density={"predicted": pred, "measured_mean": mean, "measured_std": std},
        verify=verify or {"max_rel_err": None, "rtol": None, "pass": None},
    )


def cmd_bench(args) -> int:
    tiles = TileConfig(args.bm, args.bn)
    gate, params = _build_gate(args, tiles)
    dump = load_dump(args.data)

    def one_pass(g, k_level):
        by_sample, current = [], None
        for sample, _, _, _, _, trace in _run_dump(dump, tiles, g, k_level, args.threads):
            if current is None or current[0] is not sample:
                current = (sample, [])
                by_sample.append(current[1])
            current[1].append(trace)
        return by_sample

    for _ in range(args.warmup):
        one_pass(gate, args.k)
    times = []
    traces = None
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        traces = one_pass(gate, args.k)
        times.append((time.perf_counter() - t0) * 1e3)
    dense_times = []
    for _ in range(max(1, args.warmup)):
        one_pass(dense_gate(), None)
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        one_pass(dense_gate(), None)
        dense_times.append((time.perf_counter() - t0) * 1e3)

    mean_ms = float(np.mean(times))
    std_ms = float(np.std(times))
    dense_ms = float(np.mean(dense_times))
    dmean, dstd = measured_density(traces)
    pred = predicted_density(dump.samples[0].seq_len, tiles, args.k) \
        if args.gate == "threshold" else None
    print(f"engine wall time {mean_ms:.2f} +/- {std_ms:.2f} ms over {args.repeat} runs "
          f"(CPU engine; not a GPU prefill time)")
    print(f"speedup vs dense gate: {dense_ms / mean_ms:.2f}x")
    print(f"measured density {dmean:.4f} +/- {dstd:.4f}"
          + (f", predicted {pred:.4f}" if pred is not None else ""))
    if args.json:
        cfg = CostConfig(n=dump.samples[0].seq_len, d=dump.head_dim,
                         h=dump.num_layers * dump.num_heads, tiles=tiles)
        _write_json_report(args, dump, tiles, params,
                           {"mean_ms": mean_ms, "std_ms": std_ms,
                            "repeats": args.repeat},
                           dmean, dstd, pred, cfg)
    return EXIT_OK


def cmd_density(args) -> int:
    tiles = TileConfig(args.bm, args.bn)
    if args.table1:
        print(f"{'n':>8} {'k':>6} {'reference':>10} {'computed':>10}")
        for n, k, ref, computed in table1_rows(tiles):
            print(f"{n:>8} {k:>6} {ref:>10.2f} {computed:>10.4f}")
        return EXIT_OK
    if args.trace:
        mean, std = measured_density(load_traces(args.trace))
        print(f"measured density {mean:.4f} +/- {std:.4f}")
        return EXIT_OK
    if args.n is None or args.k is None:
        raise ConfigurationError("density needs --table1, --trace FILE, or --n and --k")
    print(f"{predicted_density(args.n, tiles, args.k):.4f}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--bm", type=int, default=128, help="query block size")
    common.add_argument("--bn", type=int, default=64, help="kv block size")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="query-block worker threads (1 = bitwise-deterministic baseline)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", metavar="OUT", help="write a JSON run report")

    gate_args = argparse.ArgumentParser(add_help=False)
    gate_args.add_argument("--gate", choices=GATE_CHOICES, default="dense")
    gate_args.add_argument("--thresholds", help="threshold tensor file")
    gate_args.add_argument("--k", type=int, help="sparsity level for the threshold gate")
    gate_args.add_argument("--window", type=int, help="sliding-window size in tokens")
    gate_args.add_argument("--lambda", dest="lam", type=float,
                           help="running-max skip offset (no default; calibrate per use)")

    p = argparse.ArgumentParser(prog="bsfa",
                                description="block-sparse streaming attention harness")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate synthetic workloads")
    g.add_argument("--kind", choices=["random", "needle", "structured", "model-dump"],
                   default="random")
    g.add_argument("--n", type=int, default=1024)
    g.add_argument("--d", type=int, default=64)
    g.add_argument("--layers", type=int, default=1)
    g.add_argument("--heads", type=int, default=1)
    g.add_argument("--samples", type=int, default=1)
    g.add_argument("--sample-offset", type=int, default=0)
    g.add_argument("--needle-pos", type=int, default=0)
    g.add_argument("--strength", type=float, default=10.0)
    g.add_argument("--sink-width", type=int, default=0)
    g.add_argument("--window-width", type=int, default=0)
    g.add_argument("--heavy-hitters", type=int, default=0)
    g.add_argument("--no-v", action="store_true", help="omit value tensors")
    g.add_argument("--out", required=True, help="output dump directory")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("calibrate", parents=[common], help="fit gate thresholds")
    c.add_argument("--data", required=True, help="calibration dump directory")
    c.add_argument("--k", required=True, help="comma-separated sparsity levels")
    c.add_argument("--out", required=True, help="output threshold file")
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("verify", parents=[common, gate_args],
                       help="check the engine against the masked dense oracle")
    v.add_argument("--data", required=True)
    v.add_argument("--rtol", type=float, default=1e-4)
    v.add_argument("--trace-out", help="write gate traces (npz)")
    v.add_argument("--table", action="store_true",
                   help="print retained-block counts per position (threshold gate)")
    v.add_argument("--inject-fault", action="store_true",
                   help="perturb one accumulator (self-test of the verifier)")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", parents=[common, gate_args],
                       help="time the engine and report costs")
    b.add_argument("--data", required=True)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--repeat", type=int, default=10)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("density", parents=[common],
                       help="predicted or measured retained-block density")
    d.add_argument("--n", type=int)
    d.add_argument("--k", type=int)
    d.add_argument("--trace", help="measured density from a trace file")
    d.add_argument("--table1", action="store_true",
                   help="print all published reference configurations")
    d.set_defaults(func=cmd_density)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
