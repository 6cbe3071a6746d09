"""
Command-line front door
Subcommands: sim, bench, fuse, smooth, mask, quant.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from . import __version__
from .attention_masks import build_mask, mask_summary
from .chunk_schedule import ExecutionState, plan_fusion, steps_of_delay
from .config import LOG_LEVEL, PRESETS_DIR, dump_config, load_config
from .errors import InputValidationError, WamRuntimeError, WorkerError
from .quant_emulation import QuantLinear, decode_e4m3, dequantize, from_blob, make_linear, to_blob
from .records import mask_to_bitmap, read_chunk, read_mask, write_chunk, write_mask
from .report import export_report_xlsx, format_report, table3_report, write_report_csv
from .schemas import MaskKind, SimMode, TokenLayout
from .signal_pipeline import render_chunk
from .simulator import run_discrete_event, run_real_time
from .toy_world_model import load_latency_presets
from .trace import read_trace, replay_delays, write_metrics_csv, write_trace

logger = logging.getLogger(__name__)

RULE = "=" * 60

MASK_LAYOUTS = {
    "small": TokenLayout(n_text=2, n_cond=1, frames_K=2, views_V=1, grid_h=1, grid_w=2,
                         actions_per_frame_Sa=2, chunking=[0, 1, 2]),
    "default": TokenLayout(n_text=4, n_cond=2, frames_K=4, views_V=2, grid_h=2, grid_w=2,
                           f_va=2, tau=2, chunking=[0, 2, 4]),
}


def configure_logging(level: str = LOG_LEVEL):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _banner(title: str):
    print("\n" + RULE)
    print(title)
    print(RULE)


# sim
def _sim_config(args):
    cfg = load_config(args.config)
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.mode is not None:
        update["mode"] = SimMode(args.mode)
    if args.duration is not None:
        update["duration"] = args.duration
    if args.no_fusion:
        update["fusion"] = cfg.fusion.model_copy(update={"enabled": False})
    if not update:
        return cfg
    return type(cfg).model_validate({**cfg.model_dump(), **update})


def cmd_sim(args) -> int:
    cfg = _sim_config(args)
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return 0

    if args.replay:
        delays = replay_delays(read_trace(args.replay))
        result = run_discrete_event(cfg, delays=delays)
    elif cfg.mode == SimMode.REAL_TIME:
        result = run_real_time(cfg)
    else:
        result = run_discrete_event(cfg)

    if args.trace:
        write_trace(result.trace, args.trace)
    if args.metrics:
        write_metrics_csv(result.metrics, args.metrics)

    _banner(f"Simulation ({cfg.mode.value}, seed {cfg.seed})")
    for name, value in result.metrics.model_dump().items():
        print(f"  {name}: {value:.6g}")
    if args.trace:
        print(f"✓ Trace written: {args.trace}")
    if args.metrics:
        print(f"✓ Metrics written: {args.metrics}")

    if result.error is not None:
        raise WorkerError(f"inference worker failed: {result.error}")
    return 0


# bench
def cmd_bench(args) -> int:
    presets_path = PRESETS_DIR / f"{args.presets}.ini" if args.presets == "table3" else Path(args.presets)
    report = table3_report(load_latency_presets(presets_path))

    _banner("Cumulative inference optimizations")
    print(format_report(report))
    if args.csv:
        write_report_csv(report, args.csv)
        print(f"✓ CSV written: {args.csv}")
    if args.xlsx:
        export_report_xlsx(report, args.xlsx)
        print(f"✓ Report generated: {args.xlsx}")
    return 0


# fuse / smooth
def cmd_fuse(args) -> int:
    cfg = load_config(args.config)
    old = read_chunk(args.old)
    fresh = read_chunk(args.fresh)
    d = steps_of_delay(args.delay, cfg.fusion_period)
    plan = plan_fusion(ExecutionState(old, args.executed), fresh, d, cfg.fusion)

    _banner("Chunk fusion")
    print(f"  s={plan.s} d={plan.d} L={plan.L} overlap={plan.overlap}")
    print("  weights: " + " ".join(f"{w:.4f}" for w in plan.weights))
    if args.out:
        write_chunk(plan.chunk, args.out)
        print(f"✓ Fused chunk written: {args.out}")
    return 0


def cmd_smooth(args) -> int:
    cfg = load_config(args.config)
    chunk = read_chunk(args.chunk)
    control_hz = args.control_hz if args.control_hz is not None else cfg.control_hz
    result = render_chunk(chunk, cfg.smoothing, control_hz)

    _banner("Chunk smoothing")
    print(f"  {chunk.horizon} actions @ {chunk.model_hz:g} Hz -> {result.chunk.horizon} @ {control_hz:g} Hz")
    if result.skipped:
        print("⚠ Chunk too short for the filter window; smoothing skipped")
    if args.out:
        write_chunk(result.chunk, args.out)
        print(f"✓ Chunk written: {args.out}")
    return 0


# mask
def cmd_mask(args) -> int:
    layout = MASK_LAYOUTS[args.layout]
    mask = build_mask(MaskKind(args.kind), layout)

    if args.export:
        write_mask(mask, args.export)
    if args.check:
        expected = read_mask(args.check)
        if expected.allowed.shape != mask.allowed.shape or not np.array_equal(expected.allowed, mask.allowed):
            raise InputValidationError(f"mask does not match {args.check}")

    _banner(f"Attention mask: {args.kind} / {args.layout} layout")
    print(f"  tokens: {mask.size}, density: {mask.density():.4f}")
    if args.summary:
        print(mask_summary(mask, layout).to_string())
    if args.show:
        sys.stdout.write(mask_to_bitmap(mask))
    if args.export:
        print(f"✓ Bitmap written: {args.export}")
    if args.check:
        print(f"✓ Matches {args.check}")
    return 0


# quant
def _load_weights(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, dtype=np.float64, ndmin=2)


def cmd_quant(args) -> int:
    if args.inspect:
        layer = from_blob(Path(args.inspect).read_bytes())
        _banner(f"FP8 blob: {args.inspect}")
        print(f"  shape: ({layer.in_dim}, {layer.out_dim}), scale: {layer.scale:.17g}")
        values = decode_e4m3(layer.q_weights)
        print(f"  codes used: {len(np.unique(layer.q_weights))}, max |w/scale|: {np.max(np.abs(values)):g}")
        return 0

    w = _load_weights(Path(args.weights))
    layer = make_linear(w)
    _banner(f"Quantize: {args.weights}")
    if not isinstance(layer, QuantLinear):
        print(f"⚠ Shape {w.shape} not divisible by 16; layer stays full precision")
        return 0

    error = np.linalg.norm(dequantize(layer) - w) / max(np.linalg.norm(w), np.finfo(float).tiny)
    print(f"  scale: {layer.scale:.6g}, relative weight error: {error:.4g}")
    if args.out:
        Path(args.out).write_bytes(to_blob(layer))
        print(f"✓ Blob written: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wam-runtime", description="World-action model inference runtime")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="Run the closed-loop simulator")
    sim.add_argument("--config", help="Config file (default: $WAM_CONFIG or bundled defaults)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--mode", choices=[m.value for m in SimMode])
    sim.add_argument("--duration", type=float)
    sim.add_argument("--no-fusion", action="store_true", help="Swap in fresh chunks without blending")
    sim.add_argument("--trace", help="Write the event trace here")
    sim.add_argument("--metrics", help="Write metrics CSV here")
    sim.add_argument("--replay", help="Replay measured delays from a trace in discrete-event mode")
    sim.add_argument("--print-config", action="store_true", help="Print the resolved config and exit")
    sim.set_defaults(handler=cmd_sim)

    bench = sub.add_parser("bench", help="Latency accounting of the inference optimizations")
    bench.add_argument("--presets", default="table3", help="'table3' or a preset file")
    bench.add_argument("--csv")
    bench.add_argument("--xlsx")
    bench.set_defaults(handler=cmd_bench)

    fuse = sub.add_parser("fuse", help="Fuse a fresh chunk into the remainder of an old one")
    fuse.add_argument("--old", required=True)
    fuse.add_argument("--fresh", required=True)
    fuse.add_argument("--executed", type=int, required=True, help="Actions of the old chunk already executed")
    fuse.add_argument("--delay", type=float, required=True, help="Inference delay in seconds")
    fuse.add_argument("--config")
    fuse.add_argument("--out")
    fuse.set_defaults(handler=cmd_fuse)

    smooth = sub.add_parser("smooth", help="Smooth and interpolate a chunk to control rate")
    smooth.add_argument("--chunk", required=True)
    smooth.add_argument("--control-hz", type=float)
    smooth.add_argument("--config")
    smooth.add_argument("--out")
    smooth.set_defaults(handler=cmd_smooth)

    mask = sub.add_parser("mask", help="Build, inspect and export attention masks")
    mask.add_argument("--kind", required=True, choices=[k.value for k in MaskKind])
    mask.add_argument("--layout", default="small", choices=sorted(MASK_LAYOUTS))
    mask.add_argument("--export")
    mask.add_argument("--check", help="Compare against a bitmap file")
    mask.add_argument("--summary", action="store_true")
    mask.add_argument("--show", action="store_true")
    mask.set_defaults(handler=cmd_mask)

    quant = sub.add_parser("quant", help="Quantize or inspect an FP8 weight blob")
    group = quant.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights", help=".npy or whitespace text matrix")
    group.add_argument("--inspect", help="Blob file to inspect")
    quant.add_argument("--out")
    quant.set_defaults(handler=cmd_quant)
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (WamRuntimeError, ValidationError, OSError) as e:
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
