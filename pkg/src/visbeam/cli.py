"""Command-line entry point: ``visbeam <subcommand> [options]``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime
failure, 4 file I/O problem.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .beamformer import FrameSpec, process_offline
from .config import ConfigError, ScenarioConfig, load_scenario, shipped_scenario
from .experiments import (
    EXPERIMENTS,
    atomic_path,
    prepare_detections,
    prepare_scene,
    run_experiment,
    run_pipeline,
    write_json,
    write_mono_wav,
)
from .geometry import DoaAngles, MicArray, PropagationConfig, beampattern_grid, reference_array
from .pipeline import BROADSIDE, FAST, REALTIME, PipelineAborted
from .wavio import WavFormatError, read_wav, write_wav

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("visbeam")


class UsageError(ValueError):
    """Bad command-line arguments detected after parsing."""


def _global_options(defaults: bool) -> argparse.ArgumentParser:
    # Shared by the main parser and every subparser so global flags work on
    # either side of the subcommand; only the top-level copy carries defaults.
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=d(None), help="scenario YAML file")
    g.add_argument("--seed", type=int, default=d(None), help="override the scenario seed")
    g.add_argument("--out-dir", type=Path, default=d(None), help="output directory (overrides output_dir)")
    g.add_argument("--frame-length", type=int, default=d(None), help="analysis frame length N")
    g.add_argument("--hop", type=int, default=d(None), help="hop H (must be N/2)")
    g.add_argument("--mode", choices=(FAST, REALTIME), default=d(None), help="pipeline pacing")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visbeam",
        description="Vision-steered delay-and-sum beamforming: simulation, processing and evaluation.",
        parents=[_global_options(True)],
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _global_options(False)

    s = sub.add_parser("synthesize", parents=[common], help="render a scenario to a multichannel WAV")
    s.add_argument("output", nargs="?", type=Path, help="output WAV (default: <out-dir>/scene.wav)")
    s.add_argument("--encoding", choices=("float32", "int16"), default="float32")

    b = sub.add_parser("beamform", parents=[common], help="beamform a multichannel WAV offline")
    b.add_argument("input", type=Path)
    b.add_argument("output", nargs="?", type=Path, help="output WAV (default: <out-dir>/beamformed.wav)")
    steer = b.add_mutually_exclusive_group()
    steer.add_argument("--doa", nargs=2, type=float, metavar=("THETA", "PHI"),
                       help="static look direction in radians (default: broadside)")
    steer.add_argument("--schedule", type=Path,
                       help="CSV of t_s, theta_rad, phi_rad (a pipeline steering log also works)")

    bp = sub.add_parser("beampattern", parents=[common], help="sweep |B| over a direction grid")
    bp.add_argument("--look", nargs=2, type=float, metavar=("THETA", "PHI"), default=(0.0, math.pi),
                    help="look direction in radians (default: broadside)")
    bp.add_argument("--freq", type=float, action="append",
                    help="frequency in Hz; repeat for several (default 2000)")
    bp.add_argument("--grid", default="360x1", help="NPHIxNTHETA (default 360x1)")
    bp.add_argument("output", nargs="?", type=Path, help="output CSV (default: <out-dir>/beampattern.csv)")

    sub.add_parser("pipeline", parents=[common], help="run the threaded vision-steered pipeline")

    e = sub.add_parser("experiment", parents=[common], help="run an SIR experiment")
    e.add_argument("name", choices=EXPERIMENTS)

    bench = sub.add_parser("bench", parents=[common], help="latency benchmark of the paced pipeline")
    bench.add_argument("--duration", type=float, help="seconds of looped audio (default: config or 60)")
    return parser


# --- helpers -----------------------------------------------------------------


def _load(args: argparse.Namespace, default: str | None = None) -> ScenarioConfig:
    path = args.config
    if path is None:
        if default is None:
            raise UsageError(f"{args.command}: --config is required")
        path = shipped_scenario(default)
    cfg = load_scenario(path, seed=args.seed)
    overrides = {}
    if args.frame_length is not None or args.hop is not None:
        n = args.frame_length or cfg.frame.frame_length
        h = args.hop if args.hop is not None else n // 2
        if n < 2 or n % 2 or h != n // 2:
            raise UsageError(f"--hop must equal --frame-length / 2 (got N={n}, H={h})")
        overrides.update(frame_length=n, hop=h)
    if args.mode is not None:
        overrides["mode"] = args.mode
    return cfg.with_overrides(**overrides) if overrides else cfg


def _out_dir(args: argparse.Namespace, cfg: ScenarioConfig | None) -> Path:
    out = args.out_dir or Path(cfg.output_dir if cfg else "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _frame(args: argparse.Namespace, cfg: ScenarioConfig | None) -> FrameSpec:
    if cfg is not None:
        return cfg.frame
    n = args.frame_length or 256
    h = args.hop if args.hop is not None else n // 2
    if n < 2 or n % 2 or h != n // 2:
        raise UsageError(f"--hop must equal --frame-length / 2 (got N={n}, H={h})")
    return FrameSpec(n, h)


def read_schedule(path: Path) -> list[tuple[float, DoaAngles]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        time_col = "t_s" if "t_s" in cols else "chunk_midpoint_s"
        if not {time_col, "theta_rad", "phi_rad"} <= cols:
            raise UsageError(f"{path}: schedule needs columns t_s (or chunk_midpoint_s), theta_rad, phi_rad")
        rows = []
        for i, row in enumerate(reader, start=2):
            try:
                rows.append((float(row[time_col]), DoaAngles(float(row["theta_rad"]), float(row["phi_rad"]))))
            except ValueError as exc:
                raise UsageError(f"{path}:{i}: {exc}") from None
    return rows


def _latency_table(stats: dict[str, dict[str, float]]) -> str:
    lines = [f"{'stage':<16} {'mean ms':>9} {'std ms':>9} {'p95 ms':>9} {'count':>7}"]
    for stage in ("audio_e2e", "beamforming", "vision_e2e", "doa_estimation"):
        if stage in stats:
            s = stats[stage]
            lines.append(f"{stage:<16} {s['mean_ms']:9.3f} {s['std_ms']:9.3f} {s['p95_ms']:9.3f} {int(s['count']):7d}")
    return "\n".join(lines)


# --- subcommands -------------------------------------------------------------


def cmd_synthesize(args: argparse.Namespace) -> int:
    cfg = _load(args)
    signal = prepare_scene(cfg)
    out = args.output or _out_dir(args, cfg) / "scene.wav"
    write_wav(signal, out, encoding=args.encoding)
    print(f"wrote {out}: {signal.num_channels} channels, {signal.duration:.3f} s at {signal.sample_rate:g} Hz")
    return EXIT_OK


def cmd_beamform(args: argparse.Namespace) -> int:
    cfg = _load(args) if args.config else None
    signal = read_wav(args.input)
    if cfg is not None:
        array, prop = cfg.array, cfg.prop
        if signal.num_channels != array.count:
            raise UsageError(f"{args.input}: {signal.num_channels} channels but the configured array has "
                             f"{array.count} microphones")
        if signal.sample_rate != prop.sample_rate:
            raise UsageError(f"{args.input}: sample rate {signal.sample_rate:g} Hz, config says "
                             f"{prop.sample_rate:g} Hz")
    else:
        array = reference_array() if signal.num_channels == 13 else None
        prop = PropagationConfig(sample_rate=signal.sample_rate)
        if array is None and signal.num_channels == 1:
            array = MicArray(np.zeros((1, 3)))
    if args.schedule:
        schedule = read_schedule(args.schedule)
    else:
        schedule = [(-math.inf, DoaAngles(*args.doa) if args.doa else BROADSIDE)]
    if array is None and any(doa != BROADSIDE for _, doa in schedule):
        raise UsageError(f"{args.input}: steering a {signal.num_channels}-channel file needs --config")
    output = process_offline(signal, schedule if array is not None else (), array, prop, _frame(args, cfg))
    out = args.output or _out_dir(args, cfg) / "beamformed.wav"
    write_mono_wav(output, signal.sample_rate, out)
    print(f"wrote {out}: {output.size} samples (output lags input by {_frame(args, cfg).hop} samples)")
    return EXIT_OK


def cmd_beampattern(args: argparse.Namespace) -> int:
    cfg = _load(args) if args.config else None
    array = cfg.array if cfg else reference_array()
    prop = cfg.prop if cfg else PropagationConfig()
    try:
        n_phi, n_theta = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid must look like 360x1, got {args.grid!r}") from None
    look = DoaAngles(*args.look)
    rows = np.vstack([beampattern_grid(array, look, f, prop, n_phi, n_theta) for f in args.freq or [2000.0]])
    out = args.output or _out_dir(args, cfg) / "beampattern.csv"
    with atomic_path(out) as tmp, open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phi_rad", "theta_rad", "freq_hz", "magnitude", "magnitude_db"])
        writer.writerows([repr(float(v)) for v in row] for row in rows)
    print(f"wrote {out}: {len(rows)} rows, peak |B| = {rows[:, 3].max():.6f}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    report = run_pipeline(cfg, out_dir=out)
    r = report.result
    print(f"{report.mode} run: {r.chunks_out}/{r.chunks_in} chunks, dropped={r.dropped}, "
          f"causality violations={r.causality_violations()}")
    if not r.visual_lock:
        print("warning: no visual lock (no detection was ever used for steering)")
    print(_latency_table(report.stats))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _load(args, default=args.name)
    out = _out_dir(args, cfg)
    result = run_experiment(args.name, cfg, out_dir=out)
    s = result.summary()
    print(f"{args.name} ({s['variant']}): mean dSIR {s['delta_sir_mean_db']:.2f} dB, "
          f"median {s['delta_sir_median_db']:.2f} dB over {s['windows_defined']} windows")
    if s["predicted_delta_sir_db"] is not None:
        print(f"array-factor prediction: {s['predicted_delta_sir_db']:.2f} dB")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _load(args, default="bench")
    duration = args.duration or cfg.pipeline.loop_duration or 60.0
    if not duration > 0:
        raise UsageError("--duration must be > 0")
    out = _out_dir(args, cfg)
    signal = prepare_scene(cfg)
    report = run_pipeline(cfg, signal=signal, detections=prepare_detections(cfg, duration), duration=duration,
                          out_dir=out)
    print(f"{report.mode} benchmark over {duration:g} s (first {cfg.pipeline.warmup:g} s discarded)")
    table = _latency_table(report.stats)
    print(table)
    with atomic_path(out / "bench.txt") as tmp:
        Path(tmp).write_text(table + "\n")
    write_json({"duration_s": duration, **report.summary()}, out / "bench.json")
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "beamform": cmd_beamform,
    "beampattern": cmd_beampattern,
    "pipeline": cmd_pipeline,
    "experiment": cmd_experiment,
    "bench": cmd_bench,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, WavFormatError) as exc:
        print(f"visbeam: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, UsageError) as exc:
        print(f"visbeam: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PipelineAborted, RuntimeError) as exc:
        print(f"visbeam: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"visbeam: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"visbeam: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
