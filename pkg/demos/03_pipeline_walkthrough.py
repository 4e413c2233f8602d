"""
Inside the streaming pipeline
=============================

Four threads cooperate: audio capture, detections, the vision consumer that
turns boxes into directions, and the beamformer that looks up the newest
direction not newer than each chunk's midpoint.  This walkthrough runs the
room scenario and shows what the beamformer actually used.

Run with ``python demos/03_pipeline_walkthrough.py [realtime]``.
"""

import math
import sys

from visbeam.config import load_scenario, shipped_scenario
from visbeam.experiments import run_pipeline

mode = "realtime" if "realtime" in sys.argv[1:] else "fast"
cfg = load_scenario(shipped_scenario("room_dynamic"))
report = run_pipeline(cfg, mode=mode)
result = report.result

# %%
# Before the first detection arrives the beam points straight ahead; after
# that every chunk uses a direction stamped no later than its midpoint.
print(f"{mode} run: {result.chunks_out} chunks, visual lock: {result.visual_lock}, "
      f"causality violations: {result.causality_violations()}")
print("\nchunk  midpoint(s)  doa stamp(s)  azimuth(deg)")
for entry in result.steering_log[:: len(result.steering_log) // 12]:
    stamp = "  (none)" if entry.doa_timestamp is None else f"{entry.doa_timestamp:8.3f}"
    print(f"{entry.chunk_index:5d} {entry.chunk_midpoint:11.3f} {stamp:>13} "
          f"{math.degrees(math.pi - entry.doa.phi):12.1f}")

# %%
# Latency per stage.  In fast mode the clock is virtual, so audio latency is
# the 32 ms chunk span plus compute; in realtime mode it is wall-clock.
print()
for stage, s in report.stats.items():
    print(f"{stage:15s} mean {s['mean_ms']:7.3f} ms  std {s['std_ms']:6.3f} ms  p95 {s['p95_ms']:7.3f} ms")
