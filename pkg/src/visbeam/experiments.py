"""Scenario-level runs: the full pipeline with file outputs, and the SIR experiments.

Every file is written to a temporary sibling first and renamed into place, so
an interrupted run never leaves a partial artifact behind.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .config import ScenarioConfig, load_scenario, shipped_scenario
from .detection import generate_detections
from .geometry import DoaAngles, beampattern, direction_from_vector, separation_angle
from .metrics import SirSeries, delta_sir, sir_broadband, sir_tone_tone
from .pipeline import PipelineResult, PipelineSettings, SteeringEntry, LatencyRecord, run_stream
from .scene import MultichannelSignal, Tone, add_diffuse_noise, synthesize_scene
from .vision import DetectionEvent
from .wavio import write_wav

EXPERIMENTS = ("anechoic_static", "anechoic_dynamic", "room_dynamic", "room_dynamic_noise")


@contextlib.contextmanager
def atomic_path(path: str | os.PathLike) -> Iterator[str]:
    """Yield a temporary path that replaces ``path`` only if the block succeeds."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        Path(tmp).unlink(missing_ok=True)


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_steering_csv(entries: Sequence[SteeringEntry], path: str | os.PathLike) -> None:
    _write_rows(
        Path(path),
        ["chunk_index", "chunk_midpoint_s", "doa_timestamp_s", "theta_rad", "phi_rad"],
        [
            [e.chunk_index, repr(e.chunk_midpoint), "NONE" if e.doa_timestamp is None else repr(e.doa_timestamp),
             repr(e.doa.theta), repr(e.doa.phi)]
            for e in entries
        ],
    )


def write_latency_csv(records: Sequence[LatencyRecord], path: str | os.PathLike) -> None:
    _write_rows(
        Path(path),
        ["stage", "t_capture", "t_end", "e2e_ms"],
        [[r.stage, repr(r.t_capture), repr(r.t_end), repr(r.e2e * 1e3)] for r in records],
    )


def write_json(data: dict, path: str | os.PathLike) -> None:
    with atomic_path(path) as tmp, open(tmp, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sir_csv(series: SirSeries, path: str | os.PathLike, trend_order: int | None = None) -> None:
    with atomic_path(path) as tmp:
        series.write_csv(tmp, trend_order)


def write_mono_wav(samples: np.ndarray, sample_rate: float, path: str | os.PathLike) -> None:
    write_wav(MultichannelSignal(samples[None, :], sample_rate), path)


def prepare_scene(cfg: ScenarioConfig) -> MultichannelSignal:
    """Synthesize the configured scene, plus diffuse noise if requested."""
    signal = synthesize_scene(cfg.array, cfg.source_specs, cfg.prop, cfg.duration, cfg.offset.array_origin,
                              block_hop=cfg.frame.hop)
    if cfg.diffuse_snr_db is not None:
        ref = cfg.array.center_index() or 0
        signal = add_diffuse_noise(signal, cfg.diffuse_snr_db, seed=cfg.seed + 7, reference_channel=ref)
    return signal


def prepare_detections(cfg: ScenarioConfig, duration: float | None = None) -> list[DetectionEvent]:
    script = cfg.detection_script()
    if duration is not None:
        script = type(script)(script.targets, duration)
    return generate_detections(script, cfg.camera, seed=cfg.seed)


@dataclass
class RunReport:
    result: PipelineResult
    mode: str
    files: dict[str, str] = field(default_factory=dict)

    @property
    def stats(self) -> dict:
        return {k: v.as_ms() for k, v in self.result.stats().items()}

    def summary(self) -> dict:
        r = self.result
        pacing = np.asarray(r.pacing_error) * 1e3
        return {
            "mode": self.mode,
            "chunks_in": r.chunks_in,
            "chunks_out": r.chunks_out,
            "visual_lock": r.visual_lock,
            "flags": [] if r.visual_lock else ["no visual lock"],
            "causality_violations": r.causality_violations(),
            "dropped": r.dropped,
            "rejected_detections": r.rejected_detections,
            "warmup_s": r.warmup_until,
            "latency_ms": self.stats,
            "pacing_error_ms": (
                {"mean": float(pacing.mean()), "max": float(pacing.max())} if pacing.size else None
            ),
            "files": self.files,
        }


def run_pipeline(
    cfg: ScenarioConfig,
    mode: str | None = None,
    out_dir: str | os.PathLike | None = None,
    signal: MultichannelSignal | None = None,
    detections: Sequence[DetectionEvent] | None = None,
    duration: float | None = None,
    vision_stall: float = 0.0,
) -> RunReport:
    """Run the threaded pipeline for a scenario and optionally write its artifacts.

    ``duration`` (or the config's ``loop_duration``) longer than the scene
    loops the audio; detections are scripted over the full run.
    """
    mode = mode or cfg.pipeline.mode
    duration = duration or cfg.pipeline.loop_duration
    signal = signal if signal is not None else prepare_scene(cfg)
    if detections is None:
        detections = prepare_detections(cfg, duration)
    p = cfg.pipeline
    settings = PipelineSettings(
        mode=mode, audio_queue_depth=p.audio_queue_depth, detection_queue_depth=p.detection_queue_depth,
        queue_policy=p.queue_policy, history_capacity=p.history_capacity, warmup=p.warmup,
        watchdog=p.watchdog, target_label=cfg.evaluation.target_label, vision_stall=vision_stall,
    )
    result = run_stream(signal, detections, cfg.array, cfg.camera, cfg.offset, cfg.prop, cfg.frame, settings,
                        duration)
    report = RunReport(result, mode)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {"output_wav": out / "output.wav", "steering_log": out / "steering_log.csv",
                 "latency": out / "latency.csv", "report": out / "report.json"}
        write_mono_wav(result.output, result.sample_rate, files["output_wav"])
        write_steering_csv(result.steering_log, files["steering_log"])
        write_latency_csv(result.latency, files["latency"])
        report.files = {k: str(v) for k, v in files.items()}
        write_json(report.summary(), files["report"])
    return report


# --- experiments -------------------------------------------------------------


@dataclass
class ExperimentResult:
    name: str
    sir_bf: SirSeries
    sir_nbf: SirSeries
    delta: SirSeries
    separation_deg: np.ndarray
    steering_log: list[SteeringEntry]
    predicted_delta_db: float | None
    output: np.ndarray
    files: dict[str, str] = field(default_factory=dict)

    def mean_delta_near(self, separation_deg: float, tolerance_deg: float = 2.5) -> float:
        """Mean ΔSIR over windows whose true separation is within ``tolerance_deg``."""
        sel = (np.abs(self.separation_deg - separation_deg) <= tolerance_deg) & self.delta.present
        if not sel.any():
            raise ValueError(f"no windows with separation near {separation_deg} deg")
        return float(self.delta.values[sel].mean())

    def summary(self) -> dict:
        d = self.delta
        ok = d.present
        return {
            "experiment": self.name,
            "variant": d.variant,
            "windows": len(d),
            "windows_defined": int(ok.sum()),
            "delta_sir_mean_db": d.mean(),
            "delta_sir_std_db": d.std(),
            "delta_sir_median_db": d.median(),
            "fraction_positive": float(np.mean(d.values[ok] > 0)) if ok.any() else None,
            "predicted_delta_sir_db": self.predicted_delta_db,
            "separation_deg_range": [float(np.min(self.separation_deg)), float(np.max(self.separation_deg))],
        }


def _direction_at(cfg: ScenarioConfig, label: str, t: np.ndarray) -> np.ndarray:
    p = cfg.source(label).spec.trajectory.position_at(t) - cfg.offset.array_origin
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def _interferer_label(cfg: ScenarioConfig) -> str:
    if cfg.evaluation.interferer_label:
        return cfg.evaluation.interferer_label
    others = [s.spec.label for s in cfg.sources if s.spec.label != cfg.evaluation.target_label]
    if len(others) != 1:
        raise ValueError("set evaluation.interferer_label: the scene does not have exactly one other source")
    return others[0]


def predicted_delta_sir(cfg: ScenarioConfig, look: DoaAngles | None = None) -> float | None:
    """Array-factor prediction of ΔSIR for static tone sources (None when not applicable)."""
    target = cfg.source(cfg.evaluation.target_label).spec
    interferer = cfg.source(_interferer_label(cfg)).spec
    if not (isinstance(target.waveform, Tone) and isinstance(interferer.waveform, Tone)):
        return None
    if not (target.trajectory.is_static and interferer.trajectory.is_static):
        return None
    t_dir = direction_from_vector(_direction_at(cfg, target.label, np.array([0.0]))[0])
    i_dir = direction_from_vector(_direction_at(cfg, interferer.label, np.array([0.0]))[0])
    look = look or t_dir
    g_t = abs(beampattern(cfg.array, look, t_dir, target.waveform.freq, cfg.prop))
    g_i = abs(beampattern(cfg.array, look, i_dir, interferer.waveform.freq, cfg.prop))
    return float(20 * np.log10(g_t) - 20 * np.log10(g_i))


def measure_sir(cfg: ScenarioConfig, mono: np.ndarray, start_time: float = 0.0) -> SirSeries:
    target = cfg.source(cfg.evaluation.target_label).spec
    interferer = cfg.source(_interferer_label(cfg)).spec
    ev = cfg.evaluation
    fs = cfg.prop.sample_rate
    if not isinstance(interferer.waveform, Tone):
        raise ValueError("the interferer must be a tone to measure SIR")
    if isinstance(target.waveform, Tone):
        return sir_tone_tone(mono, fs, target.waveform.freq, interferer.waveform.freq, ev.window, ev.hop,
                             ev.bandwidth, start_time)
    return sir_broadband(mono, fs, interferer.waveform.freq, ev.window, ev.hop, ev.bandwidth, start_time)


def run_experiment(
    name: str,
    cfg: ScenarioConfig | str | os.PathLike | None = None,
    out_dir: str | os.PathLike | None = None,
    mode: str | None = None,
) -> ExperimentResult:
    """Beamform a synthetic scene through the pipeline and compare SIR against the centre microphone.

    Without ``cfg`` the shipped scenario called ``name`` is used.  The
    beamformed output lags its input by one hop, so it is advanced by one hop
    before both signals are cut into the same analysis windows.
    """
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    if cfg is None:
        cfg = load_scenario(shipped_scenario(name))
    elif not isinstance(cfg, ScenarioConfig):
        cfg = load_scenario(cfg)

    signal = prepare_scene(cfg)
    report = run_pipeline(cfg, mode=mode or cfg.pipeline.mode, signal=signal)
    result = report.result
    H = cfg.frame.hop
    center = cfg.array.center_index()
    reference = signal.channels[center if center is not None else 0]
    bf = result.output[H:]
    nbf = reference[: reference.size - H]

    sir_bf = measure_sir(cfg, bf)
    sir_nbf = measure_sir(cfg, nbf)
    delta = delta_sir(sir_bf, sir_nbf)

    target, interferer = cfg.evaluation.target_label, _interferer_label(cfg)
    cos = np.sum(_direction_at(cfg, target, delta.times) * _direction_at(cfg, interferer, delta.times), axis=1)
    separation = np.degrees(np.arccos(np.clip(cos, -1, 1)))

    exp = ExperimentResult(name, sir_bf, sir_nbf, delta, separation, result.steering_log,
                           predicted_delta_sir(cfg), result.output)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {k: out / f for k, f in (("sir_bf", "sir_bf.csv"), ("sir_nbf", "sir_nbf.csv"),
                                          ("delta_sir", "delta_sir.csv"), ("trajectory", "trajectory.csv"),
                                          ("output_wav", "output.wav"), ("steering_log", "steering_log.csv"),
                                          ("summary", "summary.json"))}
        write_sir_csv(sir_bf, files["sir_bf"])
        write_sir_csv(sir_nbf, files["sir_nbf"])
        write_sir_csv(delta, files["delta_sir"], trend_order=cfg.evaluation.trend_order or None)
        _write_trajectory(cfg, result.steering_log, files["trajectory"])
        write_mono_wav(result.output, cfg.prop.sample_rate, files["output_wav"])
        write_steering_csv(result.steering_log, files["steering_log"])
        exp.files = {k: str(v) for k, v in files.items()}
        write_json(dict(exp.summary(), files=exp.files), files["summary"])
    return exp


def _write_trajectory(cfg: ScenarioConfig, log: Sequence[SteeringEntry], path: Path) -> None:
    """Estimated (applied) versus true target direction per chunk."""
    times = np.array([e.chunk_midpoint for e in log])
    truth = _direction_at(cfg, cfg.evaluation.target_label, times)
    rows = []
    for e, u in zip(log, truth):
        true = direction_from_vector(u)
        err = np.degrees(separation_angle(e.doa, true))
        rows.append([e.chunk_index, repr(e.chunk_midpoint), repr(e.doa.theta), repr(e.doa.phi),
                     repr(true.theta), repr(true.phi), repr(float(err))])
    _write_rows(path, ["chunk_index", "t_s", "est_theta_rad", "est_phi_rad", "true_theta_rad", "true_phi_rad",
                       "error_deg"], rows)
