"""Scenario files: one YAML document describing array, camera, scene and run settings.

Unknown keys are rejected, and every validation error names the offending
key path and its line in the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .beamformer import FrameSpec
from .detection import TargetScript, TrajectoryScript
from .geometry import MicArray, PropagationConfig, build_concentric_array
from .scene import SampleFile, SourceSpec, Tone, Trajectory, WhiteNoise
from .vision import CameraModel, MountingOffset

SHIPPED_DIR = Path(__file__).with_name("scenarios")


class ConfigError(ValueError):
    def __init__(self, message: str, path: tuple = (), line: int | None = None, source: str | None = None):
        self.key_path = path
        self.line = line
        where = ".".join(str(p) for p in path) or "<root>"
        location = ":".join(str(x) for x in (source, line) if x is not None)
        super().__init__(f"{location + ': ' if location else ''}{where}: {message}")


@dataclass(frozen=True)
class SourceConfig:
    spec: SourceSpec
    detect: bool = True
    fps: float = 30.0
    pixel_noise: float = 2.0
    depth_noise: float = 0.02
    dropout: float = 0.0
    latency: float = 0.064


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "fast"
    audio_queue_depth: int = 4
    detection_queue_depth: int = 2
    queue_policy: str = "block"
    history_capacity: int = 64
    warmup: float = 10.0
    watchdog: float = 5.0
    loop_duration: float | None = None


@dataclass(frozen=True)
class EvaluationConfig:
    target_label: str = "target"
    interferer_label: str | None = None
    window: int = 1024
    hop: int = 512
    bandwidth: float = 100.0
    trend_order: int = 5


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    array: MicArray
    prop: PropagationConfig
    frame: FrameSpec
    camera: CameraModel
    offset: MountingOffset
    duration: float
    sources: tuple[SourceConfig, ...]
    diffuse_snr_db: float | None = None
    pipeline: PipelineConfig = PipelineConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    seed: int = 0
    output_dir: str = "out"
    name: str = "scenario"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def source_specs(self) -> list[SourceSpec]:
        return [s.spec for s in self.sources]

    def source(self, label: str) -> SourceConfig:
        for s in self.sources:
            if s.spec.label == label:
                return s
        raise KeyError(label)

    def detection_script(self) -> TrajectoryScript:
        targets = [
            TargetScript(s.spec.label, s.spec.trajectory, s.fps, s.pixel_noise, s.depth_noise,
                         s.dropout, s.latency)
            for s in self.sources
            if s.detect
        ]
        return TrajectoryScript(tuple(targets), self.duration)

    def with_overrides(self, **kw: Any) -> "ScenarioConfig":
        """Copy with top-level fields or ``frame_length`` / ``hop`` / ``mode`` / ``seed`` replaced."""
        frame = self.frame
        if "frame_length" in kw or "hop" in kw:
            n = kw.pop("frame_length", None) or frame.frame_length
            h = kw.pop("hop", None) or n // 2
            frame = FrameSpec(int(n), int(h))
        pipeline = self.pipeline
        if "mode" in kw:
            pipeline = replace(pipeline, mode=kw.pop("mode"))
        return replace(self, frame=frame, pipeline=pipeline, **kw)


# --- parsing -----------------------------------------------------------------


_SCALARS = yaml.SafeLoader("")


def _build_tree(node: yaml.Node, path: tuple, lines: dict) -> Any:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            if key in out:
                raise ConfigError("duplicate key", path + (key,), key_node.start_mark.line + 1)
            out[key] = _build_tree(value_node, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_build_tree(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return _SCALARS.construct_object(node)


class _Reader:
    """Typed, path-aware access into the parsed document."""

    def __init__(self, lines: dict, source: str | None):
        self.lines = lines
        self.source = source

    def error(self, message: str, path: tuple) -> ConfigError:
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        return ConfigError(message, path, line, self.source)

    def section(self, data: Any, path: tuple, allowed: set[str], required: set[str] = frozenset()) -> dict:
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise self.error("expected a mapping", path)
        for key in data:
            if key not in allowed:
                raise self.error(f"unknown key (allowed: {', '.join(sorted(allowed))})", path + (key,))
        for key in required:
            if key not in data:
                raise self.error(f"missing required key {key!r}", path)
        return data

    def number(self, data: dict, key: str, path: tuple, default: Any = None, check: Callable | None = None,
               rule: str = "", integer: bool = False) -> Any:
        if key not in data:
            return default
        value = data[key]
        ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
        if isinstance(value, bool) or not ok_type:
            raise self.error(f"expected {'an integer' if integer else 'a number'}, got {value!r}", path + (key,))
        if check is not None and not check(value):
            raise self.error(f"{value!r} violates rule: {rule}", path + (key,))
        return value

    def vector(self, data: dict, key: str, path: tuple, length: int, default: Any = None) -> Any:
        if key not in data:
            return default
        value = data[key]
        if (not isinstance(value, list) or len(value) != length
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            raise self.error(f"expected a list of {length} numbers", path + (key,))
        return [float(v) for v in value]


def _parse_trajectory(r: _Reader, src: dict, path: tuple) -> Trajectory:
    if ("position" in src) == ("trajectory" in src):
        raise r.error("give exactly one of 'position' or 'trajectory'", path)
    if "position" in src:
        pos = r.vector(src, "position", path, 3)
        if not pos[2] > 0:
            raise r.error("source must be in front of the array (z > 0)", path + ("position",))
        return Trajectory.static(pos)
    waypoints = src["trajectory"]
    if not isinstance(waypoints, list) or not waypoints:
        raise r.error("expected a non-empty list of waypoints", path + ("trajectory",))
    times, positions = [], []
    for i, wp in enumerate(waypoints):
        wpath = path + ("trajectory", i)
        wp = r.section(wp, wpath, {"t", "position"}, {"t", "position"})
        times.append(float(r.number(wp, "t", wpath)))
        pos = r.vector(wp, "position", wpath, 3)
        if not pos[2] > 0:
            raise r.error("waypoint must be in front of the array (z > 0)", wpath + ("position",))
        positions.append(pos)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise r.error("waypoint times must be strictly increasing", path + ("trajectory",))
    return Trajectory(np.array(times), np.array(positions))


def _parse_waveform(r: _Reader, data: Any, path: tuple, fs: float, base_dir: Path, seed: int, index: int):
    data = r.section(data, path, {"type", "freq", "amplitude", "phase", "seed", "path", "gain"}, {"type"})
    kind = data["type"]
    if kind == "tone":
        r.section(data, path, {"type", "freq", "amplitude", "phase"}, {"freq"})
        freq = r.number(data, "freq", path, check=lambda f: 0 < f < fs / 2,
                        rule=f"tone frequency must be positive and below the Nyquist frequency fs/2 = {fs / 2:g} Hz")
        return Tone(float(freq), float(r.number(data, "amplitude", path, 1.0)),
                    float(r.number(data, "phase", path, 0.0)))
    if kind == "white_noise":
        r.section(data, path, {"type", "amplitude", "seed"})
        return WhiteNoise(float(r.number(data, "amplitude", path, 1.0)),
                          int(r.number(data, "seed", path, seed + 1000 + index, integer=True)))
    if kind == "sample_file":
        r.section(data, path, {"type", "path", "gain"}, {"path"})
        p = Path(str(data["path"]))
        return SampleFile(str(p if p.is_absolute() else base_dir / p), float(r.number(data, "gain", path, 1.0)))
    raise r.error(f"unknown waveform type {kind!r} (tone, white_noise, sample_file)", path + ("type",))


def parse_scenario(doc: dict, lines: dict | None = None, source: str | None = None,
                   base_dir: str | os.PathLike = ".") -> ScenarioConfig:
    r = _Reader(lines or {}, source)
    base_dir = Path(base_dir)
    top = r.section(doc, (), {"name", "seed", "output_dir", "array", "propagation", "frame", "camera",
                              "scene", "pipeline", "evaluation"}, {"scene"})
    seed = int(r.number(top, "seed", (), 0, integer=True))

    a = r.section(top.get("array"), ("array",), {"ring_radii", "mics_per_ring"})
    radii = a.get("ring_radii", [0.0, 0.025, 0.045])
    counts = a.get("mics_per_ring", [1, 4, 8])
    try:
        array = build_concentric_array(radii, counts)
    except (ValueError, TypeError) as exc:
        raise r.error(str(exc), ("array",)) from None

    p = r.section(top.get("propagation"), ("propagation",), {"speed_of_sound", "sample_rate"})
    c = r.number(p, "speed_of_sound", ("propagation",), 343.0, lambda v: v > 0, "speed of sound must be > 0")
    fs = r.number(p, "sample_rate", ("propagation",), 8000, lambda v: v > 0 and float(v).is_integer(),
                  "sample rate must be a positive whole number of Hz")
    prop = PropagationConfig(float(c), float(fs))

    f = r.section(top.get("frame"), ("frame",), {"frame_length", "hop"})
    n = r.number(f, "frame_length", ("frame",), 256, lambda v: v >= 2 and v % 2 == 0,
                 "frame length must be even and >= 2", integer=True)
    h = r.number(f, "hop", ("frame",), n // 2, lambda v: v == n // 2,
                 f"hop must equal frame_length / 2 = {n // 2}", integer=True)
    frame = FrameSpec(n, h)

    cam = r.section(top.get("camera"), ("camera",),
                    {"intrinsics", "rotation", "translation", "baseline", "mount_offset"})
    try:
        camera = CameraModel(
            intrinsics=np.array(r.vector(cam, "intrinsics", ("camera",), 9, [700, 0, 640, 0, 700, 360, 0, 0, 1])),
            rotation=np.array(r.vector(cam, "rotation", ("camera",), 9, [1, 0, 0, 0, 1, 0, 0, 0, 1])),
            translation=np.array(r.vector(cam, "translation", ("camera",), 3, [0, 0, 0])),
            baseline=r.number(cam, "baseline", ("camera",), None),
        )
    except ValueError as exc:
        raise r.error(str(exc), ("camera",)) from None
    offset = MountingOffset(float(r.number(cam, "mount_offset", ("camera",), 0.0)))

    sc = r.section(top.get("scene"), ("scene",), {"duration", "sources", "diffuse_noise"}, {"duration"})
    duration = float(r.number(sc, "duration", ("scene",), check=lambda v: v > 0, rule="duration must be > 0"))
    diffuse = None
    if sc.get("diffuse_noise") is not None:
        dn = r.section(sc["diffuse_noise"], ("scene", "diffuse_noise"), {"snr_db"}, {"snr_db"})
        diffuse = float(r.number(dn, "snr_db", ("scene", "diffuse_noise")))
    raw_sources = sc.get("sources", [])
    if not isinstance(raw_sources, list):
        raise r.error("expected a list of sources", ("scene", "sources"))
    sources = []
    labels = set()
    for i, src in enumerate(raw_sources):
        path = ("scene", "sources", i)
        src = r.section(src, path, {"label", "waveform", "position", "trajectory", "detect", "fps",
                                    "pixel_noise", "depth_noise", "dropout", "latency"}, {"label", "waveform"})
        label = str(src["label"])
        if label in labels:
            raise r.error(f"duplicate source label {label!r}", path + ("label",))
        labels.add(label)
        waveform = _parse_waveform(r, src["waveform"], path + ("waveform",), prop.sample_rate, base_dir, seed, i)
        trajectory = _parse_trajectory(r, src, path)
        detect = src.get("detect", True)
        if not isinstance(detect, bool):
            raise r.error("expected true or false", path + ("detect",))
        sources.append(SourceConfig(
            spec=SourceSpec(waveform, trajectory, label),
            detect=detect,
            fps=float(r.number(src, "fps", path, 30.0, lambda v: v > 0, "fps must be > 0")),
            pixel_noise=float(r.number(src, "pixel_noise", path, 2.0, lambda v: v >= 0, "noise must be >= 0")),
            depth_noise=float(r.number(src, "depth_noise", path, 0.02, lambda v: v >= 0, "noise must be >= 0")),
            dropout=float(r.number(src, "dropout", path, 0.0, lambda v: 0 <= v <= 1, "dropout must be in [0, 1]")),
            latency=float(r.number(src, "latency", path, 0.064, lambda v: v >= 0, "latency must be >= 0")),
        ))
        for pos in trajectory.positions:
            p_cam = camera.rotation.T @ (pos - camera.translation)
            if detect and not p_cam[2] > 0:
                raise r.error("source is behind the camera", path + ("trajectory" if "trajectory" in src else "position",))
            if not (pos - offset.array_origin)[2] > 0:
                raise r.error("source is not in front of the array", path)

    pl = r.section(top.get("pipeline"), ("pipeline",), {"mode", "audio_queue_depth", "detection_queue_depth",
                                                        "queue_policy", "history_capacity", "warmup",
                                                        "watchdog", "loop_duration"})
    mode = pl.get("mode", "fast")
    if mode not in ("fast", "realtime"):
        raise r.error(f"mode must be 'fast' or 'realtime', got {mode!r}", ("pipeline", "mode"))
    policy = pl.get("queue_policy", "block")
    if policy not in ("block", "drop_oldest"):
        raise r.error(f"queue_policy must be 'block' or 'drop_oldest', got {policy!r}", ("pipeline", "queue_policy"))
    positive_int = dict(check=lambda v: v >= 1, rule="must be >= 1", integer=True)
    pipeline = PipelineConfig(
        mode=mode,
        audio_queue_depth=r.number(pl, "audio_queue_depth", ("pipeline",), 4, **positive_int),
        detection_queue_depth=r.number(pl, "detection_queue_depth", ("pipeline",), 2, **positive_int),
        queue_policy=policy,
        history_capacity=r.number(pl, "history_capacity", ("pipeline",), 64, **positive_int),
        warmup=float(r.number(pl, "warmup", ("pipeline",), 10.0, lambda v: v >= 0, "warmup must be >= 0")),
        watchdog=float(r.number(pl, "watchdog", ("pipeline",), 5.0, lambda v: v > 0, "watchdog must be > 0")),
        loop_duration=r.number(pl, "loop_duration", ("pipeline",), None, lambda v: v > 0, "must be > 0"),
    )

    ev = r.section(top.get("evaluation"), ("evaluation",), {"target_label", "interferer_label", "window", "hop",
                                                            "bandwidth", "trend_order"})
    evaluation = EvaluationConfig(
        target_label=str(ev.get("target_label", "target")),
        interferer_label=None if ev.get("interferer_label") is None else str(ev["interferer_label"]),
        window=r.number(ev, "window", ("evaluation",), 1024, **positive_int),
        hop=r.number(ev, "hop", ("evaluation",), 512, **positive_int),
        bandwidth=float(r.number(ev, "bandwidth", ("evaluation",), 100.0, lambda v: v > 0, "must be > 0")),
        trend_order=r.number(ev, "trend_order", ("evaluation",), 5, check=lambda v: v >= 0, rule="must be >= 0",
                             integer=True),
    )
    if labels and evaluation.target_label not in labels:
        raise r.error(f"target_label {evaluation.target_label!r} is not a source label", ("evaluation", "target_label"))
    if evaluation.interferer_label is not None and evaluation.interferer_label not in labels:
        raise r.error(f"interferer_label {evaluation.interferer_label!r} is not a source label",
                      ("evaluation", "interferer_label"))

    return ScenarioConfig(
        array=array, prop=prop, frame=frame, camera=camera, offset=offset, duration=duration,
        sources=tuple(sources), diffuse_snr_db=diffuse, pipeline=pipeline, evaluation=evaluation,
        seed=seed, output_dir=str(top.get("output_dir", "out")), name=str(top.get("name", "scenario")), raw=doc,
    )


def load_scenario(path: str | os.PathLike, seed: int | None = None) -> ScenarioConfig:
    """Parse and validate a scenario file.

    ``seed`` replaces the file's top-level seed before anything derived from
    it (noise seeds, detection jitter) is resolved.  Raises ``FileNotFoundError``/``OSError`` for unreadable files and
    :class:`ConfigError` for invalid content.
    """
    path = Path(path)
    text = path.read_text()
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", (), mark.line + 1 if mark else None, str(path)) from None
    if root is None:
        raise ConfigError("empty scenario file", (), None, str(path))
    lines: dict = {}
    doc = _build_tree(root, (), lines)
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = int(seed)
    return parse_scenario(doc, lines, str(path), path.parent)


def shipped_scenario(name: str) -> Path:
    path = SHIPPED_DIR / f"{name}.yaml"
    if not path.exists():
        available = sorted(p.stem for p in SHIPPED_DIR.glob("*.yaml"))
        raise FileNotFoundError(f"no shipped scenario {name!r}; available: {', '.join(available)}")
    return path
