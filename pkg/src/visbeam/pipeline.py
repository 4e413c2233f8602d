"""Concurrent capture / vision / beamforming pipeline.

Four threads talk through bounded queues and a DoA history:

* audio producer: cuts the microphone stream into 50%-overlapped chunks,
  stamped with the capture time of their first sample;
* detection producer: replays detection events;
* vision consumer: turns detections into DoA angles and appends them to the
  history;
* beamformer consumer: for each chunk, takes the newest DoA no newer than the
  chunk midpoint, steers, and beamforms.

``realtime`` mode paces both producers against the monotonic clock.
``fast`` mode runs on virtual time (sample index / sample rate) and gates the
two consumers against each other so that every chunk sees exactly the
detections that a paced run would have delivered by its midpoint.  Output is
then reproducible bit for bit.
"""

from __future__ import annotations

import collections
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .beamformer import Beamformer, FrameSpec, chunk_midpoint, iter_chunks
from .geometry import DirectionError, DoaAngles, MicArray, PropagationConfig
from .scene import MultichannelSignal
from .vision import CameraModel, DetectionEvent, MountingOffset, detection_to_doa

log = logging.getLogger(__name__)

REALTIME = "realtime"
FAST = "fast"
MODES = (REALTIME, FAST)
BROADSIDE = DoaAngles(theta=0.0, phi=float(np.pi))


class PipelineAborted(RuntimeError):
    """A stage stalled longer than the watchdog allows."""


class QueueClosed(Exception):
    pass


class DoaHistory:
    """Bounded, time-ordered record of visual DoA estimates.

    One thread appends, another reads; reads see an atomic snapshot.
    """

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("history capacity must be > 0")
        self.capacity = capacity
        self._items: collections.deque[tuple[float, DoaAngles]] = collections.deque(maxlen=capacity)
        self._lock = threading.Lock()

    def append(self, timestamp: float, doa: DoaAngles) -> None:
        with self._lock:
            if self._items and timestamp < self._items[-1][0]:
                raise ValueError(
                    f"history timestamps must be non-decreasing ({timestamp} < {self._items[-1][0]})"
                )
            self._items.append((timestamp, doa))

    def snapshot(self) -> list[tuple[float, DoaAngles]]:
        with self._lock:
            return list(self._items)

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


def lookup_closest_not_future(
    history: DoaHistory | Sequence[tuple[float, DoaAngles]], t_mid: float
) -> tuple[float, DoaAngles] | None:
    """Newest entry with timestamp <= ``t_mid`` (the last inserted among ties)."""
    items = history.snapshot() if isinstance(history, DoaHistory) else history
    for entry in reversed(items):
        if entry[0] <= t_mid:
            return entry
    return None


class BoundedQueue:
    """FIFO with a hard depth limit.

    ``policy="block"`` makes producers wait for space; ``"drop_oldest"``
    discards the oldest item instead and counts it.
    """

    def __init__(self, max_depth: int, policy: str = "block"):
        if max_depth < 1:
            raise ValueError("queue depth must be >= 1")
        if policy not in ("block", "drop_oldest"):
            raise ValueError(f"unknown queue policy {policy!r}")
        self.max_depth = max_depth
        self.policy = policy
        self.dropped = 0
        self.high_water = 0
        self._items: collections.deque = collections.deque()
        self._closed = False
        self._cond = threading.Condition()

    def put(self, item: Any, timeout: float | None = None) -> None:
        with self._cond:
            if self.policy == "block":
                if not self._cond.wait_for(lambda: len(self._items) < self.max_depth or self._closed, timeout):
                    raise TimeoutError("queue full")
            elif len(self._items) >= self.max_depth:
                self._items.popleft()
                self.dropped += 1
            if self._closed:
                raise QueueClosed
            self._items.append(item)
            self.high_water = max(self.high_water, len(self._items))
            self._cond.notify_all()

    def get(self, timeout: float | None = None) -> Any:
        """Next item; raises :class:`QueueClosed` once closed and drained."""
        with self._cond:
            if not self._cond.wait_for(lambda: self._items or self._closed, timeout):
                raise TimeoutError("queue empty")
            if not self._items:
                raise QueueClosed
            item = self._items.popleft()
            self._cond.notify_all()
            return item

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


@dataclass(frozen=True)
class LatencyRecord:
    stage: str
    t_capture: float
    t_end: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.t_capture) and np.isfinite(self.t_end)):
            raise ValueError("latency timestamps must be finite")
        if self.t_end < self.t_capture:
            raise ValueError(f"{self.stage}: end {self.t_end} precedes capture {self.t_capture}")

    @property
    def e2e(self) -> float:
        return self.t_end - self.t_capture


@dataclass(frozen=True)
class LatencyStats:
    count: int
    mean: float
    std: float
    p95: float

    def as_ms(self) -> dict[str, float]:
        return {"count": self.count, "mean_ms": self.mean * 1e3, "std_ms": self.std * 1e3,
                "p95_ms": self.p95 * 1e3}


def latency_stats(
    records: Iterable[LatencyRecord], warmup_until: float | None = None
) -> dict[str, LatencyStats]:
    """Per-stage mean, sample standard deviation and 95th percentile of e2e (seconds).

    Records captured before ``warmup_until`` are ignored.
    """
    by_stage: dict[str, list[float]] = collections.defaultdict(list)
    for r in records:
        if warmup_until is None or r.t_capture >= warmup_until:
            by_stage[r.stage].append(r.e2e)
    if not by_stage:
        raise ValueError("no latency records to summarise")
    stats = {}
    for stage, values in by_stage.items():
        v = np.asarray(values)
        stats[stage] = LatencyStats(
            count=v.size,
            mean=float(v.mean()),
            std=float(v.std(ddof=1)) if v.size > 1 else 0.0,
            p95=float(np.percentile(v, 95)),
        )
    return stats


@dataclass(frozen=True)
class SteeringEntry:
    chunk_index: int
    chunk_midpoint: float
    doa_timestamp: float | None
    doa: DoaAngles


@dataclass
class PipelineSettings:
    mode: str = FAST
    audio_queue_depth: int = 4
    detection_queue_depth: int = 2
    queue_policy: str = "block"
    history_capacity: int = 64
    warmup: float = 10.0
    watchdog: float = 5.0
    target_label: str | None = None
    # fault injection: seconds the vision consumer sleeps before handling each event
    vision_stall: float = 0.0
    vision_stall_every: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.watchdog <= 0:
            raise ValueError("watchdog must be > 0")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")


@dataclass
class PipelineResult:
    output: np.ndarray
    sample_rate: float
    steering_log: list[SteeringEntry]
    latency: list[LatencyRecord]
    history: list[tuple[float, DoaAngles]]
    chunks_in: int
    chunks_out: int
    dropped: dict[str, int] = field(default_factory=dict)
    pacing_error: list[float] = field(default_factory=list)
    rejected_detections: int = 0
    warmup_until: float = 0.0

    @property
    def visual_lock(self) -> bool:
        return any(e.doa_timestamp is not None for e in self.steering_log)

    def stats(self) -> dict[str, LatencyStats]:
        records = [r for r in self.latency if r.t_capture >= self.warmup_until]
        if not records:
            records = self.latency
        return latency_stats(records)

    def causality_violations(self) -> int:
        return sum(
            1 for e in self.steering_log if e.doa_timestamp is not None and e.doa_timestamp > e.chunk_midpoint
        )


class _VirtualGate:
    """Orders the vision and beamformer consumers on virtual time in fast mode.

    The beamformer may process a chunk with midpoint ``m`` only once every
    detection stamped ``<= m`` is in the history; the vision consumer may
    publish a detection stamped ``t`` only once the beamformer has reached a
    chunk whose midpoint is ``>= t``.
    """

    def __init__(self, enabled: bool, timeout: float, stop: threading.Event):
        self.enabled = enabled
        self.timeout = timeout
        self.stop = stop
        self._cond = threading.Condition()
        self._audio_clock = -np.inf
        self._pending: float | None = None
        self._vision_done = False

    def _wait(self, predicate: Callable[[], bool], what: str) -> None:
        deadline = time.monotonic() + self.timeout
        with self._cond:
            while not predicate():
                if self.stop.is_set():
                    raise PipelineAborted("stopped")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise PipelineAborted(f"watchdog: {what} stalled for {self.timeout:.1f} s")
                self._cond.wait(min(remaining, 0.1))

    def beamformer_at(self, midpoint: float) -> None:
        if not self.enabled:
            return
        with self._cond:
            self._audio_clock = midpoint
            self._cond.notify_all()
        self._wait(lambda: self._vision_done or (self._pending is not None and self._pending > midpoint),
                   "vision consumer")

    def beamformer_done(self) -> None:
        with self._cond:
            self._audio_clock = np.inf
            self._cond.notify_all()

    def vision_waiting(self) -> None:
        with self._cond:
            self._pending = None
            self._cond.notify_all()

    def vision_next(self, timestamp: float) -> None:
        if not self.enabled:
            return
        with self._cond:
            self._pending = timestamp
            self._cond.notify_all()
        self._wait(lambda: self._audio_clock >= timestamp, "beamformer consumer")

    def vision_done(self) -> None:
        with self._cond:
            self._vision_done = True
            self._cond.notify_all()


class _Clock:
    """Seconds on the shared clock; zero is the first sample of the stream."""

    def __init__(self, realtime: bool, lead: float = 0.05):
        self.realtime = realtime
        self._t0 = time.monotonic() + lead

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep_until(self, t: float) -> float:
        """Sleep until shared time ``t``; returns how late we woke (seconds)."""
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)
        return self.now() - t


def run_stream(
    signal: MultichannelSignal,
    detections: Sequence[DetectionEvent],
    array: MicArray,
    camera: CameraModel,
    offset: MountingOffset,
    prop: PropagationConfig,
    spec: FrameSpec = FrameSpec(),
    settings: PipelineSettings | None = None,
    duration: float | None = None,
) -> PipelineResult:
    """Run the four-thread pipeline over a recorded scene and scripted detections.

    ``duration`` longer than the signal loops the audio (used for long
    benchmarks).  Raises :class:`PipelineAborted` if a stage stalls past the
    watchdog.
    """
    settings = settings or PipelineSettings()
    if signal.num_channels != array.count:
        raise ValueError(f"signal has {signal.num_channels} channels, array has {array.count} mics")
    if signal.sample_rate != prop.sample_rate:
        raise ValueError("signal and propagation sample rates differ")
    fs = prop.sample_rate
    total = signal.num_samples if duration is None else int(round(duration * fs))
    realtime = settings.mode == REALTIME
    clock = _Clock(realtime)
    stop = threading.Event()
    gate = _VirtualGate(not realtime, settings.watchdog, stop)
    audio_q = BoundedQueue(settings.audio_queue_depth, settings.queue_policy)
    det_q = BoundedQueue(settings.detection_queue_depth, settings.queue_policy)
    history = DoaHistory(settings.history_capacity)
    events = sorted(
        (e for e in detections if settings.target_label is None or e.label == settings.target_label),
        key=lambda e: e.timestamp,
    )

    chunks_in = 0
    pacing: list[float] = []
    audio_records: list[LatencyRecord] = []
    vision_records: list[LatencyRecord] = []
    outputs: list[np.ndarray] = []
    steering_log: list[SteeringEntry] = []
    published: list[tuple[float, DoaAngles]] = []
    rejected = 0
    errors: list[BaseException] = []
    chunk_span = spec.frame_length / fs

    def put(q: BoundedQueue, item: Any) -> None:
        while True:
            try:
                q.put(item, timeout=0.1)
                return
            except TimeoutError:
                if stop.is_set():
                    raise PipelineAborted("stopped")

    def get(q: BoundedQueue, what: str, watchdog: bool = True) -> Any:
        deadline = time.monotonic() + settings.watchdog
        while True:
            try:
                return q.get(timeout=0.1)
            except TimeoutError:
                if stop.is_set():
                    raise PipelineAborted("stopped")
                if watchdog and time.monotonic() > deadline:
                    raise PipelineAborted(f"watchdog: no {what} for {settings.watchdog:.1f} s")

    def audio_producer() -> None:
        nonlocal chunks_in
        try:
            for chunk in iter_chunks(signal.channels, spec, fs, 0.0, total):
                available = chunk.timestamp + chunk_span
                if realtime:
                    pacing.append(clock.sleep_until(available))
                put(audio_q, (chunk, available))
                chunks_in += 1
        finally:
            audio_q.close()

    def detection_producer() -> None:
        try:
            for event in events:
                if realtime:
                    clock.sleep_until(event.timestamp)
                put(det_q, event)
        finally:
            det_q.close()

    def vision_consumer() -> None:
        nonlocal rejected
        try:
            handled = 0
            while True:
                gate.vision_waiting()
                try:
                    # paced detections may legitimately pause (dropouts), so no watchdog there
                    event = get(det_q, "detections", watchdog=not realtime)
                except QueueClosed:
                    break
                handled += 1
                if settings.vision_stall and handled % settings.vision_stall_every == 0:
                    time.sleep(settings.vision_stall)
                t_start = time.perf_counter()
                try:
                    doa = detection_to_doa(event, camera, offset)
                except (DirectionError, ValueError):
                    rejected += 1
                    continue
                compute = time.perf_counter() - t_start
                gate.vision_next(event.timestamp)
                history.append(event.timestamp, doa)
                published.append((event.timestamp, doa))
                t_end = clock.now() if realtime else event.timestamp + compute
                vision_records.append(LatencyRecord("vision_e2e", event.capture_time, max(t_end, event.capture_time)))
                vision_records.append(LatencyRecord("doa_estimation", event.capture_time, event.capture_time + compute))
        finally:
            gate.vision_done()

    def beamformer_consumer() -> None:
        bf = Beamformer(array.count, spec, fs)
        current: DoaAngles | None = None
        current_ts: float | None = None
        try:
            while True:
                try:
                    chunk, available = get(audio_q, "audio chunks")
                except QueueClosed:
                    break
                mid = chunk_midpoint(chunk, spec, fs)
                gate.beamformer_at(mid)
                entry = lookup_closest_not_future(history, mid)
                t_start = time.perf_counter()
                if entry is not None and entry[1] == current:
                    current_ts = entry[0]
                elif entry is not None:
                    try:
                        bf.steer(entry[1], array, prop)
                        current, current_ts = entry[1], entry[0]
                    except DirectionError as exc:
                        log.warning("keeping previous steering: %s", exc)
                out = bf.process_chunk(chunk)
                compute = time.perf_counter() - t_start
                t_end = clock.now() if realtime else available + compute
                outputs.append(out)
                steering_log.append(SteeringEntry(chunk.chunk_index, mid, current_ts, current or BROADSIDE))
                audio_records.append(LatencyRecord("audio_e2e", chunk.timestamp, t_end))
                audio_records.append(LatencyRecord("beamforming", chunk.timestamp, chunk.timestamp + compute))
        finally:
            gate.beamformer_done()

    def guarded(fn: Callable[[], None]) -> Callable[[], None]:
        def run() -> None:
            try:
                fn()
            except BaseException as exc:  # noqa: BLE001
                if not isinstance(exc, PipelineAborted) or str(exc) != "stopped":
                    errors.append(exc)
                stop.set()
                audio_q.close()
                det_q.close()

        return run

    threads = [
        threading.Thread(target=guarded(f), name=f.__name__, daemon=True)
        for f in (audio_producer, detection_producer, vision_consumer, beamformer_consumer)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        exc = errors[0]
        if isinstance(exc, PipelineAborted):
            raise exc
        raise PipelineAborted(f"{type(exc).__name__}: {exc}") from exc

    latency = audio_records + vision_records
    output = np.concatenate(outputs)[:total] if outputs else np.zeros(0)
    return PipelineResult(
        output=output,
        sample_rate=fs,
        steering_log=steering_log,
        latency=latency,
        history=published,
        chunks_in=chunks_in,
        chunks_out=len(outputs),
        dropped={"audio": audio_q.dropped, "detections": det_q.dropped},
        pacing_error=pacing,
        rejected_detections=rejected,
        warmup_until=settings.warmup,
    )

