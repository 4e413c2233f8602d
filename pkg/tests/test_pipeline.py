from __future__ import annotations

import math
import threading
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from visbeam.beamformer import FrameSpec, process_offline
from visbeam.detection import TargetScript, TrajectoryScript, generate_detections
from visbeam.geometry import DoaAngles, MicArray, PropagationConfig, reference_array
from visbeam.pipeline import (
    BROADSIDE,
    REALTIME,
    BoundedQueue,
    DoaHistory,
    LatencyRecord,
    PipelineAborted,
    PipelineSettings,
    QueueClosed,
    latency_stats,
    lookup_closest_not_future,
    run_stream,
)
from visbeam.scene import SourceSpec, Tone, Trajectory, synthesize_scene
from visbeam.vision import CameraModel, MountingOffset

D0, D1 = DoaAngles(0, 3.0), DoaAngles(0.1, 3.2)
PROP = PropagationConfig()
CAMERA = CameraModel(np.array([[700.0, 0, 640], [0, 700, 360], [0, 0, 1]]))
OFFSET = MountingOffset(0.1)


class TestLookup:
    def test_examples(self):
        h = [(0.0, D0), (0.1, D1)]
        assert lookup_closest_not_future(h, 0.15) == (0.1, D1)
        assert lookup_closest_not_future(h, 0.05) == (0.0, D0)
        assert lookup_closest_not_future([], 3.0) is None
        assert lookup_closest_not_future(h, -0.01) is None

    @given(st.lists(st.floats(0, 100), max_size=40), st.floats(-1, 101))
    def test_returns_latest_not_future(self, stamps, query):
        stamps = sorted(stamps)
        history = [(t, DoaAngles(0, 3.0 + i * 1e-3)) for i, t in enumerate(stamps)]
        found = lookup_closest_not_future(history, query)
        eligible = [t for t in stamps if t <= query]
        if not eligible:
            assert found is None
        else:
            assert found[0] == max(eligible)
            assert found == [e for e in history if e[0] <= query][-1]


class TestHistory:
    def test_capacity_evicts_oldest(self):
        h = DoaHistory(3)
        for i in range(5):
            h.append(float(i), D0)
        assert [t for t, _ in h.snapshot()] == [2.0, 3.0, 4.0]

    def test_rejects_time_going_backwards(self):
        h = DoaHistory()
        h.append(1.0, D0)
        with pytest.raises(ValueError):
            h.append(0.5, D1)

    def test_concurrent_reads_are_consistent(self):
        h = DoaHistory(16)
        stop = threading.Event()

        def writer():
            t = 0.0
            while not stop.is_set():
                h.append(t, D0)
                t += 1.0

        thread = threading.Thread(target=writer)
        thread.start()
        try:
            for _ in range(2000):
                snap = h.snapshot()
                stamps = [t for t, _ in snap]
                assert stamps == sorted(stamps) and len(snap) <= 16
        finally:
            stop.set()
            thread.join()


class TestQueue:
    def test_fifo_and_close(self):
        q = BoundedQueue(2)
        q.put(1)
        q.put(2)
        q.close()
        assert q.get() == 1 and q.get() == 2
        with pytest.raises(QueueClosed):
            q.get()

    def test_block_times_out_when_full(self):
        q = BoundedQueue(1)
        q.put("a")
        with pytest.raises(TimeoutError):
            q.put("b", timeout=0.05)

    def test_drop_oldest(self):
        q = BoundedQueue(2, "drop_oldest")
        for i in range(5):
            q.put(i)
        assert q.dropped == 3 and q.high_water == 2
        assert [q.get(), q.get()] == [3, 4]

    def test_blocked_producer_resumes(self):
        q = BoundedQueue(1)
        q.put(0)
        got = []
        t = threading.Thread(target=lambda: got.append(q.get()) or got.append(q.get()))
        t.start()
        q.put(1, timeout=1.0)
        t.join(1.0)
        assert got == [0, 1]


class TestLatencyStats:
    def test_constant(self):
        s = latency_stats([LatencyRecord("x", 0.0, 0.005)] * 4)["x"]
        assert s.mean == pytest.approx(0.005) and s.std == pytest.approx(0.0, abs=1e-15)

    def test_sample_std(self):
        s = latency_stats([LatencyRecord("x", 0.0, v / 1000) for v in (1, 2, 3)])["x"]
        assert s.mean == pytest.approx(0.002) and s.std == pytest.approx(0.001)
        assert s.as_ms()["mean_ms"] == pytest.approx(2.0)

    def test_warmup_and_empty(self):
        recs = [LatencyRecord("x", t, t + 0.01) for t in (0.0, 5.0, 12.0)]
        assert latency_stats(recs, warmup_until=10.0)["x"].count == 1
        with pytest.raises(ValueError):
            latency_stats([])

    def test_end_before_capture_rejected(self):
        with pytest.raises(ValueError):
            LatencyRecord("x", 1.0, 0.5)


def _scene(target_pos, interferer_traj=None, duration=2.0):
    array = reference_array()
    sources = [SourceSpec(Tone(2000, 0.3), Trajectory.static(target_pos), "target")]
    if interferer_traj is not None:
        sources.append(SourceSpec(Tone(3000, 0.3), interferer_traj, "other"))
    signal = synthesize_scene(array, sources, PROP, duration, OFFSET.array_origin)
    return array, signal


def _detections(target_pos, duration, **kw):
    script = TrajectoryScript((TargetScript("target", Trajectory.static(target_pos), **kw),), duration)
    return generate_detections(script, CAMERA, seed=1)


class TestRunStream:
    def test_broadside_fixed_point(self):
        pos = (0.0, -0.1, 2.0)  # straight ahead of the array centre
        array, signal = _scene(pos)
        dets = _detections(pos, 2.0, pixel_noise=0, depth_noise=0)
        r = run_stream(signal, dets, array, CAMERA, OFFSET, PROP)
        locked = [e for e in r.steering_log if e.doa_timestamp is not None]
        assert locked and r.visual_lock
        for e in locked:
            assert e.doa.theta == pytest.approx(0.0, abs=1e-12)
            assert e.doa.phi == pytest.approx(math.pi, abs=1e-12)
        assert r.causality_violations() == 0

    def test_no_detections_means_broadside(self):
        array, signal = _scene((0.5, 0, 2.0))
        r = run_stream(signal, [], array, CAMERA, OFFSET, PROP)
        assert not r.visual_lock
        assert all(e.doa == BROADSIDE and e.doa_timestamp is None for e in r.steering_log)
        np.testing.assert_array_equal(r.output, process_offline(signal))

    def test_fast_mode_equals_offline_replay(self):
        traj = Trajectory.from_waypoints([(0.0, (1.5, 0, 2)), (2.5, (0.2, 0, 2))])
        array, signal = _scene((0, 0, 2), traj, duration=3.0)
        script = TrajectoryScript(
            (TargetScript("target", Trajectory.from_waypoints([(0.0, (-0.5, 0, 2)), (3.0, (0.5, 0, 2.5))]),
                          dropout=0.2),),
            3.0,
        )
        dets = generate_detections(script, CAMERA, seed=5)
        r = run_stream(signal, dets, array, CAMERA, OFFSET, PROP)
        assert r.chunks_in == r.chunks_out == math.ceil(signal.num_samples / 128)
        assert r.causality_violations() == 0
        np.testing.assert_array_equal(r.output, process_offline(signal, r.history, array, PROP))
        # the logged steering is exactly the closest-not-future entry of the published history
        for e in r.steering_log:
            hit = lookup_closest_not_future(r.history, e.chunk_midpoint)
            assert (hit[0] if hit else None) == e.doa_timestamp

    def test_fast_mode_is_deterministic(self):
        array, signal = _scene((0.3, 0, 2), duration=1.0)
        dets = _detections((0.3, 0, 2), 1.0)
        a = run_stream(signal, dets, array, CAMERA, OFFSET, PROP)
        b = run_stream(signal, dets, array, CAMERA, OFFSET, PROP)
        np.testing.assert_array_equal(a.output, b.output)
        assert a.steering_log == b.steering_log

    def test_label_filter(self):
        array, signal = _scene((0.3, 0, 2), duration=1.0)
        dets = _detections((0.3, 0, 2), 1.0)
        r = run_stream(signal, dets, array, CAMERA, OFFSET, PROP, settings=PipelineSettings(target_label="nobody"))
        assert not r.visual_lock

    def test_watchdog_aborts_stalled_vision(self):
        array, signal = _scene((0.3, 0, 2), duration=1.0)
        dets = _detections((0.3, 0, 2), 1.0)
        settings = PipelineSettings(watchdog=0.3, vision_stall=1.0)
        start = time.monotonic()
        with pytest.raises(PipelineAborted, match="watchdog"):
            run_stream(signal, dets, array, CAMERA, OFFSET, PROP, settings=settings)
        assert time.monotonic() - start < 5

    def test_channel_mismatch(self):
        _, signal = _scene((0, 0, 2), duration=0.1)
        with pytest.raises(ValueError):
            run_stream(signal, [], MicArray(reference_array().positions[:4]), CAMERA, OFFSET, PROP)

    def test_realtime_short_run(self):
        array, signal = _scene((0.2, 0, 2), duration=1.5)
        dets = _detections((0.2, 0, 2), 1.5)
        r = run_stream(signal, dets, array, CAMERA, OFFSET, PROP,
                       settings=PipelineSettings(mode=REALTIME, warmup=0.2))
        stats = r.stats()
        assert r.chunks_out == r.chunks_in
        assert 0.032 <= stats["audio_e2e"].mean < 0.1
        assert stats["beamforming"].mean < 0.002
        assert r.causality_violations() == 0

    def test_realtime_stall_drops_with_drop_oldest(self):
        array, signal = _scene((0.2, 0, 2), duration=1.0)
        dets = _detections((0.2, 0, 2), 1.0)
        settings = PipelineSettings(mode=REALTIME, queue_policy="drop_oldest", detection_queue_depth=1,
                                    vision_stall=0.2, vision_stall_every=1, watchdog=5)
        r = run_stream(signal, dets, array, CAMERA, OFFSET, PROP, settings=settings)
        assert r.dropped["detections"] > 0
        assert r.causality_violations() == 0
        assert r.chunks_out == r.chunks_in

    def test_loops_audio_for_longer_runs(self):
        array, signal = _scene((0.2, 0, 2), duration=0.5)
        r = run_stream(signal, [], array, CAMERA, OFFSET, PROP, duration=1.5)
        assert r.output.size == 12000
        np.testing.assert_allclose(r.output[4000 + 256 : 8000], r.output[8000 + 256 :], atol=1e-12)

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            PipelineSettings(mode="turbo")
        with pytest.raises(ValueError):
            PipelineSettings(watchdog=0)

    def test_frame_spec_respected(self):
        array, signal = _scene((0.2, 0, 2), duration=0.5)
        spec = FrameSpec(512, 256)
        r = run_stream(signal, [], array, CAMERA, OFFSET, PROP, spec=spec)
        assert r.chunks_out == math.ceil(4000 / 256)
        assert r.steering_log[0].chunk_midpoint == pytest.approx(0.0)
