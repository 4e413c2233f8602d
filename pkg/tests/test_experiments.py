from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from visbeam.config import load_scenario, shipped_scenario
from visbeam.experiments import EXPERIMENTS, predicted_delta_sir, run_experiment, run_pipeline


@pytest.fixture(scope="module")
def static_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("static")
    return run_experiment("anechoic_static", out_dir=out), out


def test_static_matches_prediction(static_result):
    result, _ = static_result
    assert result.predicted_delta_db is not None
    assert result.delta.mean() == pytest.approx(result.predicted_delta_db, abs=1.0)
    assert np.all(result.delta.values[result.delta.present] > 0)


def test_static_bundle_written(static_result):
    result, out = static_result
    names = {p.name for p in out.iterdir()}
    assert {"sir_bf.csv", "sir_nbf.csv", "delta_sir.csv", "trajectory.csv", "output.wav",
            "steering_log.csv", "summary.json"} <= names
    assert not any(n.endswith(".tmp") for n in names)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["experiment"] == "anechoic_static"
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    locked = [float(r["error_deg"]) for r in rows[10:]]
    assert max(locked) < 1.0


def test_prediction_uses_interferer_gain():
    cfg = load_scenario(shipped_scenario("anechoic_static"))
    assert predicted_delta_sir(cfg) == pytest.approx(5.27, abs=0.05)
    assert predicted_delta_sir(load_scenario(shipped_scenario("anechoic_dynamic"))) is None


def test_unknown_experiment():
    with pytest.raises(ValueError):
        run_experiment("reverberant_static")
    assert "room_dynamic" in EXPERIMENTS


def test_run_pipeline_artifacts(tmp_path):
    cfg = load_scenario(shipped_scenario("anechoic_static")).with_overrides(duration=1.0)
    report = run_pipeline(cfg, out_dir=tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["visual_lock"] and data["flags"] == []
    assert data["chunks_out"] == data["chunks_in"] == 63
    header = (tmp_path / "steering_log.csv").read_text().splitlines()[0]
    assert header == "chunk_index,chunk_midpoint_s,doa_timestamp_s,theta_rad,phi_rad"
    assert (tmp_path / "steering_log.csv").read_text().splitlines()[1].split(",")[2] == "NONE"
    assert (tmp_path / "latency.csv").read_text().startswith("stage,t_capture,t_end,e2e_ms")
    assert report.result.causality_violations() == 0


def test_run_pipeline_flags_missing_lock(tmp_path):
    cfg = load_scenario(shipped_scenario("anechoic_static")).with_overrides(duration=0.5)
    report = run_pipeline(cfg, detections=[], out_dir=tmp_path)
    assert json.loads((tmp_path / "report.json").read_text())["flags"] == ["no visual lock"]
    assert not report.result.visual_lock
