"""HTTP surface: every endpoint once, error translation, validation."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from meetsep._version import __version__
from meetsep.audio import read_wav
from meetsep.pipeline import load_report, strip_volatile
from meetsep.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def workspace(client, tmp_path_factory):
    """Synthesize a tiny dataset and train a short checkpoint through
    the API itself, so later tests exercise real artifacts."""
    root = tmp_path_factory.mktemp("svc")
    data = root / "data"
    r = client.post(
        "/v1/synth",
        json={
            "out_dir": str(data),
            "seed": 5,
            "n_pit": 6,
            "n_mixit": 2,
            "n_sessions": 1,
            "utterances_per_session": 4,
        },
    )
    assert r.status_code == 200, r.text
    synth_info = r.json()
    ckpt = root / "model.json"
    r = client.post(
        "/v1/train",
        json={
            "train_manifest": synth_info["train_manifest"],
            "checkpoint_out": str(ckpt),
            "steps": 60,
        },
    )
    assert r.status_code == 200, r.text
    train_info = r.json()
    return {
        "root": root,
        "data": data,
        "synth": synth_info,
        "checkpoint": str(ckpt),
        "train": train_info,
    }


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_version(client):
    r = client.get("/version")
    assert r.status_code == 200
    assert r.json() == {"version": __version__}


def test_synth_endpoint_wrote_dataset(workspace):
    info = workspace["synth"]
    assert info["n_pit"] == 6 and info["n_mixit"] == 2 and info["n_sessions"] == 1
    assert Path(info["train_manifest"]).is_file()
    assert Path(info["sessions"]).is_file()
    assert len(list((workspace["data"] / "train").glob("mix_*.wav"))) == 6


def test_train_endpoint_reduces_loss(workspace):
    info = workspace["train"]
    assert Path(workspace["checkpoint"]).is_file()
    assert info["steps"] == 60
    assert info["final_loss"] < info["initial_loss"]


def test_separate_endpoint(client, workspace):
    utt = next((workspace["data"] / "sessions").glob("*.wav"))
    out_dir = workspace["root"] / "seps"
    r = client.post(
        "/v1/separate",
        json={
            "checkpoint": workspace["checkpoint"],
            "audio_path": str(utt),
            "out_dir": str(out_dir),
            "prefix": "sep",
        },
    )
    assert r.status_code == 200, r.text
    paths = r.json()["sources"]
    assert [Path(p).name for p in paths] == ["sep_0.wav", "sep_1.wav"]
    n_in = len(read_wav(utt))
    for p in paths:
        wave = read_wav(p)
        assert len(wave) == n_in
        assert wave.sample_rate == 16000


def test_select_endpoint(client, workspace):
    r = client.post(
        "/v1/select",
        json={
            "manifest": workspace["synth"]["sessions"],
            "checkpoint": workspace["checkpoint"],
        },
    )
    assert r.status_code == 200, r.text
    sessions = r.json()["sessions"]
    assert len(sessions) == 1
    row = sessions[0]
    assert row["iterations_run"] == 2
    assert len(row["chosen"]) == 4
    assert all(v in (0, 1) for v in row["chosen"].values())


def test_pipeline_endpoint_writes_report_and_hypotheses(client, workspace):
    report_out = workspace["root"] / "report.json"
    hyp_out = workspace["root"] / "hyp.json"
    r = client.post(
        "/v1/pipeline",
        json={
            "manifest": workspace["synth"]["sessions"],
            "checkpoint": workspace["checkpoint"],
            "report_out": str(report_out),
            "hyp_out": str(hyp_out),
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["schema_version"] == 1
    assert body["summary"]["n_utterances"] == 4
    assert body["config"]["manifest"] == workspace["synth"]["sessions"]
    assert body["config"]["checkpoint"] == workspace["checkpoint"]
    assert strip_volatile(load_report(report_out)) == strip_volatile(body)
    hyp = json.loads(hyp_out.read_text())
    assert "sessions" in hyp


def test_pipeline_endpoint_without_separation(client, workspace):
    r = client.post(
        "/v1/pipeline",
        json={
            "manifest": workspace["synth"]["sessions"],
            "apply_separation": False,
        },
    )
    assert r.status_code == 200, r.text
    assert r.json()["config"]["apply_separation"] is False


def test_evaluate_endpoint_perfect_reference(client, workspace):
    refs = workspace["synth"]["ref_transcripts"]
    r = client.post("/v1/evaluate", json={"hyp_path": refs, "ref_path": refs})
    assert r.status_code == 200, r.text
    assert r.json()["summary"]["micro_cpwer"] == 0.0


def test_domain_error_becomes_400(client, workspace):
    # separation requested with neither checkpoint nor planted sources
    r = client.post(
        "/v1/pipeline",
        json={"manifest": workspace["synth"]["sessions"]},
    )
    assert r.status_code == 400
    body = r.json()
    assert body["error"] == "InvalidInputError"
    assert "checkpoint" in body["detail"]


def test_invalid_synth_config_becomes_400(client, tmp_path):
    r = client.post(
        "/v1/synth",
        json={"out_dir": str(tmp_path), "speakers_per_session": 9},
    )
    assert r.status_code == 400
    assert r.json()["error"] == "InvalidInputError"


def test_missing_file_becomes_400(client, tmp_path):
    r = client.post(
        "/v1/separate",
        json={
            "checkpoint": str(tmp_path / "nope.json"),
            "audio_path": str(tmp_path / "nope.wav"),
            "out_dir": str(tmp_path),
        },
    )
    assert r.status_code == 400
    assert r.json()["error"] == "FileNotFoundError"


def test_missing_required_field_is_422(client):
    r = client.post("/v1/train", json={})
    assert r.status_code == 422


def test_out_of_range_fraction_is_422(client, workspace):
    r = client.post(
        "/v1/select",
        json={
            "manifest": workspace["synth"]["sessions"],
            "checkpoint": workspace["checkpoint"],
            "outlier_fraction": 1.5,
        },
    )
    assert r.status_code == 422
