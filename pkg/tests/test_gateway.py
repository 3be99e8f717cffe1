"""Gateway: event log, control plane, HTTP API, scenarios, CLI."""

from __future__ import annotations

import json
import os
from dataclasses import replace

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from dcxtwin.errors import (
    CorruptLog,
    NotPending,
    StepFailure,
    UnknownFault,
    UnknownTarget,
    ValidationError,
)
from dcxtwin.gateway.api import create_app
from dcxtwin.gateway.cli import main as cli_main
from dcxtwin.gateway.events import (
    EventLog,
    initial_state,
    load_records,
    replay_events,
)
from dcxtwin.gateway.plots import emit_plot_data
from dcxtwin.gateway.scenarios import load_scenario, run_scenario
from dcxtwin.gateway.store import ControlPlane
from dcxtwin.monitor import span_length_from_rtt
from dcxtwin.netmodel import serialize_topology

from conftest import DATA_DIR, SCENARIO_DIR


@pytest.fixture(scope="module")
def scenario_out(tmp_path_factory):
    """One shared run of the shipped walkthrough scenario."""
    old = os.environ.pop("DCX_SEED", None)
    try:
        out = tmp_path_factory.mktemp("scenario")
        summary = run_scenario(SCENARIO_DIR / "loss_localization.yaml", out)
    finally:
        if old is not None:
            os.environ["DCX_SEED"] = old
    return summary, out


class TestEventLog:
    def _set(self, *path, value):
        return {"path": list(path), "value": value}

    def test_append_folds_effects(self):
        log = EventLog()
        log.append("fault", {"op": "inject"}, [self._set("faults", "f1", value={"kind": "step_loss"})])
        log.append("fault", {"op": "clear"}, [{"path": ["faults", "f1"], "delete": True}])
        assert log.last_seq == 2
        assert log.state["faults"] == {}
        assert log.records[0].state["faults"]["f1"] == {"kind": "step_loss"}

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            EventLog().append("gossip", {}, [])

    def test_replay_round_trip(self, tmp_path):
        log = EventLog()
        for i in range(3):
            log.append("settings", {"i": i}, [self._set("settings", f"k{i}", value=i)])
        path = log.write_jsonl(tmp_path / "events.jsonl")
        assert replay_events(path) == log.state
        assert [r.seq for r in load_records(path)] == [1, 2, 3]

    def test_empty_log_replays_to_initial_state(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        assert replay_events(p) == initial_state()

    def test_sequence_gap_detected(self):
        log = EventLog()
        for i in range(2):
            log.append("settings", {}, [self._set("settings", "k", value=i)])
        broken = [log.records[0], replace(log.records[1], seq=5)]
        with pytest.raises(CorruptLog, match="sequence gap"):
            replay_events(broken)

    def test_tampered_snapshot_detected(self):
        log = EventLog()
        log.append("settings", {}, [self._set("settings", "k", value=1)])
        forged = [replace(log.records[0], state={"settings": {"k": 2}})]
        with pytest.raises(CorruptLog, match="snapshot mismatch"):
            replay_events(forged)

    def test_malformed_file_detected(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("this is not json\n")
        with pytest.raises(CorruptLog, match="not valid JSON"):
            replay_events(bad)
        bad.write_text('{"seq": 1, "kind": "settings"}\n')
        with pytest.raises(CorruptLog, match="missing fields"):
            replay_events(bad)

    def test_disk_mirror_matches_memory(self, tmp_path):
        path = tmp_path / "mirror.jsonl"
        log = EventLog(path)
        log.append("decision", {"verdict": "approve"}, [])
        log.append("decision", {"verdict": "rollback"}, [])
        assert path.read_text() == log.to_jsonl()

    def test_since_cursor(self):
        log = EventLog()
        for i in range(4):
            log.append("settings", {"i": i}, [])
        assert [r.seq for r in log.since(2)] == [3, 4]
        assert log.since(4) == []


class TestControlPlane:
    def test_provision_and_decide(self, mesh5):
        plane = ControlPlane(mesh5, seed=0)
        outcome = plane.provision("U1", "U2")
        sid = outcome.session_id
        view = plane.session_view(sid)
        assert view["state"] == "PendingApproval"
        assert view["pending"] is True
        assert view["route_id"] == "U1/P1/P2/U2"
        decided = plane.decide(sid, "approve", "ok")
        assert decided["state"] == "Committed"
        assert decided["channel_index"] == 0
        assert [r.kind for r in plane.events.records] == ["session", "decision"]
        assert plane.events.state == plane.snapshot_state()
        with pytest.raises(NotPending):
            plane.decide(sid, "approve")
        with pytest.raises(UnknownTarget):
            plane.decide("sess-9999", "approve")

    def test_auto_approve_commits_in_one_event(self, mesh5):
        plane = ControlPlane(mesh5, seed=0)
        outcome = plane.provision("U1", "U2", auto_approve=True)
        assert plane.session_view(outcome.session_id)["state"] == "Committed"
        assert plane.events.state["occupancy"]["c-p1-p2"] == [0]
        assert plane.sessions_by_state("pending") == []

    def test_fault_lifecycle(self, fourspan_topology):
        plane = ControlPlane(fourspan_topology, seed=0)
        fid = plane.inject_fault(
            {"link_id": "line-p1-p2", "kind": "step_loss",
             "magnitude_db": 2.0, "distance_km": 160.0}
        )
        assert fid == "fault-0001"
        assert fid in plane.events.state["faults"]
        plane.clear_fault(fid)
        assert plane.events.state["faults"] == {}
        with pytest.raises(UnknownFault):
            plane.clear_fault(fid)
        with pytest.raises(UnknownTarget):
            plane.inject_fault(
                {"link_id": "nope", "kind": "step_loss", "magnitude_db": 2.0,
                 "distance_km": 1.0}
            )
        with pytest.raises(ValidationError):
            plane.inject_fault({"kind": "step_loss", "magnitude_db": 2.0})

    def test_observation_endpoints(self, fourspan_topology):
        plane = ControlPlane(fourspan_topology, seed=0)
        profile = plane.profile("line-p1-p2")
        assert profile.samples[0] == (0.0, 0.0)
        result = plane.link_gsnr("line-p1-p2")
        assert len(result.gsnr_db) == 8
        rtt = plane.measure_roundtrip("line-p1-p2")
        assert span_length_from_rtt(rtt) == pytest.approx(320.0, abs=1e-9)

    def test_calibrate_then_optimize(self, fourspan_topology):
        plane = ControlPlane(fourspan_topology, seed=0)
        cid, result = plane.calibrate("line-p1-p2")
        assert cid == "cal-0001"
        assert list(result.edfa_ids) == ["E1", "E2", "E3", "E4"]
        for nf in result.nf_db:
            assert nf == pytest.approx(5.0, abs=1e-6)
        oid, setting = plane.optimize("line-p1-p2", calibration_id=cid)
        assert oid == "opt-0001"
        applied = plane.twins["line-p1-p2"].settings()
        for eid, gain, tilt in setting.settings:
            assert applied[eid] == (gain, tilt)
        kinds = [r.kind for r in plane.events.records]
        assert kinds == ["calibration", "settings"]
        with pytest.raises(UnknownTarget):
            plane.optimize("line-p1-p2", calibration_id="cal-9999")

    def test_same_seed_same_log(self, mesh5):
        def drive(plane):
            plane.provision("U1", "U2", auto_approve=True)
            fid = plane.inject_fault(
                {"link_id": "c-p1-p2", "kind": "step_loss",
                 "magnitude_db": 2.0, "distance_km": 40.0}
            )
            plane.clear_fault(fid)
            return plane.events.to_jsonl()

        assert drive(ControlPlane(mesh5, seed=5)) == drive(ControlPlane(mesh5, seed=5))


class TestHttpApi:
    @pytest.fixture()
    def client(self, mesh5):
        plane = ControlPlane(mesh5, seed=0)
        return TestClient(create_app(plane))

    def test_topology_document(self, client, mesh5):
        r = client.get("/topology")
        assert r.status_code == 200
        assert r.json() == serialize_topology(mesh5)

    def test_session_lifecycle(self, client):
        r = client.post("/sessions", json={"site_a": "U1", "site_b": "U2"})
        assert r.status_code == 201
        sid = r.json()["session_id"]
        assert r.json()["state"] == "PendingApproval"

        listing = client.get("/sessions").json()["sessions"]
        assert [v["session_id"] for v in listing] == [sid]
        assert client.get("/sessions", params={"state": "pending"}).json()["sessions"]

        detail = client.get(f"/sessions/{sid}").json()
        assert detail["state"] == "PendingApproval"
        assert [e["kind"] for e in detail["log"]][:2] == ["RegisterTrx", "AuthResult"]

        r = client.post(f"/sessions/{sid}/decision",
                        json={"verdict": "approve", "reason": "go"})
        assert r.status_code == 200
        assert r.json()["state"] == "Committed"

        assert client.post(f"/sessions/{sid}/decision",
                           json={"verdict": "approve"}).status_code == 409
        assert client.get("/sessions/sess-9999").status_code == 404
        assert client.post("/sessions/sess-9999/decision",
                           json={"verdict": "approve"}).status_code == 404

    def test_session_error_mapping(self, client):
        r = client.post("/sessions", json={"site_a": "U1", "site_b": "U9"})
        assert r.status_code == 404
        assert r.json()["detail"]["error"] == "UnknownSite"
        r = client.post("/sessions", json={"site_a": "U1", "site_b": "U1"})
        assert r.status_code == 400
        assert r.json()["detail"]["error"] == "ValidationError"

    def test_profile_and_gsnr(self, client):
        r = client.get("/links/c-p1-p2/profile", params={"resolution_km": 1.0})
        assert r.status_code == 200
        body = r.json()
        assert body["header"] == ["distance_km", "relative_power_db"]
        assert body["rows"][0] == [0.0, 0.0]
        assert len(body["rows"]) == 81
        r = client.get("/links/c-p1-p2/gsnr")
        assert len(r.json()["gsnr_db"]) == 8
        assert r.json()["per_edfa_gsnr_db"][0]["edfa_id"] == "amp-p1-p2"
        assert client.get("/links/nope/profile").status_code == 404

    def test_fault_endpoints(self, client):
        r = client.post("/faults", json={
            "link_id": "c-p1-p2", "kind": "step_loss",
            "magnitude_db": 2.0, "distance_km": 40.0,
        })
        assert r.status_code == 201
        fid = r.json()["fault_id"]
        assert client.delete(f"/faults/{fid}").json()["cleared"] is True
        assert client.delete(f"/faults/{fid}").status_code == 404
        r = client.post("/faults", json={
            "link_id": "c-p1-p2", "kind": "gremlin", "magnitude_db": 2.0,
        })
        assert r.status_code == 400

    def test_chaos_can_be_disabled(self, mesh5):
        plane = ControlPlane(mesh5, seed=0)
        safe = TestClient(create_app(plane, chaos=False))
        r = safe.post("/faults", json={
            "link_id": "c-p1-p2", "kind": "step_loss",
            "magnitude_db": 2.0, "distance_km": 40.0,
        })
        assert r.status_code == 404
        assert r.json()["detail"]["error"] == "ChaosDisabled"
        # read-only endpoints still work
        assert safe.get("/links/c-p1-p2/gsnr").status_code == 200

    def test_calibration_and_optimization_endpoints(self, client):
        r = client.post("/calibrations", json={"link_id": "c-p1-p2"})
        assert r.status_code == 201
        cid = r.json()["calibration_id"]
        assert r.json()["edfa_ids"] == ["amp-p1-p2"]
        assert client.get(f"/calibrations/{cid}").json()["nf_db"][0] == pytest.approx(
            5.0, abs=1e-6
        )
        assert client.get("/calibrations/cal-9999").status_code == 404
        r = client.post("/optimizations",
                        json={"link_id": "c-p1-p2", "calibration_id": cid})
        assert r.status_code == 201
        assert r.json()["optimization_id"] == "opt-0001"
        assert len(r.json()["settings"]) == 1

    def test_event_cursor(self, client):
        client.post("/sessions",
                    json={"site_a": "U1", "site_b": "U2",
                          "policy": {"auto_approve": True}})
        first = client.get("/events").json()
        assert [e["kind"] for e in first["events"]] == ["session"]
        cursor = first["cursor"]
        assert cursor == 1
        again = client.get("/events", params={"since": cursor}).json()
        assert again["events"] == []
        assert again["cursor"] == cursor


class TestPlots:
    def test_unknown_kind_rejected(self, mesh5, tmp_path):
        plane = ControlPlane(mesh5, seed=0)
        with pytest.raises(ValidationError):
            emit_plot_data(plane, "pie", "c-p1-p2", tmp_path / "x.csv")

    def test_osnr_hist_needs_calibration(self, mesh5, tmp_path):
        plane = ControlPlane(mesh5, seed=0)
        with pytest.raises(UnknownTarget):
            emit_plot_data(plane, "osnr_error_hist", "cal-0001", tmp_path / "x.csv")

    def test_q_vs_power_has_a_peak(self, fourspan_topology, tmp_path):
        plane = ControlPlane(fourspan_topology, seed=0)
        path = emit_plot_data(plane, "q_vs_power", "line-p1-p2", tmp_path / "q.csv")
        rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
        qs = [float(v) for _, v in rows]
        best = qs.index(max(qs))
        assert 0 < best < len(qs) - 1  # ASE-limited below, NLI-limited above

    def test_profile_table(self, fourspan_topology, tmp_path):
        plane = ControlPlane(fourspan_topology, seed=0)
        path = emit_plot_data(plane, "profile", "line-p1-p2", tmp_path / "p.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "distance_km,power_db"
        assert len(lines) == 642


class TestScenarioRunner:
    def test_walkthrough_summary(self, scenario_out):
        summary, out = scenario_out
        assert summary["name"] == "loss-localization-fourspan"
        assert summary["seed"] == 7
        assert len(summary["steps"]) == 16
        located = summary["steps"][3]["result"]["events"][0]
        assert located["distance_km"] == pytest.approx(160.0, abs=1.0)
        assert located["magnitude_db"] == pytest.approx(2.0, abs=0.3)
        assert summary["steps"][14]["result"]["state"] == "Committed"

    def test_walkthrough_artifacts(self, scenario_out):
        _, out = scenario_out
        for name in (
            "events.jsonl",
            "summary.json",
            "profile.csv",
            "q_vs_power.csv",
            "osnr_error_hist.csv",
            "accumulated_gsnr.csv",
        ):
            assert (out / name).exists(), name
        assert replay_events(out / "events.jsonl")  # log is internally consistent
        on_disk = json.loads((out / "summary.json").read_text())
        assert on_disk["name"] == "loss-localization-fourspan"

    def test_seed_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DCX_SEED", "99")
        summary = run_scenario(SCENARIO_DIR / "loss_localization.yaml", tmp_path)
        assert summary["seed"] == 99

    def test_failing_assert_stops_the_run(self, tmp_path):
        scenario = tmp_path / "bad.yaml"
        scenario.write_text(
            f"""\
name: failing
topology: {DATA_DIR / "fourspan.yaml"}
seed: 1
steps:
  - snapshot_profile: {{name: base, link_id: line-p1-p2}}
  - assert: {{path: steps.0.result.samples, equals: 1}}
"""
        )
        with pytest.raises(StepFailure, match="assertion failed"):
            run_scenario(scenario, tmp_path / "out")

    def test_loader_rejects_malformed_steps(self, tmp_path):
        scenario = tmp_path / "bad.yaml"
        scenario.write_text(
            "name: x\ntopology: t.yaml\nseed: 1\nsteps:\n  - dance: {}\n"
        )
        with pytest.raises(ValidationError, match="unknown verb"):
            load_scenario(scenario)


class TestCli:
    def test_provision_command(self):
        runner = CliRunner()
        result = runner.invoke(cli_main, [
            "provision", "U1", "U2",
            "--topology", str(DATA_DIR / "mesh5.yaml"), "--auto-approve",
        ])
        assert result.exit_code == 0, result.output
        view = json.loads(result.output)
        assert view["state"] == "Committed"
        assert view["mode_id"] == "A-400-16Q"

    def test_provision_unknown_site_fails_cleanly(self):
        runner = CliRunner()
        result = runner.invoke(cli_main, [
            "provision", "U1", "U9", "--topology", str(DATA_DIR / "mesh5.yaml"),
        ])
        assert result.exit_code != 0
        assert "UnknownSite" in result.output

    def test_run_scenario_command(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(cli_main, [
            "run-scenario", str(SCENARIO_DIR / "loss_localization.yaml"),
            "--out", str(tmp_path / "out"),
        ], env={"DCX_SEED": None})
        assert result.exit_code == 0, result.output
        assert json.loads(result.output.splitlines()[-1]) == {
            "name": "loss-localization-fourspan", "steps": 16,
        }
        assert (tmp_path / "out" / "events.jsonl").exists()

    def test_plot_command(self, tmp_path):
        runner = CliRunner()
        out = tmp_path / "profile.csv"
        result = runner.invoke(cli_main, [
            "plot", "profile", "c-p1-p2", "--out", str(out),
            "--topology", str(DATA_DIR / "mesh5.yaml"),
        ])
        assert result.exit_code == 0, result.output
        assert out.read_text().startswith("distance_km,power_db")

    def test_replay_command(self, scenario_out, tmp_path):
        _, out = scenario_out
        runner = CliRunner()
        result = runner.invoke(cli_main, ["replay", str(out / "events.jsonl")])
        assert result.exit_code == 0, result.output
        state = json.loads(result.output)
        assert state["faults"] == {}  # the walkthrough clears its fault

        lines = (out / "events.jsonl").read_text().splitlines()
        corrupt = tmp_path / "corrupt.jsonl"
        corrupt.write_text("\n".join([lines[0]] + lines[2:]) + "\n")
        result = runner.invoke(cli_main, ["replay", str(corrupt)])
        assert result.exit_code != 0
        assert "CorruptLog" in result.output
