import json

import pytest
from fastapi.testclient import TestClient

from arbench import pointcloud, server, simulator, wire
from arbench.api import create_app
from arbench.core import DepthMap, Frame

from conftest import make_frame, make_manifest, ramp_depth_mm


@pytest.fixture
def orch(tmp_path):
    o = server.Orchestrator(server.Config(storage_root=str(tmp_path / "sessions")))
    yield o
    o.close()


@pytest.fixture
def client(orch):
    with TestClient(create_app(orch)) as c:
        yield c


def ramp_frame(index=0, width=64, height=48):
    f = make_frame(index, width=width, height=height)
    return Frame(f.index, f.timestamp_ns, f.rgb, DepthMap(ramp_depth_mm(width, height)), f.pose)


class TestRest:
    def test_health(self, client):
        assert client.get("/health").json() == {"status": "ok"}

    def test_create_and_list_sessions(self, client):
        resp = client.post("/sessions", json=make_manifest("s1").to_json_dict())
        assert resp.status_code == 201
        listing = client.get("/sessions").json()
        assert listing == [{"session_id": "s1", "frame_count": 0}]

    def test_duplicate_session_409(self, client):
        body = make_manifest("s1").to_json_dict()
        client.post("/sessions", json=body)
        resp = client.post("/sessions", json=body)
        assert resp.status_code == 409
        assert resp.json()["code"] == "DuplicateSession"

    def test_invalid_manifest_400(self, client):
        body = make_manifest("s1").to_json_dict()
        body["intrinsics"]["fx"] = 0
        resp = client.post("/sessions", json=body)
        assert resp.status_code == 400
        assert "intrinsics.fx" in resp.json()["message"]

    def test_unknown_session_404(self, client):
        resp = client.get("/sessions/ghost/frames/0")
        assert resp.status_code == 404
        assert resp.json()["code"] == "NoSuchSession"

    def test_frame_round_trip_base64(self, orch, client):
        rt = orch.handle_init(make_manifest("s1"))
        frame = ramp_frame()
        orch.ingest_frame(rt, frame)
        orch.end_session("s1")
        doc = client.get("/sessions/s1/frames/0").json()
        rgb_png = wire.decode_rest_image(doc["rgb_png"])
        depth_raw = wire.decode_rest_image(doc["depth_raw16"])
        stored_png, stored_depth = wire.encode_frame_payloads(orch.store.load_frame("s1", 0))
        assert rgb_png == stored_png
        assert depth_raw == stored_depth
        assert doc["pose"] == frame.pose.to_flat()

    def test_register_model_and_duplicate(self, client):
        body = {"model_id": "x2", "task_kind": "depth", "backend": "builtin",
                "builtin_name": "scale", "params": {"k": 2.0}}
        assert client.post("/models", json=body).status_code == 201
        resp = client.post("/models", json=body)
        assert resp.status_code == 409
        assert resp.json()["code"] == "DuplicateModel"
        assert "x2" in client.get("/models").json()["model_ids"]

    def test_register_protocol_validates(self, client):
        resp = client.post(
            "/protocols",
            json={"protocol_id": "p", "entries": [
                {"model_id": "nope", "task": "occlusion_plane", "metric_ids": []}
            ]},
        )
        assert resp.status_code == 400
        assert resp.json()["code"] == "InvalidProtocol"

    def test_metrics_endpoint_jsonl(self, orch, client, tmp_path):
        sid = simulator.generate_synthetic(tmp_path / "sessions", "ramp", 2, resolution=(32, 24))
        orch.replay(sid)
        text = client.get(f"/sessions/{sid}/metrics", params={"model": "sensor-passthrough"}).text
        rows = [json.loads(line) for line in text.splitlines()]
        assert {r["metric_id"] for r in rows} == {"rmse", "absrel"}

    def test_pointcloud_endpoint(self, orch, client, tmp_path):
        sid = simulator.generate_synthetic(tmp_path / "sessions", "ramp", 1, resolution=(32, 24))
        resp = client.get(f"/sessions/{sid}/pointcloud/0", params={"stride": 2})
        assert resp.status_code == 200
        cloud = pointcloud.decode_pcd(resp.content)
        assert len(cloud) == 16 * 12

    def test_replay_endpoint_wait(self, orch, client, tmp_path):
        sid = simulator.generate_synthetic(tmp_path / "sessions", "ramp", 3, resolution=(32, 24))
        resp = client.post(f"/sessions/{sid}/replay", json={"wait": True})
        assert resp.status_code == 200
        assert resp.json() == {"status": "done", "envelopes": 3}

    def test_metrics_without_model_concatenates(self, orch, client, tmp_path):
        sid = simulator.generate_synthetic(tmp_path / "sessions", "ramp", 2, resolution=(32, 24))
        orch.replay(sid)
        text = client.get(f"/sessions/{sid}/metrics").text
        assert len(text.splitlines()) == 4  # 2 frames x (rmse, absrel)

    def test_frontend_static_mount(self, orch, tmp_path):
        static_dir = tmp_path / "console"
        static_dir.mkdir()
        (static_dir / "index.html").write_text("<html><body>console</body></html>")
        with TestClient(create_app(orch, frontend_dir=static_dir)) as c:
            resp = c.get("/")
            assert resp.status_code == 200
            assert "console" in resp.text
            # API routes still take precedence over the static mount
            assert c.get("/health").json() == {"status": "ok"}


class TestWebSocket:
    def test_init_frame_ack_composite(self, orch, client):
        manifest = make_manifest("ws1", width=32, height=24)
        with client.websocket_connect("/stream/ws1") as ws:
            ws.send_bytes(wire.encode(wire.MessageType.INIT, manifest.to_json_dict()))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert msg_type == wire.MessageType.ACK and header["ack"] == "init"

            ws.send_bytes(wire.encode_frame(ramp_frame(0, 32, 24)))
            seen = {"ack": 0, "composite": 0}
            for _ in range(2):
                msg_type, header, payloads = wire.decode(ws.receive_bytes())
                if msg_type == wire.MessageType.ACK:
                    assert header["frame_index"] == 0
                    seen["ack"] += 1
                elif msg_type == wire.MessageType.COMPOSITE:
                    assert header["frame_index"] == 0
                    assert wire.decode_png(payloads[0]).width == 32
                    seen["composite"] += 1
            assert seen == {"ack": 1, "composite": 1}

            ws.send_bytes(wire.encode(wire.MessageType.END, {}))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert header["ack"] == "end"
        assert orch.store.frame_count("ws1") == 1

    def test_init_with_bad_manifest_error_envelope(self, client):
        manifest = make_manifest("ws2").to_json_dict()
        manifest["intrinsics"]["fx"] = 0
        with client.websocket_connect("/stream/ws2") as ws:
            ws.send_bytes(wire.encode(wire.MessageType.INIT, manifest))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert msg_type == wire.MessageType.ERROR
            assert header["code"] == "InvalidManifest"
            assert "intrinsics.fx" in header["message"]

    def test_duplicate_init_error(self, orch, client):
        manifest = make_manifest("ws3")
        orch.handle_init(manifest)
        with client.websocket_connect("/stream/ws3") as ws:
            ws.send_bytes(wire.encode(wire.MessageType.INIT, manifest.to_json_dict()))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert msg_type == wire.MessageType.ERROR
            assert header["code"] == "DuplicateSession"

    def test_frame_without_init_error(self, client):
        with client.websocket_connect("/stream/nosuch") as ws:
            ws.send_bytes(wire.encode_frame(ramp_frame(0, 32, 24)))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert msg_type == wire.MessageType.ERROR

    def test_control_ack_and_effect(self, orch, client):
        manifest = make_manifest("ws4", width=32, height=24)
        orch.handle_init(manifest)
        with client.websocket_connect("/stream/ws4") as ws:
            cmd = wire.set_plane_depth("ws4", 0.75)
            ws.send_bytes(wire.encode(wire.MessageType.CONTROL, cmd.to_header()))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert msg_type == wire.MessageType.ACK
            assert header["command"]["depth_m"] == 0.75
        assert orch.runtimes["ws4"].state.plane_depth_m == 0.75

    def test_control_rejection_error_envelope(self, orch, client):
        orch.handle_init(make_manifest("ws5"))
        with client.websocket_connect("/stream/ws5") as ws:
            cmd = wire.ControlCommand("set_plane_depth", "ws5", {"depth_m": -2.0})
            ws.send_bytes(wire.encode(wire.MessageType.CONTROL, cmd.to_header()))
            msg_type, header, _ = wire.decode(ws.receive_bytes())
            assert msg_type == wire.MessageType.ERROR
            assert header["code"] == "NonpositiveDepth"

    def test_viewer_receives_replay_seek_frames(self, orch, client, tmp_path):
        sid = simulator.generate_synthetic(tmp_path / "sessions", "ramp", 4, resolution=(32, 24))
        client.post(f"/sessions/{sid}/replay", json={"mode": "frame_by_frame"})
        with client.websocket_connect(f"/stream/{sid}") as ws:
            ws.send_bytes(
                wire.encode(wire.MessageType.CONTROL, wire.replay_seek(sid, 2).to_header())
            )
            got_composite = False
            for _ in range(2):
                msg_type, header, payloads = wire.decode(ws.receive_bytes())
                if msg_type == wire.MessageType.COMPOSITE:
                    assert header["frame_index"] == 2
                    got_composite = True
            assert got_composite
