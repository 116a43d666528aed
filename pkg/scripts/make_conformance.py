#!/usr/bin/env python3
"""Regenerate the shared conformance vectors under conformance/.

The wire vectors pin the binary envelope layout for every decoder in the
repo (server and browser console); the ramp oracle freezes the occlusion
boundary the server pipeline produces for known plane depths, so console
logic can be verified against real server output. Deterministic by
construction: fixed seeds, no image codecs in payload generation.
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from arbench import pointcloud, server, simulator, wire  # noqa: E402
from arbench.core import Pose  # noqa: E402

RAMP_W, RAMP_H = 64, 48
PLANE_DEPTHS = (0.95, 0.75, 1.3)


def valid_vectors():
    rng = np.random.default_rng(20240811)

    def blob(n):
        return rng.integers(0, 256, size=n, dtype=np.uint16).astype(np.uint8).tobytes()

    manifest_header = {
        "session_id": "conformance",
        "intrinsics": {"fx": 64.0, "fy": 64.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48},
        "target_resolution": [64, 48],
        "depth_resolution": [64, 48],
        "objects": [
            {
                "object_id": "marker",
                "mesh_ref": "assets/cube.obj",
                "pose": Pose.identity().to_flat(),
                "scale": 0.3,
                "base_color": [0.9, 0.3, 0.2],
            },
            {
                "object_id": "occluder",
                "mesh_ref": "plane",
                "pose": Pose.identity().to_flat(),
                "scale": 1.0,
                "base_color": [0.0, 0.0, 0.0],
            },
        ],
        "created_at": "2024-08-11T00:00:00+00:00",
    }
    frame_header = {
        "index": 7,
        "timestamp_ns": 1_000_233_331_231,
        "pose": [1.0, 0.0, 0.0, 0.25, 0.0, 1.0, 0.0, -0.5, 0.0, 0.0, 1.0, 1.5, 0.0, 0.0, 0.0, 1.0],
    }
    one_point = pointcloud.ColoredPointSet(
        points=np.array([[0.0, 0.0, -2.0]], dtype=np.float32),
        colors=np.array([[255, 128, 64]], dtype=np.uint8),
    )
    cases = [
        ("end-minimal", wire.MessageType.END, {}, []),
        ("ack-init", wire.MessageType.ACK, {"session_id": "demo", "ack": "init"}, []),
        ("ack-frame", wire.MessageType.ACK,
         {"session_id": "demo", "ack": "frame", "frame_index": 41}, []),
        ("init-manifest", wire.MessageType.INIT, manifest_header, []),
        ("frame-8x4", wire.MessageType.FRAME, frame_header, [blob(96), blob(64)]),
        ("composite-occlusion", wire.MessageType.COMPOSITE,
         {"session_id": "demo", "frame_index": 3, "model_id": "x2", "task": "occlusion_plane"},
         [blob(120)]),
        ("composite-error-slot", wire.MessageType.COMPOSITE,
         {"session_id": "demo", "frame_index": 3, "model_id": "down", "task": "occlusion_plane",
          "error": "ModelTimeout"}, []),
        ("control-plane-depth", wire.MessageType.CONTROL,
         wire.set_plane_depth("demo", 0.95).to_header(), []),
        ("control-object-pose", wire.MessageType.CONTROL,
         wire.set_object_pose("demo", "marker", Pose.identity(), 0.5).to_header(), []),
        ("control-select-models", wire.MessageType.CONTROL,
         wire.select_models("demo", ["x2", "sensor-passthrough"]).to_header(), []),
        ("control-replay-seek", wire.MessageType.CONTROL,
         wire.replay_seek("demo", 10).to_header(), []),
        ("control-replay-mode", wire.MessageType.CONTROL,
         wire.replay_mode("demo", "frame_by_frame", 12.5).to_header(), []),
        ("pointcloud-single", wire.MessageType.POINTCLOUD,
         {"session_id": "demo", "frame_index": 0, "model_id": "sensor-passthrough",
          "task": "point_cloud"},
         [pointcloud.encode_pcd(one_point)]),
        ("error-unicode", wire.MessageType.ERROR,
         {"code": "ModelTimeout", "message": "dépassé ⏱"}, []),
        ("multi-payload", wire.MessageType.ACK,
         {"n": 3}, [b"", blob(1), blob(300)]),
    ]
    out = []
    for name, msg_type, header, payloads in cases:
        encoded = wire.encode(msg_type, header, payloads)
        decoded_type, decoded_header, decoded_payloads = wire.decode(encoded)
        assert decoded_type == msg_type and decoded_header == header
        out.append(
            {
                "name": name,
                "bytes_hex": encoded.hex(),
                "msg_type": int(msg_type),
                "header": header,
                "payloads_hex": [p.hex() for p in decoded_payloads],
            }
        )
    return out


def invalid_vectors():
    end = wire.encode(wire.MessageType.END, {})
    bad_version = bytearray(end)
    bad_version[4] = 2
    unknown_type = bytearray(end)
    unknown_type[5] = 0x7F
    raw = b"not json"
    malformed = b"ARCD" + bytes([1, 3]) + len(raw).to_bytes(4, "little") + raw + bytes([0])
    cases = [
        ("bad-magic", b"XXXX" + end[4:], "BadMagic"),
        ("bad-version", bytes(bad_version), "UnsupportedVersion"),
        ("unknown-type", bytes(unknown_type), "UnknownMessageType"),
        ("truncated-header", end[:8], "Truncated"),
        ("trailing-bytes", end + b"\x00", "TrailingBytes"),
        ("malformed-header", malformed, "MalformedHeader"),
    ]
    out = []
    for name, payload, error in cases:
        try:
            wire.decode(payload)
            raise AssertionError(f"{name} unexpectedly decoded")
        except wire.WireError as exc:
            assert exc.code == error, f"{name}: {exc.code} != {error}"
        out.append({"name": name, "bytes_hex": payload.hex(), "error": error})
    return out


def ramp_oracle():
    """Run the real pipeline on the ramp scene at several plane depths and
    freeze the resulting occlusion boundaries."""
    with tempfile.TemporaryDirectory() as td:
        orch = server.Orchestrator(server.Config(storage_root=td))
        sid = simulator.generate_synthetic(td, "ramp", 1, resolution=(RAMP_W, RAMP_H))
        frame = orch.store.load_frame(sid, 0)
        row_depth_mm = [int(v) for v in frame.depth.values[:, 0]]
        cases = []
        for depth_m in PLANE_DEPTHS + (1.0,):
            rt = orch.open_replay(sid)
            rt.state.plane_depth_m = depth_m
            envelopes = orch.apply_control(wire.replay_seek(sid, 0))
            _, header, payloads = wire.decode(envelopes[0])
            composite = wire.decode_png(payloads[0])
            black_rows = np.all(composite.values == 0, axis=(1, 2))
            first = int(np.argmax(black_rows)) if black_rows.any() else -1
            cases.append(
                {
                    "plane_depth_m": depth_m,
                    "first_plane_row": first,
                    "plane_rows": [bool(b) for b in black_rows],
                    "control_hex": wire.encode(
                        wire.MessageType.CONTROL, wire.set_plane_depth(sid, depth_m).to_header()
                    ).hex(),
                }
            )
            orch.close_replay(sid)
        orch.close()
    return {
        "session_id": sid,
        "width": RAMP_W,
        "height": RAMP_H,
        "row_depth_mm": row_depth_mm,
        "cases": cases,
    }


def main():
    out_dir = REPO / "conformance"
    out_dir.mkdir(exist_ok=True)
    wire_doc = {"valid": valid_vectors(), "invalid": invalid_vectors()}
    (out_dir / "wire_vectors.json").write_text(json.dumps(wire_doc, indent=1) + "\n")
    (out_dir / "ramp_oracle.json").write_text(json.dumps(ramp_oracle(), indent=1) + "\n")
    print(f"wrote {out_dir / 'wire_vectors.json'}")
    print(f"wrote {out_dir / 'ramp_oracle.json'}")


if __name__ == "__main__":
    main()
