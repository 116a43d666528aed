"""REST and WebSocket surface over the orchestrator.

Request/response endpoints speak JSON with Base64 image payloads; the
/stream/{id} WebSocket carries binary envelopes in both directions
(INIT/FRAME/CONTROL/END inbound, ACK/COMPOSITE/POINTCLOUD/ERROR outbound).
Every WebSocket connection is also a subscriber to its session's composite
stream, with per-viewer drop-on-slow.
"""

from __future__ import annotations

import asyncio
import queue
import threading

from fastapi import FastAPI, Query, Request, Response, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from . import gateway, pointcloud, render, wire
from .core import ArbenchError, ExperimentProtocol, SessionManifest
from .server import Orchestrator

_STATUS_BY_CODE = {
    "NoSuchSession": 404,
    "NoSuchFrame": 404,
    "NoSuchResult": 404,
    "NoSuchModel": 404,
    "NoSuchProtocol": 404,
    "DuplicateSession": 409,
    "DuplicateModel": 409,
    "InvalidManifest": 400,
    "BadDescriptor": 400,
    "InvalidProtocol": 400,
    "InvalidCommand": 400,
    "NonpositiveDepth": 400,
    "SeekOutOfRange": 400,
    "NotReplaying": 400,
    "EmptySession": 400,
    "OutOfOrderFrame": 409,
    "ModelTimeout": 504,
    "ModelError": 502,
    "SchemaMismatch": 502,
}


def _http_status(exc: ArbenchError) -> int:
    return _STATUS_BY_CODE.get(exc.code, 500)


def create_app(orch: Orchestrator, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="arbench", docs_url=None, redoc_url=None)

    @app.exception_handler(ArbenchError)
    async def arbench_error(request: Request, exc: ArbenchError):
        return JSONResponse(
            status_code=_http_status(exc), content={"code": exc.code, "message": str(exc)}
        )

    @app.get("/health")
    def health():
        return {"status": "ok"}

    # -- sessions ---------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        manifest = SessionManifest.from_json_dict(body.get("manifest", body))
        protocol_id = body.get("protocol_id", "default")
        orch.handle_init(manifest, protocol_id=protocol_id)
        return {"session_id": manifest.session_id}

    @app.get("/sessions")
    def list_sessions():
        return [
            {"session_id": sid, "frame_count": orch.store.frame_count(sid)}
            for sid in orch.store.session_ids()
        ]

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        manifest = orch.store.manifest(session_id)
        return {
            "manifest": manifest.to_json_dict(),
            "frame_count": orch.store.frame_count(session_id),
        }

    @app.get("/sessions/{session_id}/frames/{index}")
    def get_frame(session_id: str, index: int):
        frame = orch.store.load_frame(session_id, index)
        rgb_png, depth_raw = wire.encode_frame_payloads(frame)
        return {
            "index": frame.index,
            "timestamp_ns": frame.timestamp_ns,
            "pose": frame.pose.to_flat(),
            "rgb_png": wire.encode_rest_image(rgb_png),
            "depth_raw16": wire.encode_rest_image(depth_raw),
            "depth_width": frame.depth.width,
            "depth_height": frame.depth.height,
        }

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str, model: str | None = Query(default=None)):
        if model is not None:
            text = orch.store.read_metrics(session_id, model)
        else:
            text = "".join(
                orch.store.read_metrics(session_id, mid)
                for mid in orch.store.metric_model_ids(session_id)
            )
        return PlainTextResponse(text, media_type="application/jsonl")

    @app.get("/sessions/{session_id}/pointcloud/{index}")
    def get_pointcloud(
        session_id: str,
        index: int,
        stride: int = Query(default=2, ge=1),
        model: str | None = Query(default=None),
    ):
        manifest = orch.store.manifest(session_id)
        frame = orch.store.load_frame(session_id, index)
        depth = frame.depth
        if model is not None:
            depth = orch.registry.infer(model, frame, manifest)
        k_depth = render.scale_intrinsics(manifest.intrinsics, (depth.width, depth.height))
        real = pointcloud.unproject(depth, frame.rgb, k_depth, frame.pose, stride=stride)
        renderer = render.SceneRenderer(
            manifest, base_dir=orch.store.root / session_id,
            asset_dirs=(orch.store.root, render.BUILTIN_ASSET_ROOT),
        )
        layer = renderer.object_layer(frame.pose)
        virtual = pointcloud.virtual_to_points(layer, renderer.k, frame.pose, stride=stride)
        blob = pointcloud.encode_pcd(pointcloud.merge(real, virtual))
        return Response(content=blob, media_type="application/octet-stream")

    @app.post("/sessions/{session_id}/replay")
    def start_replay(session_id: str, body: dict):
        protocol_id = body.get("protocol_id", "default")
        mode = body.get("mode", "video")
        fps = float(body.get("fps", 0.0))
        if mode == "frame_by_frame":
            orch.open_replay(session_id, protocol_id)
            return {"status": "replay_open", "frame_count": orch.store.frame_count(session_id)}
        if body.get("wait", True):
            envelopes = orch.replay(session_id, protocol_id, mode=mode, fps=fps)
            return {"status": "done", "envelopes": len(envelopes)}
        thread = threading.Thread(
            target=orch.replay,
            args=(session_id, protocol_id),
            kwargs={"mode": mode, "fps": fps},
            daemon=True,
        )
        thread.start()
        return JSONResponse(status_code=202, content={"status": "started"})

    # -- models and protocols -----------------------------------------------

    @app.post("/models", status_code=201)
    def register_model(body: dict):
        body = dict(body)
        body.setdefault("timeout_ms", orch.config.default_timeout_ms)
        descriptor = gateway.ModelDescriptor.from_json_dict(body)
        orch.registry.register(descriptor)
        return {"model_id": descriptor.model_id}

    @app.get("/models")
    def list_models():
        return {"model_ids": orch.registry.model_ids()}

    @app.post("/protocols", status_code=201)
    def register_protocol(body: dict):
        protocol = ExperimentProtocol.from_json_dict(body)
        orch.register_protocol(protocol)
        return {"protocol_id": protocol.protocol_id}

    @app.get("/protocols")
    def list_protocols():
        return {"protocol_ids": sorted(orch.protocols)}

    # -- streaming ------------------------------------------------------------

    @app.websocket("/stream/{session_id}")
    async def stream(ws: WebSocket, session_id: str):
        await ws.accept()
        sub = orch.subscribe(session_id)
        loop = asyncio.get_running_loop()

        async def pump():
            while True:
                envelope = await loop.run_in_executor(None, _poll, sub)
                if envelope is not None:
                    await ws.send_bytes(envelope)

        protocol_id = ws.query_params.get("protocol", "default")
        sender = asyncio.create_task(pump())
        try:
            while True:
                data = await ws.receive_bytes()
                replies = await loop.run_in_executor(
                    None, _handle_ws_message, orch, session_id, protocol_id, data
                )
                for envelope in replies:
                    await ws.send_bytes(envelope)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            orch.unsubscribe(session_id, sub)

    if frontend_dir is not None:
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="console")

    return app


def _poll(sub: queue.Queue):
    try:
        return sub.get(timeout=0.2)
    except queue.Empty:
        return None


def _error_envelope(exc: ArbenchError) -> bytes:
    return wire.encode(wire.MessageType.ERROR, {"code": exc.code, "message": str(exc)})


def _handle_ws_message(orch: Orchestrator, session_id, protocol_id, data: bytes):
    """Dispatch one inbound envelope; returns the envelopes to send back."""
    try:
        msg_type, header, payloads = wire.decode(data)
    except wire.WireError as exc:
        return [_error_envelope(exc)]

    try:
        if msg_type == wire.MessageType.INIT:
            manifest = SessionManifest.from_json_dict(header)
            if manifest.session_id != session_id:
                raise wire.InvalidCommand(
                    f"INIT for {manifest.session_id!r} on stream {session_id!r}"
                )
            orch.handle_init(manifest, protocol_id=protocol_id)
            return [wire.encode(wire.MessageType.ACK, {"session_id": session_id, "ack": "init"})]

        if msg_type == wire.MessageType.FRAME:
            runtime = orch.runtimes.get(session_id)
            if runtime is None:
                raise wire.InvalidCommand(f"no live session {session_id!r}; send INIT first")
            if len(payloads) != 2:
                raise wire.MalformedHeader("FRAME requires exactly two payloads")
            orch.ingest_frame_payloads(runtime, header, payloads[0], payloads[1])
            return [
                wire.encode(
                    wire.MessageType.ACK,
                    {"session_id": session_id, "ack": "frame", "frame_index": int(header["index"])},
                )
            ]

        if msg_type == wire.MessageType.CONTROL:
            cmd = wire.ControlCommand.from_header(header)
            orch.apply_control(cmd)
            return [
                wire.encode(
                    wire.MessageType.ACK,
                    {"session_id": session_id, "ack": "control", "command": cmd.to_header()},
                )
            ]

        if msg_type == wire.MessageType.END:
            orch.end_session(session_id)
            return [wire.encode(wire.MessageType.ACK, {"session_id": session_id, "ack": "end"})]

        raise wire.InvalidCommand(f"unexpected client message type {msg_type.name}")
    except ArbenchError as exc:
        return [_error_envelope(exc)]
