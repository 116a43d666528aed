"""Edge orchestrator: per-session pipelines, protocol execution, and replay.

Each live session runs two dedicated workers. The rendering worker drains a
bounded frame queue (drop-oldest, so a slow model sheds load but never
reorders) and performs inference, task rendering, compositing, and metric
computation; the storage worker persists frames, results, composites, and
metric rows on its own thread so disk latency never stalls composite
emission. Replay re-runs stored frames through the identical processing
path, frame by frame or paced as video, and never drops.

Outputs are deterministic: given the same stored session, protocol, and
interactive state, two replays produce byte-identical composites and
metrics files. Interactive-state changes are recorded as per-frame events
so a session can be re-shown identically.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gateway, lighting, metrics, pointcloud, render, wire
from .core import (
    ArbenchError,
    DepthMap,
    EnvironmentMap,
    ExperimentProtocol,
    Frame,
    Pose,
    RgbImage,
    SessionManifest,
    TASKS,
    resize_nearest,
    validate_manifest,
)
from .pfm import decode_pfm, encode_pfm
from .store import NoSuchSession, OutOfOrderFrame, SessionStore

log = logging.getLogger(__name__)

DEFAULT_PLANE_DEPTH_M = 1.0
SUBSCRIBER_QUEUE_SIZE = 32


class OrchestratorError(ArbenchError):
    code = "OrchestratorError"


class InvalidManifest(OrchestratorError):
    code = "InvalidManifest"


class InvalidProtocol(OrchestratorError):
    code = "InvalidProtocol"


class NoSuchProtocol(OrchestratorError):
    code = "NoSuchProtocol"


class EmptySession(OrchestratorError):
    code = "EmptySession"


class SeekOutOfRange(OrchestratorError):
    code = "SeekOutOfRange"


class NotReplaying(OrchestratorError):
    code = "NotReplaying"


@dataclass
class Config:
    bind_address: str = "127.0.0.1:8799"
    storage_root: str = "sessions"
    queue_bound: int = 8
    default_timeout_ms: int = gateway.DEFAULT_TIMEOUT_MS

    @property
    def host(self):
        return self.bind_address.rsplit(":", 1)[0]

    @property
    def port(self):
        return int(self.bind_address.rsplit(":", 1)[1])


def load_config(path=None, env=None) -> Config:
    """Config file (JSON) with environment-variable overrides of the same names."""
    env = os.environ if env is None else env
    doc = {}
    if path:
        doc = json.loads(Path(path).read_text("utf-8"))
    config = Config()
    for name in ("bind_address", "storage_root", "queue_bound", "default_timeout_ms"):
        value = env.get(name, doc.get(name))
        if value is None:
            continue
        if name in ("queue_bound", "default_timeout_ms"):
            value = int(value)
        setattr(config, name, value)
    return config


@dataclass
class InteractiveState:
    """Mutable per-session view state; changes apply from the next frame on."""

    plane_depth_m: float | None = None
    selected_model_ids: list | None = None


@dataclass(frozen=True)
class _FrameView:
    """Interactive state as seen by one frame, immutable for its duration."""

    plane_depth_m: float | None
    selected_model_ids: list | None
    mesh_set: list


class StorageWorker:
    """Single thread executing persistence callables in submission order."""

    def __init__(self, name="storage"):
        self._queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._thread.start()
        self.errors = []

    def _run(self):
        while True:
            job = self._queue.get()
            if job is None:
                self._queue.task_done()
                return
            try:
                job()
            except Exception as exc:  # persistence failures must not kill the pipeline
                log.error("storage job failed: %s", exc)
                self.errors.append(exc)
            finally:
                self._queue.task_done()

    def submit(self, job):
        self._queue.put(job)

    def drain(self):
        self._queue.join()

    def stop(self):
        self._queue.put(None)
        self._thread.join(timeout=10)


class SessionRuntime:
    """Per-session pipeline state shared by live streaming and replay."""

    def __init__(self, manifest, handle, renderer, protocol, queue_bound, mode="live"):
        self.manifest = manifest
        self.handle = handle
        self.renderer = renderer
        self.protocol = protocol
        self.mode = mode
        self.state = InteractiveState()
        self.storage = StorageWorker(name=f"storage-{manifest.session_id}")
        self.prev_pred = {}  # model_id -> last DepthMap, for temporal pairs
        self.ingest_count = handle.frame_count
        self.last_ingest_ts = handle.last_ts
        self.lock = threading.Lock()
        self.closed = False
        # Live processing queue: bounded, drop-oldest.
        self.frames = deque(maxlen=queue_bound)
        self.wakeup = threading.Condition()
        self.render_thread = None
        # Frame-by-frame replay position.
        self.position = 0
        self.fps = 30.0

    def push_frame(self, frame):
        with self.wakeup:
            self.frames.append(frame)  # deque(maxlen) drops the oldest itself
            self.wakeup.notify()

    def pull_frame(self):
        with self.wakeup:
            while not self.frames and not self.closed:
                self.wakeup.wait(timeout=0.25)
            if self.frames:
                return self.frames.popleft()
            return None

    def close(self):
        with self.wakeup:
            self.closed = True
            self.wakeup.notify_all()
        if self.render_thread is not None:
            self.render_thread.join(timeout=10)
        self.storage.drain()
        self.storage.stop()


class Orchestrator:
    """Owns the store, the model registry, protocols, and session runtimes."""

    def __init__(self, config: Config | None = None):
        self.config = config or Config()
        self.store = SessionStore(self.config.storage_root)
        self.registry = gateway.ModelRegistry()
        self.protocols: dict[str, ExperimentProtocol] = {}
        self.runtimes: dict[str, SessionRuntime] = {}
        self.replays: dict[str, SessionRuntime] = {}
        self._subscribers: dict[str, list] = {}
        self._lock = threading.Lock()
        self._bootstrap()

    def _bootstrap(self):
        # The device-depth passthrough and a minimal occlusion protocol are
        # always available so a fresh server can stream and replay out of
        # the box; everything else is registered via the REST surface.
        self.registry.register(
            gateway.builtin_model(
                "sensor-passthrough", "sensor-passthrough",
                timeout_ms=self.config.default_timeout_ms,
            )
        )
        self.register_protocol(
            ExperimentProtocol.from_json_dict(
                {
                    "protocol_id": "default",
                    "entries": [
                        {
                            "model_id": "sensor-passthrough",
                            "task": "occlusion_plane",
                            "task_params": {},
                            "metric_ids": ["rmse", "absrel"],
                        }
                    ],
                }
            )
        )

    # -- registration -------------------------------------------------------

    def register_protocol(self, protocol: ExperimentProtocol):
        if not protocol.entries:
            raise InvalidProtocol("protocol has no entries")
        for e in protocol.entries:
            if e.task not in TASKS:
                raise InvalidProtocol(f"unknown task {e.task!r}")
            if not self.registry.has(e.model_id):
                raise InvalidProtocol(f"model {e.model_id!r} is not registered")
            for mid in e.metric_ids:
                if mid not in metrics.REGISTERED_METRIC_IDS:
                    raise InvalidProtocol(f"unknown metric {mid!r}")
        self.protocols[protocol.protocol_id] = protocol

    def get_protocol(self, protocol_id) -> ExperimentProtocol:
        if protocol_id not in self.protocols:
            raise NoSuchProtocol(protocol_id)
        return self.protocols[protocol_id]

    # -- session lifecycle ----------------------------------------------------

    def handle_init(self, manifest: SessionManifest, protocol_id="default") -> SessionRuntime:
        check = validate_manifest(manifest)
        if not check.ok:
            raise InvalidManifest(check.violation)
        protocol = self.get_protocol(protocol_id)
        handle = self.store.begin_session(manifest)
        renderer = render.SceneRenderer(
            manifest, base_dir=handle.root,
            asset_dirs=(self.store.root, render.BUILTIN_ASSET_ROOT),
        )
        runtime = SessionRuntime(
            manifest, handle, renderer, protocol, self.config.queue_bound, mode="live"
        )
        runtime.render_thread = threading.Thread(
            target=self._render_worker,
            args=(runtime,),
            name=f"render-{manifest.session_id}",
            daemon=True,
        )
        runtime.render_thread.start()
        with self._lock:
            self.runtimes[manifest.session_id] = runtime
        return runtime

    def ingest_frame(self, runtime: SessionRuntime, frame: Frame):
        """Accept one in-memory frame (tests, embedded use)."""
        rgb_png, depth_raw = wire.encode_frame_payloads(frame)
        self.ingest_frame_payloads(runtime, wire.frame_header(frame), rgb_png, depth_raw)

    def ingest_frame_payloads(self, runtime: SessionRuntime, header: dict, rgb_png: bytes, depth_raw: bytes):
        """Accept one streamed frame as raw wire payloads.

        Persistence gets the bytes verbatim (storage worker), and decoding
        is deferred to the rendering worker, keeping the socket path cheap:
        persist always, process if queue capacity allows.
        """
        index = int(header["index"])
        timestamp_ns = int(header["timestamp_ns"])
        dw, dh = runtime.manifest.depth_resolution
        if len(depth_raw) != dw * dh * 2:
            raise wire.Truncated(
                f"depth payload is {len(depth_raw)} bytes, expected {dw * dh * 2}"
            )
        with runtime.lock:
            expected = runtime.ingest_count
            if index != expected:
                raise OutOfOrderFrame(f"expected frame {expected}, got {index}")
            # Enforced here, synchronously, so the client sees the rejection
            # instead of the storage worker discovering it later.
            if runtime.last_ingest_ts is not None and timestamp_ns <= runtime.last_ingest_ts:
                raise OutOfOrderFrame(
                    f"timestamp {timestamp_ns} does not increase past {runtime.last_ingest_ts}"
                )
            runtime.ingest_count += 1
            runtime.last_ingest_ts = timestamp_ns
        runtime.storage.submit(
            lambda: self.store.append_frame_payloads(runtime.handle, header, rgb_png, depth_raw)
        )
        runtime.push_frame((header, rgb_png, depth_raw))

    def end_session(self, session_id):
        runtime = self.runtimes.pop(session_id, None)
        if runtime is not None:
            runtime.close()

    def close(self):
        for sid in list(self.runtimes):
            self.end_session(sid)
        for sid, rt in list(self.replays.items()):
            rt.close()
            self.replays.pop(sid, None)

    def _render_worker(self, runtime):
        while True:
            item = runtime.pull_frame()
            if item is None:
                return
            try:
                if isinstance(item, Frame):
                    frame = item
                else:
                    header, rgb_png, depth_raw = item
                    frame = wire.decode_frame(
                        header, [rgb_png, depth_raw], runtime.manifest.depth_resolution
                    )
                envelopes = self.process_frame(runtime, frame)
            except ArbenchError as exc:
                envelopes = [
                    wire.encode(
                        wire.MessageType.ERROR,
                        {"code": exc.code, "message": str(exc)},
                    )
                ]
            for env in envelopes:
                self.broadcast(runtime.manifest.session_id, env)

    # -- subscribers -----------------------------------------------------------

    def subscribe(self, session_id):
        q = queue.Queue(maxsize=SUBSCRIBER_QUEUE_SIZE)
        with self._lock:
            self._subscribers.setdefault(session_id, []).append(q)
        return q

    def unsubscribe(self, session_id, q):
        with self._lock:
            subs = self._subscribers.get(session_id, [])
            if q in subs:
                subs.remove(q)

    def broadcast(self, session_id, envelope: bytes):
        with self._lock:
            subs = list(self._subscribers.get(session_id, ()))
        for q in subs:
            try:
                q.put_nowait(envelope)
            except queue.Full:
                try:
                    q.get_nowait()  # drop-on-slow: shed the oldest for this viewer
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(envelope)
                except queue.Full:
                    pass

    # -- frame processing --------------------------------------------------------

    def process_frame(self, runtime: SessionRuntime, frame: Frame):
        """Run every active protocol entry on one frame, in entry order.

        Interactive state is snapshotted once per frame, so a control
        command arriving mid-frame takes effect on the next frame and every
        tile of the current frame sees the same scene. Per-entry model
        failures degrade gracefully: the entry emits an ERROR-tagged
        composite slot and the remaining entries still run.
        """
        snapshot = _FrameView(
            plane_depth_m=runtime.state.plane_depth_m,
            selected_model_ids=runtime.state.selected_model_ids,
            mesh_set=runtime.renderer.mesh_set(),
        )
        envelopes = []
        for entry in runtime.protocol.entries:
            if (
                snapshot.selected_model_ids is not None
                and entry.model_id not in snapshot.selected_model_ids
            ):
                continue
            header = {
                "session_id": runtime.manifest.session_id,
                "frame_index": frame.index,
                "model_id": entry.model_id,
                "task": entry.task,
            }
            try:
                envelopes.extend(self._run_entry(runtime, frame, entry, header, snapshot))
            except ArbenchError as exc:
                envelopes.append(
                    wire.encode(wire.MessageType.COMPOSITE, {**header, "error": exc.code})
                )
        return envelopes

    def _camera_image(self, runtime, frame) -> RgbImage:
        tw, th = runtime.manifest.target_resolution
        if (frame.rgb.width, frame.rgb.height) == (tw, th):
            return frame.rgb
        return RgbImage(resize_nearest(frame.rgb.values, (tw, th)))

    def _plane_depth(self, snapshot, entry):
        if snapshot.plane_depth_m is not None:
            return snapshot.plane_depth_m
        return float(entry.task_params.get("plane_depth_m", DEFAULT_PLANE_DEPTH_M))

    def _depth_result(self, runtime, frame, entry) -> DepthMap:
        result = self.registry.infer(entry.model_id, frame, runtime.manifest)
        if not isinstance(result, DepthMap):
            raise gateway.SchemaMismatch(
                f"task {entry.task} needs a depth model, {entry.model_id} returned an env map"
            )
        return result

    def _env_result(self, runtime, frame, entry) -> EnvironmentMap:
        result = self.registry.infer(entry.model_id, frame, runtime.manifest)
        if not isinstance(result, EnvironmentMap):
            raise gateway.SchemaMismatch(
                f"task {entry.task} needs a lighting model, {entry.model_id} returned depth"
            )
        return result

    def _run_entry(self, runtime, frame, entry, header, snapshot):
        session_id = runtime.manifest.session_id
        task = entry.task
        storage = runtime.storage

        if task in ("occlusion_plane", "object_rendering", "point_cloud"):
            pred = self._depth_result(runtime, frame, entry)
            storage.submit(
                lambda p=pred: self.store.store_result(session_id, entry.model_id, frame.index, p)
            )
            rows = self._depth_metric_rows(runtime, frame, entry, pred)
            if rows:
                storage.submit(
                    lambda r=rows: self.store.append_metric_rows(session_id, entry.model_id, r)
                )

            if task == "point_cloud":
                cloud_bytes = self._point_cloud_bytes(runtime, frame, pred, entry, snapshot)
                return [wire.encode(wire.MessageType.POINTCLOUD, header, [cloud_bytes])]

            if task == "occlusion_plane":
                layer = runtime.renderer.plane_layer(
                    self._plane_depth(snapshot, entry),
                    plane_color=tuple(entry.task_params.get("plane_color", (0, 0, 0))),
                )
            else:
                layer = runtime.renderer.object_layer(frame.pose, mesh_set=snapshot.mesh_set)
            camera = self._camera_image(runtime, frame)
            comp = render.composite(camera, layer, pred, runtime.manifest)
            png = wire.encode_png(comp)
            storage.submit(
                lambda b=png: self.store.store_composite(
                    session_id, entry.model_id, task, frame.index, b
                )
            )
            return [wire.encode(wire.MessageType.COMPOSITE, header, [png])]

        if task in ("env_map_eval", "three_sphere"):
            env = self._env_result(runtime, frame, entry)
            storage.submit(
                lambda e=env: self.store.store_result(session_id, entry.model_id, frame.index, e)
            )
            gt_env = self._ground_truth_env(runtime, entry)
            rows = []
            if task == "env_map_eval":
                png = self._env_png(env)
                if gt_env is not None:
                    rows = self._lighting_rows(frame, entry, [metrics.lighting_report("env_map", env, gt_env)])
            else:
                resolution = int(entry.task_params.get("resolution", 64))
                probes = {
                    kind: lighting.render_probe(env, lighting.ProbeMaterial(kind), resolution)
                    for kind in ("diffuse", "matte", "mirror")
                }
                png = self._probe_strip_png(probes)
                for kind, probe in probes.items():
                    blob = encode_pfm(probe.image)
                    storage.submit(
                        lambda k=kind, b=blob: self.store.store_composite_aux(
                            session_id, entry.model_id, task, frame.index, f"{k}.pfm", b
                        )
                    )
                if gt_env is not None:
                    reports = metrics.three_sphere_eval(env, gt_env, resolution)
                    rows = self._lighting_rows(frame, entry, reports)
            if rows:
                storage.submit(
                    lambda r=rows: self.store.append_metric_rows(session_id, entry.model_id, r)
                )
            storage.submit(
                lambda b=png: self.store.store_composite(
                    session_id, entry.model_id, task, frame.index, b
                )
            )
            return [wire.encode(wire.MessageType.COMPOSITE, header, [png])]

        raise InvalidProtocol(f"unknown task {task!r}")

    def _depth_metric_rows(self, runtime, frame, entry, pred):
        wanted = [m for m in entry.metric_ids if m in metrics.DEPTH_METRIC_IDS]
        rows = []
        if wanted:
            aligned = metrics.align_depth(pred, frame.depth)
            try:
                report = metrics.depth_metrics(aligned, frame.depth, frame_index=frame.index)
                rows = [
                    {
                        "frame_index": frame.index,
                        "metric_id": mid,
                        "value": report.value(mid),
                        "model_id": entry.model_id,
                        "task": entry.task,
                    }
                    for mid in wanted
                ]
            except metrics.NoValidPixels:
                pass
        if "opw" in entry.metric_ids:
            rows.extend(self._warp_rows(runtime, frame, entry, pred))
        return rows

    def _warp_rows(self, runtime, frame, entry, pred):
        """Per-pair warping loss against the previous prediction of this model.

        Flow comes from task_params['flow_dir'] ({index:06d}.flow per pair)
        when present; otherwise zero flow, the static-camera approximation.
        """
        prev = runtime.prev_pred.get(entry.model_id)
        runtime.prev_pred[entry.model_id] = pred
        if prev is None or (prev.width, prev.height) != (pred.width, pred.height):
            return []
        flow_dir = entry.task_params.get("flow_dir")
        if flow_dir:
            flow_path = Path(flow_dir) / f"{frame.index:06d}.flow"
            flow = metrics.decode_flow(flow_path.read_bytes())
        else:
            flow = metrics.FlowField.zero(pred.width, pred.height)
        try:
            loss = metrics.warp_loss(pred, prev, flow)
        except metrics.NoValidPixels:
            return []
        return [
            {
                "frame_index": frame.index,
                "metric_id": "opw",
                "value": loss,
                "model_id": entry.model_id,
                "task": entry.task,
            }
        ]

    def _lighting_rows(self, frame, entry, reports):
        rows = []
        by_target = {r.target: r for r in reports}
        for mid in entry.metric_ids:
            parts = metrics.LIGHTING_METRIC_PARTS.get(mid)
            if parts is None:
                continue
            target, name = parts
            if target in by_target:
                rows.append(
                    {
                        "frame_index": frame.index,
                        "metric_id": mid,
                        "value": by_target[target].value(name),
                        "model_id": entry.model_id,
                        "task": entry.task,
                    }
                )
        return rows

    def _ground_truth_env(self, runtime, entry):
        ref = entry.task_params.get("gt_env")
        if not ref:
            return None
        path = Path(ref)
        if not path.is_absolute():
            path = runtime.handle.root / path
        return EnvironmentMap(decode_pfm(path.read_bytes()))

    def _env_png(self, env):
        return wire.encode_png(RgbImage(lighting.tonemap(env.values)))

    def _probe_strip_png(self, probes):
        strip = np.concatenate(
            [lighting.tonemap(probes[k].image) for k in ("diffuse", "matte", "mirror")], axis=1
        )
        return wire.encode_png(RgbImage(strip))

    def _point_cloud_bytes(self, runtime, frame, pred, entry, snapshot):
        stride = int(entry.task_params.get("stride", 2))
        k_pred = render.scale_intrinsics(runtime.manifest.intrinsics, (pred.width, pred.height))
        real = pointcloud.unproject(pred, frame.rgb, k_pred, frame.pose, stride=stride)
        layer = runtime.renderer.object_layer(frame.pose, mesh_set=snapshot.mesh_set)
        virtual = pointcloud.virtual_to_points(layer, runtime.renderer.k, frame.pose, stride=stride)
        return pointcloud.encode_pcd(pointcloud.merge(real, virtual))

    # -- control ----------------------------------------------------------------

    def _runtime_for_control(self, session_id) -> SessionRuntime:
        rt = self.runtimes.get(session_id) or self.replays.get(session_id)
        if rt is None:
            raise NoSuchSession(session_id)
        return rt

    def apply_control(self, cmd: wire.ControlCommand):
        """Apply a control command; takes effect from the next processed frame."""
        runtime = self._runtime_for_control(cmd.session_id)
        emitted = []
        record = True
        if cmd.kind == "set_plane_depth":
            depth = float(cmd.params["depth_m"])
            if depth <= 0:
                raise render.NonpositiveDepth(f"plane depth {depth}")
            runtime.state.plane_depth_m = depth
        elif cmd.kind == "set_object_pose":
            scale = float(cmd.params.get("scale", 1.0))
            if scale <= 0:
                raise wire.InvalidCommand(f"scale {scale} must be > 0")
            runtime.renderer.set_object_pose(
                cmd.params["object_id"], Pose.from_flat(cmd.params["pose"]), scale
            )
        elif cmd.kind == "select_models":
            ids = list(cmd.params["model_ids"])
            for mid in ids:
                if not self.registry.has(mid):
                    raise gateway.NoSuchModel(mid)
            runtime.state.selected_model_ids = ids
        elif cmd.kind == "replay_seek":
            emitted = self._replay_seek(runtime, int(cmd.params["frame_index"]))
            record = False
        elif cmd.kind == "replay_mode":
            if cmd.params["mode"] not in wire.REPLAY_MODES:
                raise wire.InvalidCommand(f"unknown replay mode {cmd.params['mode']!r}")
            runtime.fps = float(cmd.params.get("fps", runtime.fps))
            record = False
        if record:
            next_index = runtime.position if runtime.mode == "replay" else runtime.ingest_count
            runtime.storage.submit(
                lambda: self.store.append_event(cmd.session_id, next_index, cmd.to_header())
            )
        return emitted

    def _replay_seek(self, runtime, frame_index):
        if runtime.mode != "replay":
            raise NotReplaying("replay_seek requires an active replay session")
        session_id = runtime.manifest.session_id
        count = self.store.frame_count(session_id)
        if not 0 <= frame_index < count:
            raise SeekOutOfRange(f"frame {frame_index} of {count}")
        runtime.position = frame_index
        frame = self.store.load_frame(session_id, frame_index)
        envelopes = self.process_frame(runtime, frame)
        for env in envelopes:
            self.broadcast(session_id, env)
        return envelopes

    # -- replay -------------------------------------------------------------------

    def _replay_runtime(self, session_id, protocol) -> SessionRuntime:
        manifest = self.store.manifest(session_id)
        handle = self.store.open_session(session_id)
        renderer = render.SceneRenderer(
            manifest, base_dir=handle.root,
            asset_dirs=(self.store.root, render.BUILTIN_ASSET_ROOT),
        )
        return SessionRuntime(
            manifest, handle, renderer, protocol, self.config.queue_bound, mode="replay"
        )

    def open_replay(self, session_id, protocol_id="default") -> SessionRuntime:
        """Start a frame-by-frame replay session driven by replay_seek commands."""
        protocol = self.get_protocol(protocol_id)
        if self.store.frame_count(session_id) == 0:
            raise EmptySession(session_id)
        old = self.replays.pop(session_id, None)
        if old is not None:
            old.close()
        runtime = self._replay_runtime(session_id, protocol)
        self._reset_session_metrics(session_id, protocol)
        self.replays[session_id] = runtime
        return runtime

    def close_replay(self, session_id):
        runtime = self.replays.pop(session_id, None)
        if runtime is not None:
            runtime.close()

    def _reset_session_metrics(self, session_id, protocol):
        for entry in protocol.entries:
            self.store.reset_metrics(session_id, entry.model_id)

    def replay(self, session_id, protocol_id="default", mode="video", fps=0.0, apply_events=True):
        """Re-run a stored session through the pipeline with any protocol.

        Video mode paces frames at `fps` (0 = as fast as possible); every
        frame is processed, none dropped. Returns the emitted envelopes.
        """
        protocol = self.get_protocol(protocol_id)
        count = self.store.frame_count(session_id)
        if count == 0:
            raise EmptySession(session_id)
        runtime = self._replay_runtime(session_id, protocol)
        self._reset_session_metrics(session_id, protocol)
        events = self.store.load_events(session_id) if apply_events else []
        by_index = {}
        for event in events:
            by_index.setdefault(int(event["frame_index"]), []).append(event["command"])

        collected = []
        start = time.perf_counter()
        try:
            for i in range(count):
                for command in by_index.get(i, ()):
                    self._apply_recorded(runtime, command)
                if mode == "video" and fps > 0:
                    deadline = start + i / fps
                    delay = deadline - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                frame = self.store.load_frame(session_id, i)
                runtime.position = i
                envelopes = self.process_frame(runtime, frame)
                for env in envelopes:
                    self.broadcast(session_id, env)
                collected.extend(envelopes)
        finally:
            runtime.close()
        return collected

    def _apply_recorded(self, runtime, command_header):
        """Re-apply a recorded interactive-state event without re-recording it."""
        cmd = wire.ControlCommand.from_header(command_header)
        if cmd.kind == "set_plane_depth":
            runtime.state.plane_depth_m = float(cmd.params["depth_m"])
        elif cmd.kind == "set_object_pose":
            runtime.renderer.set_object_pose(
                cmd.params["object_id"], Pose.from_flat(cmd.params["pose"]),
                float(cmd.params.get("scale", 1.0)),
            )
        elif cmd.kind == "select_models":
            runtime.state.selected_model_ids = list(cmd.params["model_ids"])
