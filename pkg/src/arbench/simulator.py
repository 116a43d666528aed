"""Capture-side stand-in: plays on-disk sessions over the wire protocol and
generates synthetic scenes with exact analytic depth.

The synthetic scenes exist so every downstream test has ground truth with
no dataset download:

- ramp: vertical depth gradient 0.5 -> 1.5 m with matching grayscale RGB.
- step: two-level depth, 0.5 m top half / 1.5 m bottom half, for boundary
  tests.
- orbiting-box: a camera circling a real box (analytic ray-cast depth)
  with a small virtual cube object resting on top of it.
"""

from __future__ import annotations

import math
import time
import urllib.parse
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import websockets.exceptions
import websockets.sync.client

from . import wire
from .core import (
    ArbenchError,
    CameraIntrinsics,
    DepthMap,
    Frame,
    Pose,
    RgbImage,
    SessionManifest,
    VirtualObject,
    translation_pose,
)
from .store import SessionStore

SCENES = ("ramp", "step", "orbiting-box")

# Same bytes the server can resolve from its built-in assets, so streamed
# sessions and locally generated ones reference identical geometry.
_CUBE_OBJ_PATH = Path(__file__).resolve().parent / "assets" / "cube.obj"


class SimulatorError(ArbenchError):
    code = "SimulatorError"


class LayoutError(SimulatorError):
    code = "LayoutError"


class ProtocolError(SimulatorError):
    code = "ProtocolError"


class ConnectionRefused(SimulatorError):
    code = "ConnectionRefused"


@dataclass
class StreamStats:
    frames_sent: int
    bytes_sent: int
    mean_interframe_ms: float
    acks_received: int


def _look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose with -Z aimed from position toward target."""
    p = np.asarray(position, dtype=np.float64)
    z = p - np.asarray(target, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, p
    return Pose(m)


def _frame_timestamps(n_frames, fps):
    step = int(round(1e9 / fps))
    return [1_000_000_000 + i * step for i in range(n_frames)]


def _ramp_depth(width, height):
    rows = 0.5 + np.arange(height) / (height - 1) if height > 1 else np.array([0.5])
    meters = np.repeat(rows[:, None], width, axis=1)
    return DepthMap.from_meters(meters)


def _ramp_rgb(width, height):
    # Offset from pure black so composited plane pixels stay identifiable.
    rows = np.linspace(30, 225, height).round().astype(np.uint8)
    gray = np.repeat(rows[:, None], width, axis=1)
    return RgbImage(np.stack([gray, gray, gray], axis=-1))


def _step_depth(width, height):
    meters = np.full((height, width), 1.5)
    meters[: height // 2] = 0.5
    return DepthMap.from_meters(meters)


def _step_rgb(width, height):
    values = np.full((height, width, 3), 192, dtype=np.uint8)
    values[: height // 2] = 64
    return RgbImage(values)


def _box_depth_rgb(k: CameraIntrinsics, cam: Pose, half=0.4):
    """Analytic ray-cast of an axis-aligned box centered at the origin."""
    w, h = k.width, k.height
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack(
        [(us - k.cx) / k.fx, -(vs - k.cy) / k.fy, -np.ones_like(us, dtype=np.float64)], axis=-1
    )
    r = cam.matrix[:3, :3]
    origin = cam.matrix[:3, 3]
    dirs = dirs_cam @ r.T

    # Slab intersection; depth equals the ray parameter because the
    # camera-space direction has z = -1.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (-half - origin) / dirs
        t_hi = (half - origin) / dirs
    t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
    t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    depth_m = np.where(hit, t_near, 0.0)

    rgb = np.full((h, w, 3), 40, dtype=np.uint8)
    shade = np.clip(255.0 - 160.0 * (depth_m / (np.abs(depth_m).max() + 1e-9)), 0, 255)
    rgb[hit] = np.stack([shade[hit], shade[hit] * 0.8, shade[hit] * 0.5], axis=-1).astype(np.uint8)
    return DepthMap.from_meters(depth_m), RgbImage(rgb)


def generate_synthetic(out_root, scene, n_frames, resolution=(64, 48), fps=30.0, session_id=None):
    """Write a complete synthetic session; returns its session_id."""
    if scene not in SCENES:
        raise SimulatorError(f"unknown scene {scene!r}; choose from {SCENES}")
    if n_frames < 1:
        raise SimulatorError("need at least one frame")
    width, height = resolution
    session_id = session_id or f"{scene}-{n_frames}f-{width}x{height}"
    k = CameraIntrinsics(
        fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )
    objects = ()
    if scene == "orbiting-box":
        objects = (
            VirtualObject(
                object_id="marker-cube",
                mesh_ref="assets/cube.obj",
                pose=translation_pose(0.0, 0.55, 0.0),
                scale=0.3,
                base_color=(0.9, 0.3, 0.2),
            ),
        )
    manifest = SessionManifest(
        session_id=session_id,
        intrinsics=k,
        target_resolution=(width, height),
        depth_resolution=(width, height),
        objects=objects,
    )
    store = SessionStore(out_root)
    handle = store.begin_session(manifest)
    if scene == "orbiting-box":
        assets = handle.root / "assets"
        assets.mkdir()
        (assets / "cube.obj").write_text(_CUBE_OBJ_PATH.read_text())

    timestamps = _frame_timestamps(n_frames, fps)
    for i in range(n_frames):
        if scene == "ramp":
            depth, rgb, pose = _ramp_depth(width, height), _ramp_rgb(width, height), Pose.identity()
        elif scene == "step":
            depth, rgb, pose = _step_depth(width, height), _step_rgb(width, height), Pose.identity()
        else:
            angle = 2.0 * math.pi * i / max(n_frames, 1)
            pose = _look_at((2.2 * math.sin(angle), 0.4, 2.2 * math.cos(angle)))
            depth, rgb = _box_depth_rgb(k, pose)
        store.append_frame(handle, Frame(i, timestamps[i], rgb, depth, pose))
    return session_id


def _ws_url(server_url, session_id):
    parsed = urllib.parse.urlparse(server_url)
    scheme = {"http": "ws", "https": "wss"}.get(parsed.scheme, parsed.scheme or "ws")
    netloc = parsed.netloc or parsed.path
    return f"{scheme}://{netloc}/stream/{session_id}"


def stream_session(root, session_id, server_url, fps=30.0, loop=False, max_laps=None) -> StreamStats:
    """Send INIT + paced FRAMEs over the wire protocol; returns transfer stats.

    Pacing is deadline-scheduled from the start time, so long sessions do
    not accumulate sleep drift. With loop=True the session is re-sent with
    continuing indices and shifted timestamps until max_laps (if given) is
    reached or the connection drops.
    """
    store = SessionStore(root)
    try:
        manifest = store.manifest(session_id)
        count = store.frame_count(session_id)
    except ArbenchError as exc:
        raise LayoutError(f"unusable session layout: {exc}") from exc
    if count == 0:
        raise LayoutError(f"session {session_id} has no frames")

    # Lap shift for looped playback comes from the capture's own timeline,
    # so repeated timestamps stay strictly increasing at any streaming fps.
    handle = store.open_session(session_id)
    if count > 1 and handle.last_ts is not None and handle.first_ts is not None:
        span = handle.last_ts - handle.first_ts
        lap_shift_ns = span + max(span // (count - 1), 1)
    else:
        lap_shift_ns = max(int(round(1e9 / fps)), 1)

    try:
        ws = websockets.sync.client.connect(_ws_url(server_url, session_id), max_size=None)
    except (ConnectionError, OSError) as exc:
        raise ConnectionRefused(f"cannot reach {server_url}: {exc}") from exc

    frames_sent = 0
    bytes_sent = 0
    acks = 0
    send_times = []

    def pump_one(timeout):
        """Receive one message if available; returns False on timeout/close."""
        nonlocal acks
        try:
            message = ws.recv(timeout=timeout)
        except TimeoutError:
            return False
        except websockets.exceptions.ConnectionClosed:
            return False
        msg_type, header, _ = wire.decode(message)
        if msg_type == wire.MessageType.ACK:
            acks += 1
        elif msg_type == wire.MessageType.ERROR:
            raise ProtocolError(f"server error: {header}")
        return True

    try:
        init = wire.encode(wire.MessageType.INIT, manifest.to_json_dict())
        ws.send(init)
        bytes_sent += len(init)
        if not pump_one(timeout=5.0):
            raise ProtocolError("no reply to INIT")

        laps = 0
        start = None
        while True:
            for i in range(count):
                # The stored files already are the wire payloads; frame them
                # without a decode/re-encode cycle, and do it before pacing
                # so disk time never eats into the inter-frame gap.
                # Deadlines are absolute from the first send: no drift.
                rgb_png, depth_raw, meta = store.load_frame_payloads(session_id, i)
                if laps:
                    meta = {
                        "index": laps * count + i,
                        "timestamp_ns": meta["timestamp_ns"] + laps * lap_shift_ns,
                        "pose": meta["pose"],
                    }
                data = wire.encode(wire.MessageType.FRAME, meta, [rgb_png, depth_raw])
                if start is None:
                    start = time.perf_counter()
                else:
                    deadline = start + (laps * count + i) / fps
                    delay = deadline - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                ws.send(data)
                send_times.append(time.perf_counter())
                bytes_sent += len(data)
                frames_sent += 1
                while pump_one(timeout=0.0):
                    pass
            laps += 1
            if not loop or (max_laps is not None and laps >= max_laps):
                break
        ws.send(wire.encode(wire.MessageType.END, {"session_id": session_id}))
        # frame acks + the end ack may still be in flight
        while acks < frames_sent + 2:
            if not pump_one(timeout=1.0):
                break
    finally:
        ws.close()

    if len(send_times) > 1:
        gaps = np.diff(send_times)
        mean_ms = float(np.mean(gaps) * 1000.0)
    else:
        mean_ms = 0.0
    return StreamStats(
        frames_sent=frames_sent,
        bytes_sent=bytes_sent,
        mean_interframe_ms=mean_ms,
        acks_received=acks,
    )
