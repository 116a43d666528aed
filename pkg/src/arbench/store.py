"""On-disk session persistence with a replay index.

Directory layout per session (doubles as the dataset-ingestion format):

    root/{session_id}/
        manifest.json
        index.json                         {frame_count, first_ts, last_ts}
        events.jsonl                       interactive-state changes, per frame
        frames/%06d.rgb.png
        frames/%06d.depth.raw16            dims fixed by manifest.depth_resolution
        frames/%06d.meta.json              {index, timestamp_ns, pose}
        results/{model_id}/%06d.depth.raw16   8-byte LE (w,h) prefix + raw16
        results/{model_id}/%06d.env.pfm
        composites/{model_id}/{task}/%06d.png
        metrics/{model_id}.jsonl

Every file is written temp-then-rename, so a reader never sees a partial
frame and a crash mid-append leaves the frame count unchanged. Committed
frame files are never mutated afterwards. Result depth files carry a small
dimension prefix because model output resolution is not knowable from the
manifest.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pfm, wire
from .core import ArbenchError, DepthMap, EnvironmentMap, Frame, Pose, SessionManifest


class StoreError(ArbenchError):
    code = "StoreError"


class DuplicateSession(StoreError):
    code = "DuplicateSession"


class StorageUnavailable(StoreError):
    code = "StorageUnavailable"


class OutOfOrderFrame(StoreError):
    code = "OutOfOrderFrame"


class NoSuchSession(StoreError):
    code = "NoSuchSession"


class NoSuchFrame(StoreError):
    code = "NoSuchFrame"


class NoSuchResult(StoreError):
    code = "NoSuchResult"


class CorruptFrame(StoreError):
    code = "CorruptFrame"


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageUnavailable(f"cannot write {path}: {exc}") from exc


def _frame_name(index, suffix):
    return f"{index:06d}.{suffix}"


@dataclass
class SessionHandle:
    session_id: str
    root: Path
    frame_count: int
    first_ts: int | None = None
    last_ts: int | None = None


class SessionStore:
    """Single writer per session, any number of concurrent readers."""

    def __init__(self, root):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageUnavailable(f"cannot create store root: {exc}") from exc
        self._manifests = {}

    # -- session lifecycle -------------------------------------------------

    def session_ids(self):
        return sorted(p.name for p in self.root.iterdir() if (p / "manifest.json").exists())

    def begin_session(self, manifest: SessionManifest) -> SessionHandle:
        session_dir = self.root / manifest.session_id
        if session_dir.exists():
            raise DuplicateSession(manifest.session_id)
        try:
            (session_dir / "frames").mkdir(parents=True)
            (session_dir / "results").mkdir()
            (session_dir / "composites").mkdir()
            (session_dir / "metrics").mkdir()
        except OSError as exc:
            raise StorageUnavailable(f"cannot create session skeleton: {exc}") from exc
        _atomic_write(session_dir / "manifest.json", manifest.to_json().encode("utf-8"))
        self._write_index(session_dir, 0, None, None)
        self._manifests[manifest.session_id] = manifest
        return SessionHandle(manifest.session_id, session_dir, frame_count=0)

    def open_session(self, session_id) -> SessionHandle:
        session_dir = self._session_dir(session_id)
        index = self._read_index(session_dir)
        return SessionHandle(
            session_id,
            session_dir,
            frame_count=index["frame_count"],
            first_ts=index["first_ts"],
            last_ts=index["last_ts"],
        )

    def manifest(self, session_id) -> SessionManifest:
        if session_id not in self._manifests:
            path = self._session_dir(session_id) / "manifest.json"
            self._manifests[session_id] = SessionManifest.from_json(path.read_text("utf-8"))
        return self._manifests[session_id]

    def frame_count(self, session_id) -> int:
        return self._read_index(self._session_dir(session_id))["frame_count"]

    def _session_dir(self, session_id) -> Path:
        session_dir = self.root / session_id
        if not (session_dir / "manifest.json").exists():
            raise NoSuchSession(session_id)
        return session_dir

    def _write_index(self, session_dir, frame_count, first_ts, last_ts):
        doc = {"frame_count": frame_count, "first_ts": first_ts, "last_ts": last_ts}
        _atomic_write(session_dir / "index.json", json.dumps(doc).encode("utf-8"))

    def _read_index(self, session_dir) -> dict:
        try:
            return json.loads((session_dir / "index.json").read_text("utf-8"))
        except FileNotFoundError:
            return {"frame_count": 0, "first_ts": None, "last_ts": None}

    # -- frames ------------------------------------------------------------

    def append_frame(self, handle: SessionHandle, frame: Frame):
        rgb_png, depth_raw = wire.encode_frame_payloads(frame)
        self.append_frame_payloads(handle, wire.frame_header(frame), rgb_png, depth_raw)

    def append_frame_payloads(self, handle: SessionHandle, meta: dict, rgb_png: bytes, depth_raw: bytes):
        """Append a frame from its wire payloads verbatim: what arrived on
        the wire is what lands on disk, byte for byte."""
        index = int(meta["index"])
        if index != handle.frame_count:
            raise OutOfOrderFrame(f"expected frame {handle.frame_count}, got {index}")
        if handle.last_ts is not None and int(meta["timestamp_ns"]) <= handle.last_ts:
            raise OutOfOrderFrame(
                f"timestamp {meta['timestamp_ns']} does not increase past {handle.last_ts}"
            )
        frames_dir = handle.root / "frames"
        meta_bytes = json.dumps(meta, separators=(",", ":")).encode("utf-8")
        _atomic_write(frames_dir / _frame_name(index, "rgb.png"), rgb_png)
        _atomic_write(frames_dir / _frame_name(index, "depth.raw16"), depth_raw)
        _atomic_write(frames_dir / _frame_name(index, "meta.json"), meta_bytes)
        handle.frame_count += 1
        if handle.first_ts is None:
            handle.first_ts = int(meta["timestamp_ns"])
        handle.last_ts = int(meta["timestamp_ns"])
        self._write_index(handle.root, handle.frame_count, handle.first_ts, handle.last_ts)

    def load_frame(self, session_id, index) -> Frame:
        session_dir = self._session_dir(session_id)
        count = self._read_index(session_dir)["frame_count"]
        if not 0 <= index < count:
            raise NoSuchFrame(f"frame {index} of {count}")
        frames_dir = session_dir / "frames"
        try:
            rgb_png = (frames_dir / _frame_name(index, "rgb.png")).read_bytes()
            depth_raw = (frames_dir / _frame_name(index, "depth.raw16")).read_bytes()
            meta = json.loads((frames_dir / _frame_name(index, "meta.json")).read_text("utf-8"))
        except FileNotFoundError as exc:
            raise CorruptFrame(f"missing frame file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CorruptFrame(f"bad frame meta: {exc}") from None
        dw, dh = self.manifest(session_id).depth_resolution
        if len(depth_raw) != dw * dh * 2:
            raise CorruptFrame(
                f"depth file is {len(depth_raw)} bytes, expected {dw * dh * 2}"
            )
        if meta.get("index") != index:
            raise CorruptFrame(f"meta index {meta.get('index')} != {index}")
        try:
            rgb = wire.decode_png(rgb_png)
        except wire.EncodingFailure as exc:
            raise CorruptFrame(str(exc)) from None
        return Frame(
            index=index,
            timestamp_ns=int(meta["timestamp_ns"]),
            rgb=rgb,
            depth=wire.decode_depth_payload(depth_raw, dw, dh),
            pose=Pose.from_flat(meta["pose"]),
        )

    def load_frame_payloads(self, session_id, index):
        """Raw wire payloads (rgb png bytes, depth raw16 bytes, meta dict)
        without a decode/re-encode cycle; the stored files are already in
        the FRAME payload format."""
        session_dir = self._session_dir(session_id)
        count = self._read_index(session_dir)["frame_count"]
        if not 0 <= index < count:
            raise NoSuchFrame(f"frame {index} of {count}")
        frames_dir = session_dir / "frames"
        try:
            rgb_png = (frames_dir / _frame_name(index, "rgb.png")).read_bytes()
            depth_raw = (frames_dir / _frame_name(index, "depth.raw16")).read_bytes()
            meta = json.loads((frames_dir / _frame_name(index, "meta.json")).read_text("utf-8"))
        except FileNotFoundError as exc:
            raise CorruptFrame(f"missing frame file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CorruptFrame(f"bad frame meta: {exc}") from None
        return rgb_png, depth_raw, meta

    def iter_frames(self, session_id):
        for i in range(self.frame_count(session_id)):
            yield self.load_frame(session_id, i)

    # -- model results -----------------------------------------------------

    def store_result(self, session_id, model_id, index, result):
        results_dir = self._session_dir(session_id) / "results" / model_id
        results_dir.mkdir(parents=True, exist_ok=True)
        if isinstance(result, DepthMap):
            blob = struct.pack("<II", result.width, result.height)
            blob += np.asarray(result.values, dtype="<u2").tobytes()
            _atomic_write(results_dir / _frame_name(index, "depth.raw16"), blob)
        elif isinstance(result, EnvironmentMap):
            _atomic_write(results_dir / _frame_name(index, "env.pfm"), pfm.encode_pfm(result.values))
        else:
            raise StoreError(f"unsupported result type {type(result).__name__}")

    def load_result(self, session_id, model_id, index, kind):
        results_dir = self._session_dir(session_id) / "results" / model_id
        if kind == "depth":
            path = results_dir / _frame_name(index, "depth.raw16")
            if not path.exists():
                raise NoSuchResult(f"{model_id}/{index}:depth")
            blob = path.read_bytes()
            if len(blob) < 8:
                raise CorruptFrame("result depth file shorter than its dimension prefix")
            w, h = struct.unpack("<II", blob[:8])
            if len(blob) != 8 + w * h * 2:
                raise CorruptFrame(f"result depth payload mismatch for {w}x{h}")
            return wire.decode_depth_payload(blob[8:], w, h)
        if kind == "env_map":
            path = results_dir / _frame_name(index, "env.pfm")
            if not path.exists():
                raise NoSuchResult(f"{model_id}/{index}:env_map")
            return EnvironmentMap(pfm.decode_pfm(path.read_bytes()))
        raise StoreError(f"unknown result kind {kind!r}")

    # -- composites and metrics ---------------------------------------------

    def store_composite(self, session_id, model_id, task, index, png_bytes):
        out_dir = self._session_dir(session_id) / "composites" / model_id / task
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(out_dir / _frame_name(index, "png"), png_bytes)

    def store_composite_aux(self, session_id, model_id, task, index, suffix, blob):
        """Side files next to a composite (e.g. probe renders as PFM)."""
        out_dir = self._session_dir(session_id) / "composites" / model_id / task
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(out_dir / _frame_name(index, suffix), blob)

    def load_composite(self, session_id, model_id, task, index) -> bytes:
        path = self._session_dir(session_id) / "composites" / model_id / task / _frame_name(index, "png")
        if not path.exists():
            raise NoSuchResult(f"{model_id}/{task}/{index}:composite")
        return path.read_bytes()

    def composite_paths(self, session_id):
        base = self._session_dir(session_id) / "composites"
        return sorted(p for p in base.rglob("*.png"))

    def reset_metrics(self, session_id, model_id):
        path = self._session_dir(session_id) / "metrics" / f"{model_id}.jsonl"
        if path.exists():
            path.unlink()

    def append_metric_rows(self, session_id, model_id, rows):
        path = self._session_dir(session_id) / "metrics" / f"{model_id}.jsonl"
        path.parent.mkdir(exist_ok=True)
        lines = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in rows)
        try:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(lines)
        except OSError as exc:
            raise StorageUnavailable(str(exc)) from exc

    def read_metrics(self, session_id, model_id) -> str:
        path = self._session_dir(session_id) / "metrics" / f"{model_id}.jsonl"
        if not path.exists():
            raise NoSuchResult(f"{model_id}:metrics")
        return path.read_text("utf-8")

    def metric_model_ids(self, session_id):
        metrics_dir = self._session_dir(session_id) / "metrics"
        return sorted(p.stem for p in metrics_dir.glob("*.jsonl"))

    # -- interactive-state events -------------------------------------------

    def append_event(self, session_id, frame_index, command_header):
        path = self._session_dir(session_id) / "events.jsonl"
        row = {"frame_index": frame_index, "command": command_header}
        try:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")
        except OSError as exc:
            raise StorageUnavailable(str(exc)) from exc

    def load_events(self, session_id):
        path = self._session_dir(session_id) / "events.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text("utf-8").splitlines() if line]
