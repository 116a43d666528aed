"""Binary message framing for capture streaming and composite/point-cloud delivery.

Envelope layout (all integers little-endian):

    magic "ARCD" | version u8 | msg_type u8 | header_len u32 | header JSON
    | payload_count u8 | payload_count x (u32 length + raw bytes)

One envelope per transport message, both directions. Request/response REST
endpoints reuse the same header JSON with Base64 payloads instead.

Frames keep their per-frame header minimal ({index, timestamp_ns, pose}):
intrinsics and object metadata travel once in the INIT packet, which is what
keeps steady-state traffic low.
"""

from __future__ import annotations

import base64
import enum
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .core import ArbenchError, DepthMap, Frame, Pose, RgbImage

MAGIC = b"ARCD"
VERSION = 1

# Fixed zlib level so identical inputs always produce identical PNG bytes
# at a cost compatible with real-time replay.
PNG_COMPRESS_LEVEL = 3


class MessageType(enum.IntEnum):
    INIT = 0x01
    FRAME = 0x02
    ACK = 0x03
    COMPOSITE = 0x04
    CONTROL = 0x05
    POINTCLOUD = 0x06
    ERROR = 0x07
    END = 0x08


class WireError(ArbenchError):
    code = "WireError"


class HeaderTooLarge(WireError):
    code = "HeaderTooLarge"


class TooManyPayloads(WireError):
    code = "TooManyPayloads"


class BadMagic(WireError):
    code = "BadMagic"


class UnsupportedVersion(WireError):
    code = "UnsupportedVersion"


class Truncated(WireError):
    code = "Truncated"


class MalformedHeader(WireError):
    code = "MalformedHeader"


class TrailingBytes(WireError):
    code = "TrailingBytes"


class UnknownMessageType(WireError):
    code = "UnknownMessageType"


class EncodingFailure(WireError):
    code = "EncodingFailure"


def encode(msg_type: MessageType, header: dict, payloads=()) -> bytes:
    """Frame one envelope; decode(encode(...)) is the bit-exact inverse."""
    try:
        # allow_nan=False: NaN/Infinity are not JSON and would break
        # decoders on the other side of the wire.
        header_bytes = json.dumps(header, separators=(",", ":"), allow_nan=False).encode("utf-8")
    except ValueError as exc:
        raise MalformedHeader(f"header not JSON-serializable: {exc}") from None
    if len(header_bytes) >= 2**32:
        raise HeaderTooLarge(f"header is {len(header_bytes)} bytes")
    payloads = list(payloads)
    if len(payloads) > 255:
        raise TooManyPayloads(f"{len(payloads)} payloads exceed the u8 count field")
    parts = [
        MAGIC,
        struct.pack("<BB", VERSION, int(msg_type)),
        struct.pack("<I", len(header_bytes)),
        header_bytes,
        struct.pack("<B", len(payloads)),
    ]
    for p in payloads:
        parts.append(struct.pack("<I", len(p)))
        parts.append(bytes(p))
    return b"".join(parts)


def decode(buf: bytes):
    """Parse one envelope into (MessageType, header dict, payload list).

    Rejects anything that is not exactly one well-formed envelope: bad magic,
    unknown version or message type, short reads, and trailing garbage.
    """
    buf = bytes(buf)

    def take(n, what):
        nonlocal offset
        if offset + n > len(buf):
            raise Truncated(f"buffer ends inside {what}")
        chunk = buf[offset : offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4, "magic") != MAGIC:
        raise BadMagic("expected 'ARCD' magic")
    version, raw_type = struct.unpack("<BB", take(2, "version/type"))
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    try:
        msg_type = MessageType(raw_type)
    except ValueError:
        raise UnknownMessageType(f"msg_type 0x{raw_type:02x}") from None
    (header_len,) = struct.unpack("<I", take(4, "header length"))
    header_bytes = take(header_len, "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(str(exc)) from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    (payload_count,) = struct.unpack("<B", take(1, "payload count"))
    payloads = []
    for i in range(payload_count):
        (length,) = struct.unpack("<I", take(4, f"payload {i} length"))
        payloads.append(take(length, f"payload {i}"))
    if offset != len(buf):
        raise TrailingBytes(f"{len(buf) - offset} bytes after envelope end")
    return msg_type, header, payloads


def encode_png(img: RgbImage) -> bytes:
    mode = "RGBA" if img.channels == 4 else "RGB"
    try:
        pil = Image.fromarray(np.asarray(img.values), mode=mode)
        out = io.BytesIO()
        pil.save(out, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
    except Exception as exc:
        raise EncodingFailure(f"PNG encode failed: {exc}") from exc
    return out.getvalue()


def decode_png(data: bytes) -> RgbImage:
    try:
        pil = Image.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:
        raise EncodingFailure(f"PNG decode failed: {exc}") from exc
    if pil.mode not in ("RGB", "RGBA"):
        pil = pil.convert("RGBA" if "A" in pil.mode else "RGB")
    return RgbImage(np.asarray(pil))


def encode_frame_payloads(f: Frame):
    """FRAME payloads: (lossless PNG of the RGB(A) image, raw16 LE depth buffer)."""
    depth_raw = np.asarray(f.depth.values, dtype="<u2").tobytes()
    return encode_png(f.rgb), depth_raw


def decode_depth_payload(data: bytes, width: int, height: int) -> DepthMap:
    expected = width * height * 2
    if len(data) != expected:
        raise Truncated(f"depth payload is {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<u2").reshape(height, width)
    return DepthMap(values.astype(np.uint16))


def frame_header(f: Frame) -> dict:
    return {"index": f.index, "timestamp_ns": f.timestamp_ns, "pose": f.pose.to_flat()}


def encode_frame(f: Frame) -> bytes:
    rgb_png, depth_raw = encode_frame_payloads(f)
    return encode(MessageType.FRAME, frame_header(f), [rgb_png, depth_raw])


def decode_frame(header: dict, payloads, depth_resolution) -> Frame:
    if len(payloads) != 2:
        raise MalformedHeader("FRAME requires exactly two payloads (rgb png, depth raw16)")
    rgb = decode_png(payloads[0])
    dw, dh = depth_resolution
    depth = decode_depth_payload(payloads[1], dw, dh)
    return Frame(
        index=int(header["index"]),
        timestamp_ns=int(header["timestamp_ns"]),
        rgb=rgb,
        depth=depth,
        pose=Pose.from_flat(header["pose"]),
    )


def encode_rest_image(img: bytes) -> str:
    """Standard padded Base64 for binary images embedded in REST JSON."""
    if not img:
        raise EncodingFailure("cannot Base64-encode an empty buffer")
    return base64.b64encode(bytes(img)).decode("ascii")


def decode_rest_image(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise EncodingFailure(f"invalid Base64: {exc}") from exc


CONTROL_KINDS = ("set_plane_depth", "set_object_pose", "select_models", "replay_seek", "replay_mode")
REPLAY_MODES = ("video", "frame_by_frame")


class InvalidCommand(WireError):
    code = "InvalidCommand"


@dataclass(frozen=True)
class ControlCommand:
    """Interactive control message; semantic checks happen at application time."""

    kind: str
    session_id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise InvalidCommand(f"unknown control kind {self.kind!r}")

    def to_header(self) -> dict:
        return {"kind": self.kind, "session_id": self.session_id, **self.params}

    @classmethod
    def from_header(cls, header: dict) -> "ControlCommand":
        try:
            kind = header["kind"]
            session_id = header["session_id"]
        except KeyError as exc:
            raise InvalidCommand(f"control header missing {exc}") from None
        params = {k: v for k, v in header.items() if k not in ("kind", "session_id")}
        return cls(kind=kind, session_id=session_id, params=params)


def set_plane_depth(session_id, depth_m):
    return ControlCommand("set_plane_depth", session_id, {"depth_m": float(depth_m)})


def set_object_pose(session_id, object_id, pose: Pose, scale):
    return ControlCommand(
        "set_object_pose",
        session_id,
        {"object_id": object_id, "pose": pose.to_flat(), "scale": float(scale)},
    )


def select_models(session_id, model_ids):
    return ControlCommand("select_models", session_id, {"model_ids": list(model_ids)})


def replay_seek(session_id, frame_index):
    return ControlCommand("replay_seek", session_id, {"frame_index": int(frame_index)})


def replay_mode(session_id, mode, fps=30.0):
    if mode not in REPLAY_MODES:
        raise InvalidCommand(f"unknown replay mode {mode!r}")
    return ControlCommand("replay_mode", session_id, {"mode": mode, "fps": float(fps)})
