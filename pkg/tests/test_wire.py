import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbench import wire
from arbench.core import DepthMap, Frame, Pose, RgbImage

from conftest import make_frame


def test_end_envelope_bytes():
    # Hand-assembled: magic + version + type + u32 len + "{}" + payload count.
    buf = wire.encode(wire.MessageType.END, {})
    expected = b"ARCD" + bytes([1, 0x08]) + (2).to_bytes(4, "little") + b"{}" + bytes([0])
    assert buf == expected
    assert len(buf) == 13


def test_frame_round_trip_small():
    f = make_frame(width=1, height=1)
    buf = wire.encode_frame(f)
    msg_type, header, payloads = wire.decode(buf)
    assert msg_type == wire.MessageType.FRAME
    restored = wire.decode_frame(header, payloads, (1, 1))
    assert restored == f


def test_too_many_payloads():
    with pytest.raises(wire.TooManyPayloads):
        wire.encode(wire.MessageType.ACK, {}, [b"x"] * 256)


def test_255_payloads_ok():
    buf = wire.encode(wire.MessageType.ACK, {}, [b"x"] * 255)
    _, _, payloads = wire.decode(buf)
    assert len(payloads) == 255


def test_bad_magic():
    with pytest.raises(wire.BadMagic):
        wire.decode(b"XXXX" + b"\x01\x08" + (2).to_bytes(4, "little") + b"{}" + b"\x00")


def test_unsupported_version():
    buf = bytearray(wire.encode(wire.MessageType.END, {}))
    buf[4] = 9
    with pytest.raises(wire.UnsupportedVersion):
        wire.decode(bytes(buf))


def test_unknown_msg_type_rejected():
    buf = bytearray(wire.encode(wire.MessageType.END, {}))
    buf[5] = 0x7F
    with pytest.raises(wire.UnknownMessageType):
        wire.decode(bytes(buf))


def test_trailing_bytes():
    buf = wire.encode(wire.MessageType.END, {}) + b"\x00"
    with pytest.raises(wire.TrailingBytes):
        wire.decode(buf)


def test_truncated():
    buf = wire.encode(wire.MessageType.COMPOSITE, {"a": 1}, [b"payload"])
    for cut in (3, 5, 8, len(buf) - 1):
        with pytest.raises(wire.Truncated):
            wire.decode(buf[:cut])


def test_malformed_header():
    raw = b"not json"
    buf = b"ARCD" + bytes([1, 3]) + len(raw).to_bytes(4, "little") + raw + bytes([0])
    with pytest.raises(wire.MalformedHeader):
        wire.decode(buf)


@settings(max_examples=200, deadline=None)
@given(
    msg_type=st.sampled_from(list(wire.MessageType)),
    header=st.dictionaries(
        st.text(min_size=1, max_size=8),
        st.one_of(st.integers(-(2**40), 2**40), st.text(max_size=16), st.booleans(), st.none()),
        max_size=6,
    ),
    payloads=st.lists(st.binary(max_size=256), max_size=5),
)
def test_round_trip_property(msg_type, header, payloads):
    buf = wire.encode(msg_type, header, payloads)
    out_type, out_header, out_payloads = wire.decode(buf)
    assert out_type == msg_type
    assert out_header == header
    assert out_payloads == [bytes(p) for p in payloads]
    # re-encoding the decoded message reproduces the exact bytes
    assert wire.encode(out_type, out_header, out_payloads) == buf


def test_frame_header_stays_small():
    # Per-frame headers carry only index/timestamp/pose: no intrinsics, no
    # object metadata, and under 600 bytes for any pose.
    rng = np.random.default_rng(7)
    for _ in range(50):
        pose = Pose(np.vstack([rng.uniform(-1e8, 1e8, size=(3, 4)), [[0, 0, 0, 1]]]))
        f = Frame(
            index=2**31,
            timestamp_ns=2**62,
            rgb=RgbImage(np.zeros((1, 1, 3), dtype=np.uint8)),
            depth=DepthMap(np.zeros((1, 1), dtype=np.uint16)),
            pose=pose,
        )
        header = wire.frame_header(f)
        assert set(header) == {"index", "timestamp_ns", "pose"}
        encoded = json.dumps(header, separators=(",", ":")).encode("utf-8")
        assert len(encoded) < 600


def test_rgba_png_round_trip():
    rng = np.random.default_rng(3)
    img = RgbImage(rng.integers(0, 256, size=(2, 2, 4), dtype=np.uint16).astype(np.uint8))
    assert wire.decode_png(wire.encode_png(img)) == img


def test_rgb_png_round_trip_large():
    rng = np.random.default_rng(4)
    img = RgbImage(rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint16).astype(np.uint8))
    assert wire.decode_png(wire.encode_png(img)) == img


def test_depth_payload_little_endian():
    depth = DepthMap(np.array([[1000, 2000], [0, 65535]], dtype=np.uint16))
    f = make_frame(width=2, height=2)
    f = Frame(f.index, f.timestamp_ns, f.rgb, depth, f.pose)
    _, depth_raw = wire.encode_frame_payloads(f)
    assert depth_raw == bytes([0xE8, 0x03, 0xD0, 0x07, 0x00, 0x00, 0xFF, 0xFF])


def test_depth_payload_length_192x256():
    depth = DepthMap(np.zeros((256, 192), dtype=np.uint16))
    f = make_frame(width=2, height=2)
    f = Frame(f.index, f.timestamp_ns, f.rgb, depth, f.pose)
    _, depth_raw = wire.encode_frame_payloads(f)
    assert len(depth_raw) == 98304


def test_base64_known_vector():
    assert wire.encode_rest_image(b"AR") == "QVI="


def test_base64_empty_rejected():
    with pytest.raises(wire.EncodingFailure):
        wire.encode_rest_image(b"")


def test_base64_round_trip():
    rng = np.random.default_rng(5)
    blob = rng.integers(0, 256, size=1024, dtype=np.uint16).astype(np.uint8).tobytes()
    assert wire.decode_rest_image(wire.encode_rest_image(blob)) == blob


def test_control_command_round_trip():
    cmd = wire.set_object_pose("s", "teapot", Pose.identity(), 2.0)
    buf = wire.encode(wire.MessageType.CONTROL, cmd.to_header())
    _, header, _ = wire.decode(buf)
    assert wire.ControlCommand.from_header(header) == cmd


def test_control_command_unknown_kind():
    with pytest.raises(wire.InvalidCommand):
        wire.ControlCommand("warp_drive", "s")


def test_replay_mode_validation():
    with pytest.raises(wire.InvalidCommand):
        wire.replay_mode("s", "backwards")
