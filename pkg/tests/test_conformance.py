"""The checked-in conformance vectors are the contract shared with the
browser console; these tests pin the server implementation to them."""

import json
from pathlib import Path

import pytest

from arbench import wire

VECTORS = json.loads(
    (Path(__file__).resolve().parent.parent / "conformance" / "wire_vectors.json").read_text()
)
ORACLE = json.loads(
    (Path(__file__).resolve().parent.parent / "conformance" / "ramp_oracle.json").read_text()
)


@pytest.mark.parametrize("vector", VECTORS["valid"], ids=lambda v: v["name"])
def test_valid_vector_decodes(vector):
    msg_type, header, payloads = wire.decode(bytes.fromhex(vector["bytes_hex"]))
    assert int(msg_type) == vector["msg_type"]
    assert header == vector["header"]
    assert [p.hex() for p in payloads] == vector["payloads_hex"]


@pytest.mark.parametrize("vector", VECTORS["valid"], ids=lambda v: v["name"])
def test_valid_vector_reencodes_bit_exact(vector):
    msg_type, header, payloads = wire.decode(bytes.fromhex(vector["bytes_hex"]))
    assert wire.encode(msg_type, header, payloads).hex() == vector["bytes_hex"]


@pytest.mark.parametrize("vector", VECTORS["invalid"], ids=lambda v: v["name"])
def test_invalid_vector_rejected_with_code(vector):
    with pytest.raises(wire.WireError) as err:
        wire.decode(bytes.fromhex(vector["bytes_hex"]))
    assert err.value.code == vector["error"]


def test_vector_count_floor():
    assert len(VECTORS["valid"]) >= 10


def test_ramp_oracle_boundaries_are_analytic():
    h = ORACLE["height"]
    rows = ORACLE["row_depth_mm"]
    assert rows[0] == 500 and rows[-1] == 1500
    for case in ORACLE["cases"]:
        threshold = case["plane_depth_m"] * 1000.0
        expected = [depth > threshold for depth in rows]
        assert case["plane_rows"] == expected
        first = expected.index(True) if True in expected else -1
        assert case["first_plane_row"] == first


def test_ramp_oracle_control_envelopes_decode():
    for case in ORACLE["cases"]:
        msg_type, header, _ = wire.decode(bytes.fromhex(case["control_hex"]))
        assert msg_type == wire.MessageType.CONTROL
        cmd = wire.ControlCommand.from_header(header)
        assert cmd.kind == "set_plane_depth"
        assert cmd.params["depth_m"] == case["plane_depth_m"]
