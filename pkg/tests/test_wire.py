import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openrace import wire
from openrace.ins import InsReading
from openrace.vehicle import ControlCommand, initial_state


MSG_TYPES = [
    wire.MsgType.STATE,
    wire.MsgType.FRAME,
    wire.MsgType.CONTROL,
    wire.MsgType.SESSION,
    wire.MsgType.ACK,
    wire.MsgType.ERROR,
    wire.MsgType.DIAG_MAP,
    wire.MsgType.DIAG_POSE,
    wire.MsgType.DIAG_PLAN,
    wire.MsgType.DIAG_OBSERVATION,
]


class TestFraming:
    @given(
        msg_type=st.sampled_from(MSG_TYPES),
        payload=st.binary(min_size=0, max_size=4096),
    )
    @settings(max_examples=1000, deadline=None)
    def test_encode_decode_identity(self, msg_type, payload):
        msg = wire.decode_message(wire.encode_message(msg_type, payload))
        assert msg.type == msg_type
        assert msg.payload == payload

    def test_flipped_payload_bit_fails_crc(self):
        frame = bytearray(wire.encode_message(wire.MsgType.SESSION, b'{"cmd":"x"}'))
        frame[wire.HEADER.size + 3] ^= 0x10
        with pytest.raises(wire.BadCrcError):
            wire.decode_message(bytes(frame))

    def test_bad_magic(self):
        frame = bytearray(wire.encode_message(wire.MsgType.ACK, b"{}"))
        frame[0] = ord("X")
        with pytest.raises(wire.BadMagicError):
            wire.decode_message(bytes(frame))

    def test_truncation(self):
        frame = wire.encode_message(wire.MsgType.ACK, b"0123456789")
        with pytest.raises(wire.TruncatedError):
            wire.decode_message(frame[:-3])
        with pytest.raises(wire.TruncatedError):
            wire.decode_message(frame[:5])

    def test_stream_reassembly_across_chunks(self):
        frames = [
            wire.encode_message(wire.MsgType.ACK, bytes([i]) * (i + 1)) for i in range(24)
        ]
        blob = b"".join(frames)
        stream = wire.MessageStream()
        out = []
        for i in range(0, len(blob), 7):
            out.extend(stream.feed(blob[i : i + 7]))
        assert len(out) == 24
        assert all(m.payload == bytes([i]) * (i + 1) for i, m in enumerate(out))


class TestControlPayload:
    def test_exactly_twelve_bytes_three_le_floats(self):
        payload = wire.encode_control(ControlCommand(0.25, 0.5, -0.75))
        assert len(payload) == 12
        assert struct.unpack("<fff", payload) == (0.25, 0.5, -0.75)

    def test_round_trip(self):
        cmd = ControlCommand(0.125, 0.0625, -0.5)
        assert wire.decode_control(wire.encode_control(cmd)) == cmd

    def test_wrong_size_rejected(self):
        with pytest.raises(wire.WireError):
            wire.decode_control(b"\x00" * 11)


class TestStatePayload:
    def test_truth_round_trip(self, oval, gt3):
        state = initial_state(oval, gt3, speed=12.0)
        payload = wire.encode_state_payload(state, None, None)
        decoded = wire.decode_state_payload(payload)
        assert decoded.has_truth
        assert decoded.ins is None
        assert decoded.channels["x"] == state.x
        assert decoded.channels["lap_progress_s"] == state.s
        assert decoded.channels["distance_traveled"] == 0.0

    def test_driver_payload_has_no_truth_fields(self, oval, gt3):
        state = initial_state(oval, gt3, speed=12.0)
        ins = InsReading.from_values(tuple(float(i) for i in range(17)))
        payload = wire.encode_state_payload(None, ins, 12.0)
        decoded = wire.decode_state_payload(payload)
        assert not decoded.has_truth
        assert decoded.channels is None
        assert decoded.ins == ins
        assert decoded.speed == 12.0

    def test_combined_debug_payload(self, oval, gt3):
        state = initial_state(oval, gt3)
        ins = InsReading.from_values(tuple(float(i) for i in range(17)))
        decoded = wire.decode_state_payload(wire.encode_state_payload(state, ins, 0.0))
        assert decoded.has_truth and decoded.ins is not None


class TestFramePayload:
    def test_round_trip_compressed(self):
        import numpy as np

        ids = (np.arange(64 * 36, dtype=np.uint8) % 12).reshape(36, 64)
        payload = wire.encode_frame_payload(7, 0.5, False, 0, 64, 36, 1.4, ids.tobytes())
        decoded = wire.decode_frame_payload(payload)
        assert decoded.tick == 7
        assert decoded.width == 64 and decoded.height == 36
        assert not decoded.repeat
        assert (decoded.image() == ids).all()

    def test_pixel_count_mismatch_rejected(self):
        payload = wire.encode_frame_payload(0, 0.0, False, 0, 10, 10, 1.0, b"\x00" * 99)
        with pytest.raises(wire.WireError):
            wire.decode_frame_payload(payload)


class TestJsonPayload:
    def test_round_trip(self):
        obj = {"cmd": "hello", "role": "driver", "n": 3}
        assert wire.decode_json_payload(wire.encode_json_payload(obj)) == obj

    def test_non_object_rejected(self):
        with pytest.raises(wire.WireError):
            wire.decode_json_payload(b"[1,2,3]")
