"""Binary wire protocol: length-prefixed frames with CRC-checked payloads.

Frame layout (all little-endian):

    magic   4 bytes  b"ORK1"
    type    u8
    length  u32      payload byte count
    payload length bytes
    crc     u32      CRC32 of the payload

Message types below 64 are session traffic; types >= 64 are driver
diagnostics relayed verbatim to observers.  A CONTROL payload is exactly
12 bytes: three float32 values throttle, brake, steering.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

from .ins import InsReading
from .vehicle import CORE_CHANNELS, ControlCommand, GroundTruthState, state_channels

MAGIC = b"ORK1"
HEADER = struct.Struct("<4sBI")
CRC = struct.Struct("<I")
MAX_PAYLOAD = 64 * 1024 * 1024


class MsgType(IntEnum):
    STATE = 1
    FRAME = 2
    CONTROL = 3
    SESSION = 4
    ACK = 5
    ERROR = 6
    DIAG_MAP = 64
    DIAG_POSE = 65
    DIAG_PLAN = 66
    DIAG_OBSERVATION = 67


DIAG_BASE = 64


class WireError(ValueError):
    """Base class for framing failures."""


class BadMagicError(WireError):
    pass


class BadCrcError(WireError):
    pass


class TruncatedError(WireError):
    pass


@dataclass(frozen=True)
class WireMessage:
    type: int
    payload: bytes


def encode_message(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise WireError(f"payload too large: {len(payload)}")
    return (
        HEADER.pack(MAGIC, int(msg_type), len(payload))
        + payload
        + CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)
    )


def decode_message(data: bytes) -> WireMessage:
    """Decode exactly one frame; raises a distinct error per failure mode."""
    if len(data) < HEADER.size:
        raise TruncatedError(f"frame shorter than header: {len(data)}")
    magic, msg_type, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    end = HEADER.size + length
    if len(data) < end + CRC.size:
        raise TruncatedError(f"frame truncated: need {end + CRC.size}, have {len(data)}")
    payload = data[HEADER.size : end]
    (crc,) = CRC.unpack_from(data, end)
    if crc != zlib.crc32(payload) & 0xFFFFFFFF:
        raise BadCrcError("payload CRC mismatch")
    return WireMessage(type=msg_type, payload=bytes(payload))


def frame_size(data: bytes) -> int | None:
    """Total frame length once the header is available, else None."""
    if len(data) < HEADER.size:
        return None
    magic, _, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    return HEADER.size + length + CRC.size


class MessageStream:
    """Incremental decoder for a byte stream of concatenated frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf.extend(data)
        out = []
        while True:
            size = frame_size(bytes(self._buf[:HEADER.size]))
            if size is None or len(self._buf) < size:
                break
            out.append(decode_message(bytes(self._buf[:size])))
            del self._buf[:size]
        return out


# -- CONTROL ----------------------------------------------------------------------

_CONTROL = struct.Struct("<fff")


def encode_control(cmd: ControlCommand) -> bytes:
    return _CONTROL.pack(cmd.throttle, cmd.brake, cmd.steering)


def decode_control(payload: bytes) -> ControlCommand:
    if len(payload) != _CONTROL.size:
        raise WireError(f"CONTROL payload must be {_CONTROL.size} bytes, got {len(payload)}")
    t, b, s = _CONTROL.unpack(payload)
    return ControlCommand(throttle=t, brake=b, steering=s)


# -- STATE ------------------------------------------------------------------------

FLAG_TRUTH = 1
FLAG_INS = 2

_TRUTH_HEAD = struct.Struct("<BQdH")
_INS_HEAD = struct.Struct("<Qd")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class StatePayload:
    tick: int
    sim_time: float
    channels: dict[str, float] | None  # ground-truth channel map, observers only
    ins: InsReading | None
    speed: float | None

    @property
    def has_truth(self) -> bool:
        return self.channels is not None


def encode_state_payload(
    state: GroundTruthState | None,
    ins: InsReading | None,
    speed: float | None,
) -> bytes:
    flags = (FLAG_TRUTH if state is not None else 0) | (FLAG_INS if ins is not None else 0)
    out = bytearray([flags])
    if state is not None:
        chans = state_channels(state)
        extras = [(k, v) for k, v in chans.items() if k not in CORE_CHANNELS]
        out += _TRUTH_HEAD.pack(SCHEMA_VERSION, state.tick, state.sim_time, len(CORE_CHANNELS))
        out += struct.pack(f"<{len(CORE_CHANNELS)}d", *(chans[c] for c in CORE_CHANNELS))
        out += struct.pack("<B", len(extras))
        for key, val in extras:
            raw = key.encode()
            out += struct.pack("<B", len(raw)) + raw + struct.pack("<d", val)
    if ins is not None:
        vals = ins.as_tuple()
        out += _INS_HEAD.pack(0, speed if speed is not None else 0.0)
        out += struct.pack("<17d", *vals)
    return bytes(out)


def decode_state_payload(payload: bytes) -> StatePayload:
    flags = payload[0]
    off = 1
    channels = None
    tick = 0
    sim_time = 0.0
    ins = None
    speed = None
    if flags & FLAG_TRUTH:
        ver, tick, sim_time, n_core = _TRUTH_HEAD.unpack_from(payload, off)
        if ver != SCHEMA_VERSION:
            raise WireError(f"unknown state schema version {ver}")
        off += _TRUTH_HEAD.size
        vals = struct.unpack_from(f"<{n_core}d", payload, off)
        off += 8 * n_core
        channels = dict(zip(CORE_CHANNELS, vals))
        (n_extra,) = struct.unpack_from("<B", payload, off)
        off += 1
        for _ in range(n_extra):
            (klen,) = struct.unpack_from("<B", payload, off)
            off += 1
            key = payload[off : off + klen].decode()
            off += klen
            (val,) = struct.unpack_from("<d", payload, off)
            off += 8
            channels[key] = val
    if flags & FLAG_INS:
        _, speed = _INS_HEAD.unpack_from(payload, off)
        off += _INS_HEAD.size
        vals = struct.unpack_from("<17d", payload, off)
        off += 17 * 8
        ins = InsReading.from_values(vals)
        if not (flags & FLAG_TRUTH):
            sim_time = ins.ins_timestamp
    return StatePayload(tick=tick, sim_time=sim_time, channels=channels, ins=ins, speed=speed)


# -- FRAME ------------------------------------------------------------------------

_FRAME_HEAD = struct.Struct("<QdBBHHfBI")

FRAME_RAW = 0
FRAME_ZLIB = 1


@dataclass(frozen=True)
class FramePayload:
    tick: int
    sim_time: float
    repeat: bool
    camera_kind: int  # 0 chase, 1 cockpit
    width: int
    height: int
    hfov: float
    data: bytes  # row-major uint8 label ids

    def image(self):
        import numpy as np

        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width)


def encode_frame_payload(
    tick: int,
    sim_time: float,
    repeat: bool,
    camera_kind: int,
    width: int,
    height: int,
    hfov: float,
    ids: bytes,
    compress: bool = True,
) -> bytes:
    body = zlib.compress(ids, 1) if compress else ids
    head = _FRAME_HEAD.pack(
        tick,
        sim_time,
        1 if repeat else 0,
        camera_kind,
        width,
        height,
        hfov,
        FRAME_ZLIB if compress else FRAME_RAW,
        len(body),
    )
    return head + body


def decode_frame_payload(payload: bytes) -> FramePayload:
    tick, sim_time, repeat, kind, w, h, hfov, enc, n = _FRAME_HEAD.unpack_from(payload)
    body = payload[_FRAME_HEAD.size : _FRAME_HEAD.size + n]
    if len(body) != n:
        raise WireError("frame payload truncated")
    data = zlib.decompress(body) if enc == FRAME_ZLIB else body
    if len(data) != w * h:
        raise WireError(f"frame pixel count mismatch: {len(data)} != {w}*{h}")
    return FramePayload(
        tick=tick,
        sim_time=sim_time,
        repeat=bool(repeat),
        camera_kind=kind,
        width=w,
        height=h,
        hfov=hfov,
        data=data,
    )


# -- JSON-bodied message types -------------------------------------------------------


def encode_json_payload(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()


def decode_json_payload(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"bad JSON payload: {exc}") from None
    if not isinstance(obj, dict):
        raise WireError("JSON payload must be an object")
    return obj
