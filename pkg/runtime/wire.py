# runtime/wire.py

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Mapping

import numpy as np

from runtime.errors import ProtocolError
from utils.errors import RecordFormatError
from utils.records import decode_records, encode_records

logger = logging.getLogger(__name__)

MAGIC = b"CTRN"
PROTOCOL_VERSION = 1

# frame  := body_len u32 | body
# body   := magic | protocol u16 | kind u8 | task_id str16 | peer_id str16
#           | version u64 | request_id u64 | step u64 | tensor records
_FIXED = struct.Struct("<HB")
_COUNTERS = struct.Struct("<QQQ")


class MessageKind(IntEnum):
    REQUEST = 1   # inputs for a forward pass of task_id, sent by peer_id at its step
    RESPONSE = 2  # outputs of snapshot `version`, published at publisher step `step`
    PUBLISH = 3   # fresh parameter snapshot of task_id, `version` at publisher step `step`


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    task_id: str
    peer_id: str = ""
    version: int = 0
    request_id: int = 0
    step: int = 0
    arrays: Mapping[str, np.ndarray] = field(default_factory=dict)


def _pack_str(value: str) -> bytes:
    encoded = value.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ProtocolError(f"identifier too long ({len(encoded)} bytes)")
    return struct.pack("<H", len(encoded)) + encoded


def _unpack_str(buffer: bytes, offset: int):
    (length,) = struct.unpack_from("<H", buffer, offset)
    offset += 2
    if offset + length > len(buffer):
        raise ProtocolError("truncated identifier")
    return bytes(buffer[offset:offset + length]).decode("utf-8"), offset + length


def encode_message(message: Message) -> bytes:
    body = b"".join([
        MAGIC,
        _FIXED.pack(PROTOCOL_VERSION, int(message.kind)),
        _pack_str(message.task_id),
        _pack_str(message.peer_id),
        _COUNTERS.pack(message.version, message.request_id, message.step),
        encode_records(message.arrays),
    ])
    return struct.pack("<I", len(body)) + body


def decode_message(frame: bytes) -> Message:
    """Decode exactly one length-prefixed frame; anything malformed raises ``ProtocolError``."""
    try:
        (length,) = struct.unpack_from("<I", frame, 0)
        if length != len(frame) - 4:
            raise ProtocolError(f"frame announces {length} body bytes, got {len(frame) - 4}")
        if bytes(frame[4:8]) != MAGIC:
            raise ProtocolError("bad magic")
        protocol, kind = _FIXED.unpack_from(frame, 8)
        if protocol != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {protocol}")
        try:
            kind = MessageKind(kind)
        except ValueError:
            raise ProtocolError(f"unknown message kind {kind}") from None
        offset = 8 + _FIXED.size
        task_id, offset = _unpack_str(frame, offset)
        peer_id, offset = _unpack_str(frame, offset)
        version, request_id, step = _COUNTERS.unpack_from(frame, offset)
        arrays, end = decode_records(frame, offset + _COUNTERS.size)
    except (struct.error, UnicodeDecodeError, RecordFormatError) as e:
        raise ProtocolError(f"malformed message: {e}") from e
    if end != len(frame):
        raise ProtocolError(f"{len(frame) - end} trailing bytes after message")
    return Message(kind, task_id, peer_id, version, request_id, step, arrays)


def as_arrays(outputs: Mapping[str, object]) -> Dict[str, np.ndarray]:
    """Plain arrays from tensors (or arrays), ready for the wire."""
    return {key: np.asarray(getattr(value, "data", value), dtype=np.float64) for key, value in outputs.items()}
