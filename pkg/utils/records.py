# utils/records.py

import logging
import struct
from typing import Dict, Mapping, Tuple

import numpy as np

from utils.errors import RecordFormatError

logger = logging.getLogger(__name__)

PARAMETER_MAGIC = b"CTPM"
PARAMETER_FORMAT_VERSION = 1

# --- Tensor records ---
# record := name_len u16 | name utf-8 | ndim u8 | dims u32 × ndim | values f64 little-endian


def encode_records(arrays: Mapping[str, np.ndarray]) -> bytes:
    """
    Serializes named arrays to the flat record format.

    Args:
        arrays: Ordered mapping of record name to array. Values are stored as
            little-endian 64-bit floats in C order.

    Returns:
        bytes: A u32 record count followed by the records.
    """
    chunks = [struct.pack("<I", len(arrays))]
    for name, array in arrays.items():
        encoded_name = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f8")
        if len(encoded_name) > 0xFFFF or data.ndim > 0xFF:
            raise RecordFormatError(f"record '{name}' exceeds the name or rank limit")
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def decode_records(buffer: bytes, offset: int = 0) -> Tuple[Dict[str, np.ndarray], int]:
    """Inverse of ``encode_records``; returns the arrays and the offset just past them."""
    try:
        (count,) = struct.unpack_from("<I", buffer, offset)
        offset += 4
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buffer, offset)
            offset += 2
            name = bytes(buffer[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", buffer, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", buffer, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            nbytes = 8 * size
            if offset + nbytes > len(buffer):
                raise RecordFormatError(f"record '{name}' is truncated")
            arrays[name] = np.frombuffer(buffer, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shape)
            offset += nbytes
    except (struct.error, UnicodeDecodeError) as e:
        raise RecordFormatError(f"malformed tensor records: {e}") from e
    return arrays, offset


# --- Parameter blobs ---

def encode_parameter_blob(task_id: str, version: int, arrays: Mapping[str, np.ndarray]) -> bytes:
    encoded_id = task_id.encode("utf-8")
    header = PARAMETER_MAGIC + struct.pack("<HQH", PARAMETER_FORMAT_VERSION, version, len(encoded_id)) + encoded_id
    return header + encode_records(arrays)


def decode_parameter_blob(blob: bytes) -> Tuple[str, int, Dict[str, np.ndarray]]:
    if bytes(blob[:4]) != PARAMETER_MAGIC:
        raise RecordFormatError("not a parameter blob (bad magic)")
    try:
        format_version, version, id_len = struct.unpack_from("<HQH", blob, 4)
    except struct.error as e:
        raise RecordFormatError(f"truncated parameter header: {e}") from e
    if format_version != PARAMETER_FORMAT_VERSION:
        raise RecordFormatError(f"unsupported parameter format version {format_version}")
    start = 4 + struct.calcsize("<HQH")
    task_id = bytes(blob[start:start + id_len]).decode("utf-8")
    arrays, end = decode_records(blob, start + id_len)
    if end != len(blob):
        raise RecordFormatError(f"{len(blob) - end} trailing bytes after parameter records")
    return task_id, version, arrays
