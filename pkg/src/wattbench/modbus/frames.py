"""MBAP framing and PDU packing for the small function-code subset we speak.

A frame on the wire is a 7-byte header (transaction id, protocol id 0,
length, unit id) followed by the PDU.  The length field counts the unit id
plus the PDU bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import ProtocolError

HEADER = struct.Struct(">HHHB")
HEADER_SIZE = HEADER.size

FC_READ_HOLDING = 0x03
FC_WRITE_SINGLE = 0x06
FC_WRITE_MULTIPLE = 0x10

EX_ILLEGAL_FUNCTION = 0x01
EX_ILLEGAL_ADDRESS = 0x02
EX_ILLEGAL_VALUE = 0x03

MAX_READ_COUNT = 125
MAX_WRITE_COUNT = 123
# unit id byte plus the largest PDU we would ever see
MAX_LENGTH_FIELD = 254


@dataclass(frozen=True)
class MbapFrame:
    transaction_id: int
    unit_id: int
    pdu: bytes
    protocol_id: int = 0


def frame_to_bytes(frame: MbapFrame) -> bytes:
    if not frame.pdu:
        raise ValueError("frame must carry a non-empty PDU")
    header = HEADER.pack(
        frame.transaction_id & 0xFFFF,
        frame.protocol_id,
        len(frame.pdu) + 1,
        frame.unit_id & 0xFF,
    )
    return header + frame.pdu


def parse_header(header: bytes):
    """Header bytes -> (transaction_id, length, unit_id).

    Raises ProtocolError on a malformed header; the caller is expected to
    drop the connection in that case.
    """
    if len(header) != HEADER_SIZE:
        raise ProtocolError(f"short MBAP header: {len(header)} bytes")
    tid, pid, length, unit_id = HEADER.unpack(header)
    if pid != 0:
        raise ProtocolError(f"unsupported protocol id {pid}")
    if not 2 <= length <= MAX_LENGTH_FIELD:
        raise ProtocolError(f"MBAP length field {length} out of range")
    return tid, length, unit_id


def parse_frame(data: bytes) -> MbapFrame:
    """Whole-buffer parse, mainly for tests; rejects trailing bytes."""
    tid, length, unit_id = parse_header(data[:HEADER_SIZE])
    body = data[HEADER_SIZE:]
    if len(body) != length - 1:
        raise ProtocolError(f"MBAP length {length} does not match {len(body)} body bytes")
    return MbapFrame(transaction_id=tid, unit_id=unit_id, pdu=bytes(body))


def recv_exact(sock, n: int) -> bytes:
    """Read exactly n bytes or raise ConnectionError on EOF."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("connection closed mid-frame" if chunks or n != remaining else "connection closed")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock) -> MbapFrame:
    """Read one frame from a connected socket.

    Raises ConnectionError on a clean or mid-frame EOF and ProtocolError on
    a malformed header.
    """
    header = recv_exact(sock, HEADER_SIZE)
    tid, length, unit_id = parse_header(header)
    body = recv_exact(sock, length - 1)
    return MbapFrame(transaction_id=tid, unit_id=unit_id, pdu=body)


def build_read_request(address: int, count: int) -> bytes:
    return struct.pack(">BHH", FC_READ_HOLDING, address, count)


def build_read_response(words) -> bytes:
    payload = struct.pack(">%dH" % len(words), *[w & 0xFFFF for w in words])
    return struct.pack(">BB", FC_READ_HOLDING, len(payload)) + payload


def build_write_single(address: int, word: int) -> bytes:
    return struct.pack(">BHH", FC_WRITE_SINGLE, address, word & 0xFFFF)


def build_write_multiple(address: int, words) -> bytes:
    payload = struct.pack(">%dH" % len(words), *[w & 0xFFFF for w in words])
    return (
        struct.pack(">BHHB", FC_WRITE_MULTIPLE, address, len(words), len(payload)) + payload
    )


def build_write_multiple_response(address: int, count: int) -> bytes:
    return struct.pack(">BHH", FC_WRITE_MULTIPLE, address, count)


def build_exception(function: int, code: int) -> bytes:
    return struct.pack(">BB", (function | 0x80) & 0xFF, code)


def is_exception(pdu: bytes) -> bool:
    return bool(pdu) and bool(pdu[0] & 0x80)
