"""Synchronous MODBUS/TCP client used by the control side.

One request in flight at a time; the caller is responsible for confining a
client instance to a single thread.
"""

from __future__ import annotations

import socket
import struct

from ..errors import ProtocolError, TransportError
from . import frames

_EXCEPTION_NAMES = {
    frames.EX_ILLEGAL_FUNCTION: "illegal function",
    frames.EX_ILLEGAL_ADDRESS: "illegal data address",
    frames.EX_ILLEGAL_VALUE: "illegal data value",
}


class ModbusClient:
    """Holding-register reads and writes against one server."""

    def __init__(self, host: str, port: int = 15020, unit_id: int = 1, timeout_s: float = 2.0):
        if timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        self.host = host
        self.port = port
        self.unit_id = unit_id
        self.timeout_s = timeout_s
        self._next_tid = 0
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout_s)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def _transact(self, pdu: bytes) -> bytes:
        if self._sock is None:
            raise TransportError("client is closed")
        tid = self._next_tid
        self._next_tid = (self._next_tid + 1) & 0xFFFF
        request = frames.MbapFrame(transaction_id=tid, unit_id=self.unit_id, pdu=pdu)
        try:
            self._sock.sendall(frames.frame_to_bytes(request))
            response = frames.read_frame(self._sock)
        except socket.timeout as exc:
            raise TransportError(
                f"no response from {self.host}:{self.port} within {self.timeout_s} s"
            ) from exc
        except (ConnectionError, OSError) as exc:
            raise TransportError(f"connection to {self.host}:{self.port} failed: {exc}") from exc
        if response.transaction_id != tid:
            raise ProtocolError(
                f"transaction id mismatch: sent {tid}, got {response.transaction_id}"
            )
        if frames.is_exception(response.pdu):
            if len(response.pdu) < 2:
                raise ProtocolError("truncated exception response")
            code = response.pdu[1]
            name = _EXCEPTION_NAMES.get(code, "unknown")
            raise ProtocolError(f"server exception 0x{code:02X} ({name})", exception_code=code)
        if not response.pdu or response.pdu[0] != pdu[0]:
            raise ProtocolError("response function code does not match request")
        return response.pdu

    def read_holding(self, address: int, count: int = 1) -> list:
        """Read `count` registers; returns unsigned 16-bit words."""
        if not 1 <= count <= frames.MAX_READ_COUNT:
            raise ValueError(f"count must be in 1..{frames.MAX_READ_COUNT}, got {count}")
        if not 0 <= address <= 0xFFFF:
            raise ValueError(f"address {address} out of range")
        pdu = self._transact(frames.build_read_request(address, count))
        if len(pdu) < 2 or pdu[1] != 2 * count or len(pdu) != 2 + 2 * count:
            raise ProtocolError("malformed read response")
        return list(struct.unpack(">%dH" % count, pdu[2:]))

    def write_register(self, address: int, raw: int) -> None:
        """Write one register; `raw` may be a signed count or a u16 word."""
        if not 0 <= address <= 0xFFFF:
            raise ValueError(f"address {address} out of range")
        if not -0x8000 <= raw <= 0xFFFF:
            raise ValueError(f"raw value {raw} does not fit 16 bits")
        word = raw & 0xFFFF
        pdu = self._transact(frames.build_write_single(address, word))
        if len(pdu) != 5:
            raise ProtocolError("malformed write echo")
        echo_addr, echo_word = struct.unpack(">HH", pdu[1:])
        if echo_addr != address or echo_word != word:
            raise ProtocolError("write echo does not match request")

    def write_registers(self, address: int, raws) -> None:
        """Write a contiguous block of registers."""
        raws = list(raws)
        if not 1 <= len(raws) <= frames.MAX_WRITE_COUNT:
            raise ValueError(f"count must be in 1..{frames.MAX_WRITE_COUNT}, got {len(raws)}")
        if not 0 <= address <= 0xFFFF:
            raise ValueError(f"address {address} out of range")
        for raw in raws:
            if not -0x8000 <= raw <= 0xFFFF:
                raise ValueError(f"raw value {raw} does not fit 16 bits")
        pdu = self._transact(frames.build_write_multiple(address, raws))
        if len(pdu) != 5:
            raise ProtocolError("malformed write echo")
        echo_addr, echo_count = struct.unpack(">HH", pdu[1:])
        if echo_addr != address or echo_count != len(raws):
            raise ProtocolError("write echo does not match request")
