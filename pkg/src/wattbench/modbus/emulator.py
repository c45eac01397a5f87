"""MODBUS/TCP server wrapping a PlantModel.

Three kinds of threads: one ticker advancing the model on an absolute-
deadline schedule (so transient stalls are caught up without drift), one
acceptor, and one handler per client connection.  All state access goes
through a single lock, which makes the observable behavior equal to some
serialized order of tick, read, and write events.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time

from ..errors import ProtocolError
from . import frames
from .plant import PlantModel, RegisterFault

log = logging.getLogger(__name__)

_POLL_S = 0.2


class EmulatorServer:
    """Serves one PlantModel over MODBUS/TCP; start() / stop() lifecycle."""

    def __init__(
        self,
        plant: PlantModel,
        host: str = "127.0.0.1",
        port: int = 15020,
        time_scale: float = 3600.0,
    ):
        if time_scale < 1.0:
            raise ValueError(f"time_scale must be >= 1, got {time_scale}")
        self.plant = plant
        self.host = host
        self.port = port
        self.time_scale = time_scale
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._listener = None
        self._threads: list[threading.Thread] = []

    @property
    def address(self):
        """(host, port) actually bound; useful with port 0."""
        if self._listener is None:
            raise RuntimeError("server is not running")
        return self._listener.getsockname()[:2]

    def start(self) -> None:
        """Bind and begin serving; raises OSError if the port is taken."""
        if self._listener is not None:
            raise RuntimeError("server already started")
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self.port))
            listener.listen()
        except OSError:
            listener.close()
            raise
        listener.settimeout(_POLL_S)
        self._listener = listener
        self._stop.clear()
        for target, name in ((self._tick_loop, "ticker"), (self._accept_loop, "acceptor")):
            t = threading.Thread(target=target, name=f"emulator-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        log.info("emulator serving on %s:%d, tick %ds, time scale %g",
                 *self.address, self.plant.tick_s, self.time_scale)

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5.0)
        self._threads.clear()
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    def __enter__(self):
        if self._listener is None:
            self.start()
        return self

    def __exit__(self, *exc_info):
        self.stop()

    # -- ticker -------------------------------------------------------------

    def _tick_loop(self) -> None:
        period = self.plant.tick_s / self.time_scale
        start = time.monotonic()
        k = 0
        while not self._stop.is_set():
            k += 1
            delay = start + k * period - time.monotonic()
            if delay > 0:
                # Absolute deadlines: a late tick shortens the next sleep
                # instead of shifting the whole schedule.
                if self._stop.wait(delay):
                    return
            with self._lock:
                self.plant.advance_tick()

    # -- connections --------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(
                target=self._serve_connection, args=(conn, peer),
                name=f"emulator-client-{peer[1]}", daemon=True,
            )
            t.start()

    def _serve_connection(self, conn: socket.socket, peer) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(_POLL_S)
        try:
            while not self._stop.is_set():
                try:
                    frame = frames.read_frame(conn)
                except socket.timeout:
                    continue
                except ConnectionError:
                    return
                except ProtocolError as exc:
                    log.warning("malformed frame from %s:%d, closing: %s", peer[0], peer[1], exc)
                    return
                reply_pdu = self._handle_pdu(frame.pdu)
                reply = frames.MbapFrame(
                    transaction_id=frame.transaction_id,
                    unit_id=frame.unit_id,
                    pdu=reply_pdu,
                )
                try:
                    conn.sendall(frames.frame_to_bytes(reply))
                except OSError:
                    return
        finally:
            conn.close()

    def _handle_pdu(self, pdu: bytes) -> bytes:
        fc = pdu[0]
        if fc == frames.FC_READ_HOLDING:
            return self._handle_read(pdu)
        if fc == frames.FC_WRITE_SINGLE:
            return self._handle_write_single(pdu)
        if fc == frames.FC_WRITE_MULTIPLE:
            return self._handle_write_multiple(pdu)
        return frames.build_exception(fc, frames.EX_ILLEGAL_FUNCTION)

    def _handle_read(self, pdu: bytes) -> bytes:
        fc = pdu[0]
        if len(pdu) != 5:
            return frames.build_exception(fc, frames.EX_ILLEGAL_VALUE)
        address, count = struct.unpack(">HH", pdu[1:])
        if not 1 <= count <= frames.MAX_READ_COUNT:
            return frames.build_exception(fc, frames.EX_ILLEGAL_VALUE)
        with self._lock:
            try:
                words = self.plant.handle_read(address, count)
            except RegisterFault as fault:
                return frames.build_exception(fc, fault.code)
        return frames.build_read_response(words)

    def _handle_write_single(self, pdu: bytes) -> bytes:
        fc = pdu[0]
        if len(pdu) != 5:
            return frames.build_exception(fc, frames.EX_ILLEGAL_VALUE)
        address, word = struct.unpack(">HH", pdu[1:])
        with self._lock:
            try:
                self.plant.handle_write(address, word)
            except RegisterFault as fault:
                return frames.build_exception(fc, fault.code)
        return bytes(pdu)

    def _handle_write_multiple(self, pdu: bytes) -> bytes:
        fc = pdu[0]
        if len(pdu) < 6:
            return frames.build_exception(fc, frames.EX_ILLEGAL_VALUE)
        address, count, byte_count = struct.unpack(">HHB", pdu[1:6])
        if (
            not 1 <= count <= frames.MAX_WRITE_COUNT
            or byte_count != 2 * count
            or len(pdu) != 6 + byte_count
        ):
            return frames.build_exception(fc, frames.EX_ILLEGAL_VALUE)
        words = struct.unpack(">%dH" % count, pdu[6:])
        with self._lock:
            try:
                # Validate the whole block first so a rejected write is atomic.
                for offset in range(count):
                    self.plant.check_writable(address + offset)
                for offset, word in enumerate(words):
                    self.plant.handle_write(address + offset, word)
            except RegisterFault as fault:
                return frames.build_exception(fc, fault.code)
        return frames.build_write_multiple_response(address, count)

    # -- helpers for in-process callers (tests, transfer harness) -----------

    def snapshot(self, names) -> dict:
        """Engineering values of named registers under the lock, one tick."""
        with self._lock:
            return {name: self.plant.value(name) for name in names}
