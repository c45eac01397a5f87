"""Newline-delimited JSON access to one environment over TCP.

One controller at a time; a second connection is answered with a "busy"
error and dropped. Requests are objects {"id", "cmd", ...}; every response
echoes the id. Malformed input gets {"error": "bad_request"} and the
connection stays open. No pipelining: the server reads the next request
only after answering the previous one.
"""

from __future__ import annotations

import json
import logging
import socket
import threading

from .env import ArbitrageEnv
from .errors import LifecycleError, TransportError

log = logging.getLogger(__name__)

_POLL_S = 0.2


def _result_payload(obs, reward, terminated, truncated, info) -> dict:
    return {
        "observation": list(obs),
        "reward": reward,
        "terminated": terminated,
        "truncated": truncated,
        "info": info,
    }


class EnvServer:
    """Serves ArbitrageEnv lifecycle commands; start() / stop() lifecycle."""

    def __init__(self, env: ArbitrageEnv, host: str = "127.0.0.1", port: int = 0):
        self.env = env
        self.host = host
        self.port = port
        self._listener = None
        self._stop = threading.Event()
        self._threads = []
        self._controller_lock = threading.Lock()

    @property
    def address(self):
        if self._listener is None:
            raise RuntimeError("server is not running")
        return self._listener.getsockname()[:2]

    def start(self) -> None:
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
        t = threading.Thread(target=self._accept_loop, name="env-acceptor", daemon=True)
        t.start()
        self._threads.append(t)
        log.info("environment served on %s:%d", *self.address)

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

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(
                target=self._serve_connection, args=(conn,),
                name=f"env-controller-{peer[1]}", daemon=True,
            )
            t.start()

    def _serve_connection(self, conn: socket.socket) -> None:
        if not self._controller_lock.acquire(blocking=False):
            self._refuse_busy(conn)
            return
        try:
            self._controller_loop(conn)
        finally:
            self._controller_lock.release()
            conn.close()

    def _refuse_busy(self, conn: socket.socket) -> None:
        """Read one request so the refusal can echo its id, then drop."""
        conn.settimeout(10.0)
        request_id = None
        try:
            line = self._read_line(conn)
            if line is not None:
                try:
                    request_id = json.loads(line).get("id")
                except (ValueError, AttributeError):
                    pass
            self._send(conn, {
                "id": request_id,
                "error": "busy",
                "message": "another controller holds this environment",
            })
        except OSError:
            pass
        finally:
            conn.close()

    def _controller_loop(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(_POLL_S)
        buf = b""
        while not self._stop.is_set():
            try:
                line, buf = self._read_buffered_line(conn, buf)
            except socket.timeout:
                continue
            except (ConnectionError, OSError):
                return
            if line is None:
                return
            if not line.strip():
                continue
            response, close_after = self._dispatch(line)
            try:
                self._send(conn, response)
            except OSError:
                return
            if close_after:
                return

    @staticmethod
    def _read_line(conn: socket.socket):
        buf = b""
        while b"\n" not in buf:
            chunk = conn.recv(4096)
            if not chunk:
                return None
            buf += chunk
        return buf.split(b"\n", 1)[0]

    @staticmethod
    def _read_buffered_line(conn: socket.socket, buf: bytes):
        while b"\n" not in buf:
            chunk = conn.recv(4096)
            if not chunk:
                return None, b""
            buf += chunk
        line, rest = buf.split(b"\n", 1)
        return line, rest

    @staticmethod
    def _send(conn: socket.socket, payload: dict) -> None:
        conn.sendall(json.dumps(payload).encode("utf-8") + b"\n")

    # -- command dispatch ---------------------------------------------------

    def _dispatch(self, line: bytes):
        """Returns (response dict, close-connection flag)."""
        request_id = None
        try:
            request = json.loads(line.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            return self._error(None, "bad_request", f"invalid JSON: {exc}"), False
        if not isinstance(request, dict):
            return self._error(None, "bad_request", "request must be an object"), False
        request_id = request.get("id")
        cmd = request.get("cmd")

        if cmd == "spec":
            response = {
                "id": request_id,
                "observation_length": 4,
                "action_count": self.env.config.n_actions,
                "action_set_kw": list(self.env.config.action_set_kw),
                "step_s": self.env.config.grid.step_s,
                "n_steps": self.env.config.grid.n_steps,
            }
            return response, False

        if cmd == "reset":
            seed = request.get("seed", 0)
            if not isinstance(seed, int) or isinstance(seed, bool):
                return self._error(request_id, "bad_request", "seed must be an integer"), False
            try:
                obs, info = self.env.reset(seed=seed)
            except TransportError as exc:
                return self._error(request_id, "transport", str(exc)), False
            payload = _result_payload(obs, 0.0, False, False, info)
            payload["id"] = request_id
            return payload, False

        if cmd == "step":
            if "action" not in request:
                return self._error(request_id, "bad_request", "missing 'action'"), False
            action = request["action"]
            if not isinstance(action, int) or isinstance(action, bool):
                return self._error(request_id, "bad_request", "action must be an integer"), False
            try:
                obs, reward, terminated, truncated, info = self.env.step(action)
            except IndexError as exc:
                return self._error(request_id, "bad_request", str(exc)), False
            except LifecycleError as exc:
                return self._error(request_id, "lifecycle", str(exc)), False
            except TransportError as exc:
                return self._error(request_id, "transport", str(exc)), False
            payload = _result_payload(obs, reward, terminated, truncated, info)
            payload["id"] = request_id
            return payload, False

        if cmd == "close":
            return {"id": request_id, "closed": True}, True

        return self._error(request_id, "bad_request", f"unknown cmd {cmd!r}"), False

    @staticmethod
    def _error(request_id, code: str, message: str) -> dict:
        return {"id": request_id, "error": code, "message": message}
