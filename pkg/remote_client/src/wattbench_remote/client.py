"""A handle on one served environment, over newline-delimited JSON/TCP.

The protocol is strictly request/response: one JSON object per line, the
response echoes the request's ``id``, and nothing is pipelined. The
handle fetches the environment's shape description once at construction
and caches it for its lifetime.

Reconnection policy: at most one reconnect per request. A request that
failed to send is sent again on the fresh connection; a request whose
reply was lost is retried only if repeating it cannot change server
state (``spec``, ``reset``). A ``step`` whose reply was lost is never
replayed, because whether it was applied is unknowable from here.
"""

from __future__ import annotations

import itertools
import json
import socket
from dataclasses import dataclass

from .errors import BusyError, LifecycleError, ProtocolError, TransportError

_MAX_LINE = 1 << 20


@dataclass(frozen=True)
class EnvSpec:
    """Shape of the served environment, as reported by the server."""

    observation_length: int
    action_count: int
    action_set_kw: tuple
    step_s: int
    n_steps: int


class RemoteEnv:
    """Drives a served environment: ``reset``, ``step``, ``close``.

    Construction connects, fetches the spec, and leaves the handle ready;
    the server admits one controller at a time, so a second handle on the
    same address raises BusyError. Usable as a context manager.
    """

    def __init__(self, host: str, port: int, timeout_s: float = 10.0):
        self._address = (host, int(port))
        self.timeout_s = timeout_s
        self._sock = None
        self._buf = b""
        self._ids = itertools.count(1)
        self._closed = False
        self._connect()
        self.spec = self._fetch_spec()

    # -- transport ----------------------------------------------------------

    def _connect(self) -> None:
        try:
            sock = socket.create_connection(self._address, timeout=self.timeout_s)
        except OSError as exc:
            raise TransportError(
                f"cannot reach environment at {self._address[0]}:{self._address[1]}: {exc}"
            ) from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._buf = b""

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._buf = b""

    def _read_line(self) -> bytes:
        while b"\n" not in self._buf:
            if len(self._buf) > _MAX_LINE:
                raise ProtocolError("response line exceeds 1 MiB without a newline")
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _request(self, payload: dict, idempotent: bool) -> dict:
        if self._closed:
            raise LifecycleError("handle is closed")
        request_id = next(self._ids)
        wire = json.dumps(dict(payload, id=request_id)).encode("utf-8") + b"\n"
        last_exc = None
        for attempt in (0, 1):
            if self._sock is None:
                self._connect()
            try:
                self._sock.sendall(wire)
            except OSError as exc:
                # The request never reached the wire whole; safe to resend.
                self._drop()
                last_exc = exc
                if attempt:
                    break
                continue
            try:
                line = self._read_line()
            except (OSError, ConnectionError) as exc:
                self._drop()
                last_exc = exc
                if attempt or not idempotent:
                    raise TransportError(
                        f"connection lost awaiting the reply to request "
                        f"{request_id}: {exc}"
                    ) from exc
                continue
            return self._parse(line, request_id)
        raise TransportError(
            f"request {request_id} could not be delivered: {last_exc}"
        ) from last_exc

    def _parse(self, line: bytes, request_id: int) -> dict:
        try:
            response = json.loads(line.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        if not isinstance(response, dict):
            raise ProtocolError(f"response must be an object, got {type(response).__name__}")
        echoed = response.get("id")
        if echoed != request_id:
            raise ProtocolError(f"response id {echoed!r} does not match request {request_id}")
        if "error" in response:
            code = response["error"]
            message = response.get("message", "")
            if code == "busy":
                raise BusyError(message or "another controller holds this environment")
            if code == "lifecycle":
                raise LifecycleError(message)
            if code == "transport":
                raise TransportError(f"server-side transport failure: {message}")
            raise ProtocolError(f"server rejected request {request_id}: {code}: {message}")
        return response

    # -- payload validation -------------------------------------------------

    def _fetch_spec(self) -> EnvSpec:
        response = self._request({"cmd": "spec"}, idempotent=True)
        try:
            spec = EnvSpec(
                observation_length=int(response["observation_length"]),
                action_count=int(response["action_count"]),
                action_set_kw=tuple(float(a) for a in response["action_set_kw"]),
                step_s=int(response["step_s"]),
                n_steps=int(response["n_steps"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"spec response is malformed: {exc}") from exc
        if spec.action_count != len(spec.action_set_kw):
            raise ProtocolError(
                f"spec claims {spec.action_count} actions but lists "
                f"{len(spec.action_set_kw)} setpoints"
            )
        return spec

    def _observation(self, response: dict):
        obs = response.get("observation")
        if not isinstance(obs, list) or len(obs) != self.spec.observation_length:
            raise ProtocolError(
                f"observation must be a list of {self.spec.observation_length} "
                f"numbers, got {obs!r}"
            )
        values = []
        for v in obs:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProtocolError(f"observation entry {v!r} is not a number")
            values.append(float(v))
        return tuple(values)

    @staticmethod
    def _info(response: dict) -> dict:
        info = response.get("info")
        if not isinstance(info, dict):
            raise ProtocolError(f"info must be an object, got {info!r}")
        return info

    # -- environment interface ----------------------------------------------

    def reset(self, seed: int = 0):
        """Start an episode; returns (observation, info)."""
        response = self._request({"cmd": "reset", "seed": seed}, idempotent=True)
        return self._observation(response), self._info(response)

    def step(self, action: int):
        """Apply one action; returns (obs, reward, terminated, truncated, info)."""
        response = self._request({"cmd": "step", "action": action}, idempotent=False)
        reward = response.get("reward")
        if isinstance(reward, bool) or not isinstance(reward, (int, float)):
            raise ProtocolError(f"reward must be a number, got {reward!r}")
        terminated = response.get("terminated")
        truncated = response.get("truncated")
        if not isinstance(terminated, bool) or not isinstance(truncated, bool):
            raise ProtocolError("terminated and truncated must be booleans")
        return (
            self._observation(response),
            float(reward),
            terminated,
            truncated,
            self._info(response),
        )

    def close(self) -> None:
        """Tell the server to release the slot, then drop the connection."""
        if self._closed:
            return
        self._closed = True
        if self._sock is None:
            return
        try:
            request_id = next(self._ids)
            wire = json.dumps({"cmd": "close", "id": request_id}).encode("utf-8") + b"\n"
            self._sock.sendall(wire)
            self._read_line()
        except (OSError, ConnectionError, ProtocolError):
            pass
        finally:
            self._drop()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
