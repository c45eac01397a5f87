"""A tiny scriptable HTTP server speaking the day-ahead endpoint shape.

Serves the prices of one PriceSeries as JSON, filtered by the requested
date. ``fail_next(n)`` arms n consecutive 500 responses, which is how the
retry behavior of fetch_day_ahead gets exercised without a network.
"""

from __future__ import annotations

import json
import threading
from datetime import date
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .core import format_utc
from .prices import PriceSeries


class PriceStubServer:
    """Runs in a background thread; use as a context manager."""

    def __init__(self, series: PriceSeries, host: str = "127.0.0.1", port: int = 0):
        self.series = series
        self._failures_left = 0
        self._lock = threading.Lock()
        self.request_count = 0
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):  # noqa: N802 - http.server API
                stub._handle(self)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/day-ahead"

    def fail_next(self, n: int) -> None:
        """Arm the next ``n`` requests to answer 500."""
        with self._lock:
            self._failures_left = n

    def start(self):
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()

    def _handle(self, request) -> None:
        with self._lock:
            self.request_count += 1
            if self._failures_left > 0:
                self._failures_left -= 1
                request.send_error(500, "scripted failure")
                return
        query = parse_qs(urlparse(request.path).query)
        try:
            day = date.fromisoformat(query.get("date", [""])[0])
        except ValueError:
            request.send_error(400, "bad or missing date")
            return
        body = []
        for ts, price in self.series.points:
            if ts.date() == day:
                body.append({"start": format_utc(ts), "price": price})
        if not body:
            request.send_error(404, "no prices for that date")
            return
        payload = json.dumps(body).encode()
        request.send_response(200)
        request.send_header("Content-Type", "application/json")
        request.send_header("Content-Length", str(len(payload)))
        request.end_headers()
        request.wfile.write(payload)


def serve_series_forever(series: PriceSeries, host: str, port: int) -> None:
    """Blocking variant for manual use from a shell."""
    server = PriceStubServer(series, host=host, port=port)
    print(f"price stub listening on {server.endpoint}")
    server.start()
    try:
        while True:
            server._thread.join(1.0)
    except KeyboardInterrupt:
        server.stop()
