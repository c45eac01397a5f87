"""Append-only run logging: one directory per run, diff-able text files.

Layout under a base directory:

    runs/<run-id>/manifest.json   written at start, finalized at end
    runs/<run-id>/steps.log       one JSON object per step, flushed per row
    runs/<run-id>/curve.csv       training returns, when the run trains
    runs/<run-id>/export.csv      produced on demand by export_csv

Step rows are written with full-precision float reprs so identical runs
produce byte-identical logs; the CSV export renders values at 6
significant digits.
"""

from __future__ import annotations

import json
import os
import secrets
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import StepRow, TimeGrid, format_utc
from .errors import ParseError, TelemetryError

MANIFEST_NAME = "manifest.json"
STEPS_NAME = "steps.log"
CURVE_NAME = "curve.csv"
EXPORT_NAME = "export.csv"

EXPORT_HEADER = (
    "step,timestamp,soc,price_eur_mwh,action,setpoint_kw,delivered_kw,"
    "temp_c,reward_eur"
)

_BASE32 = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"  # Crockford alphabet, sortable


def _base32(value: int, length: int) -> str:
    chars = []
    for _ in range(length):
        chars.append(_BASE32[value & 31])
        value >>= 5
    return "".join(reversed(chars))


def new_run_id(now_ms: int | None = None, entropy: int | None = None) -> str:
    """Sortable 26-char identifier: millisecond timestamp then randomness."""
    if now_ms is None:
        now_ms = time.time_ns() // 1_000_000
    if entropy is None:
        entropy = secrets.randbits(80)
    return _base32(now_ms, 10) + _base32(entropy, 16)


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to identify and re-run an experiment."""

    run_id: str
    kind: str
    backend: str
    seed: int
    config_hash: str
    config: dict
    code_version: str
    started_utc: str
    finished_utc: str | None = None
    status: str = "running"


def _utc_now() -> str:
    return format_utc(datetime.now(timezone.utc).replace(microsecond=0))


class RunLogger:
    """Owns one run directory; single writer, flush-on-write step log."""

    def __init__(self, base_dir, kind: str, backend: str, seed: int,
                 config_hash: str, config: dict, grid: TimeGrid | None = None,
                 run_id: str | None = None):
        self.base_dir = Path(base_dir)
        self.run_id = run_id if run_id is not None else new_run_id()
        self.grid = grid
        self.dir = self.base_dir / self.run_id
        self.dir.mkdir(parents=True, exist_ok=False)
        self.manifest = RunManifest(
            run_id=self.run_id, kind=kind, backend=backend, seed=seed,
            config_hash=config_hash, config=config, code_version=__version__,
            started_utc=_utc_now(),
        )
        self._write_manifest()
        self._steps = open(self.dir / STEPS_NAME, "a", encoding="utf-8")

    def _write_manifest(self) -> None:
        text = json.dumps(asdict(self.manifest), indent=2, sort_keys=True)
        (self.dir / MANIFEST_NAME).write_text(text + "\n", encoding="utf-8")

    def log_step(self, row: StepRow) -> None:
        """Append one row and return only after it is on disk."""
        if self._steps is None or self._steps.closed:
            raise TelemetryError(f"run {self.run_id}: step log is closed")
        payload = asdict(row)
        payload["observation"] = list(row.observation)
        if self.grid is not None:
            payload["timestamp"] = format_utc(self.grid.timestamp_of(row.step))
        try:
            self._steps.write(json.dumps(payload, sort_keys=True) + "\n")
            self._steps.flush()
            os.fsync(self._steps.fileno())
        except OSError as exc:
            raise TelemetryError(
                f"run {self.run_id}: could not append step {row.step}: {exc}"
            ) from exc

    def log_curve(self, episode_returns) -> None:
        lines = ["episode,return_eur"]
        lines += [f"{i},{r!r}" for i, r in enumerate(episode_returns)]
        (self.dir / CURVE_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def finish(self, status: str = "done") -> None:
        if self._steps is not None and not self._steps.closed:
            self._steps.close()
        if self.manifest.status == "running":
            self.manifest = RunManifest(**{
                **asdict(self.manifest),
                "finished_utc": _utc_now(),
                "status": status,
            })
            self._write_manifest()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.finish("failed" if exc_type is not None else "done")


def load_manifest(base_dir, run_id: str) -> RunManifest:
    path = Path(base_dir) / run_id / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no run {run_id!r} under {base_dir}")
    data = json.loads(path.read_text(encoding="utf-8"))
    return RunManifest(**data)


def read_steps(base_dir, run_id: str) -> list:
    """Parsed step rows; a partial trailing line (crash) is ignored."""
    path = Path(base_dir) / run_id / STEPS_NAME
    if not path.parent.exists():
        raise FileNotFoundError(f"no run {run_id!r} under {base_dir}")
    if not path.exists():
        return []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                break
            try:
                data = json.loads(line)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: corrupt step row") from None
            rows.append(data)
    return rows


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def export_csv(base_dir, run_id: str):
    """Render steps.log to CSV; returns the export path."""
    rows = read_steps(base_dir, run_id)
    lines = [EXPORT_HEADER]
    for data in rows:
        lines.append(",".join([
            str(data["step"]),
            data.get("timestamp", ""),
            _fmt(data["soc"]),
            _fmt(data["price_eur_mwh"]),
            str(data["action"]),
            _fmt(data["setpoint_kw"]),
            _fmt(data["delivered_kw"]),
            _fmt(data["temp_c"]),
            _fmt(data["reward_eur"]),
        ]))
    path = Path(base_dir) / run_id / EXPORT_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
