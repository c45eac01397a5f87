"""Day-ahead price ingestion: fixture CSVs, a simple HTTP endpoint shape,
zero-order-hold resampling onto a control grid, and a synthetic generator
for plausible Belgian spot-price fixtures.

Prices are EUR/MWh end to end; only reward computation converts to kWh.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import requests

from .core import TimeGrid, check_price, format_utc, make_rng, parse_utc
from .errors import ConfigError, ParseError, TransportError, ValidationError

HOUR = timedelta(hours=1)

RETRIES = 2
BACKOFF_START_S = 1.0


@dataclass(frozen=True)
class PriceSeries:
    """Hourly (start timestamp, EUR/MWh) points with no gaps."""

    points: tuple[tuple[datetime, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValidationError("price series must not be empty")
        prev = None
        for ts, price in self.points:
            if ts.minute or ts.second or ts.microsecond:
                raise ValidationError(f"timestamp {format_utc(ts)} is not on the hour")
            if prev is not None:
                if ts == prev:
                    raise ValidationError(f"duplicate hour at {format_utc(ts)}")
                if ts != prev + HOUR:
                    raise ValidationError(f"gap before {format_utc(prev + HOUR)}")
            check_price(price)
            prev = ts

    @property
    def start(self) -> datetime:
        return self.points[0][0]

    @property
    def end(self) -> datetime:
        """First instant no longer covered."""
        return self.points[-1][0] + HOUR

    def __len__(self):
        return len(self.points)

    def price_at(self, ts: datetime) -> float:
        """Price of the hour containing ``ts``."""
        if not self.start <= ts < self.end:
            raise IndexError(f"{format_utc(ts)} outside series coverage")
        index = int((ts - self.start).total_seconds() // 3600)
        return self.points[index][1]


def load_fixture(path: str | Path) -> PriceSeries:
    """Read a `timestamp,price_eur_mwh` CSV, validating hourly continuity."""
    path = Path(path)
    points = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "price_eur_mwh"]:
            raise ParseError(f"{path}:1: expected header 'timestamp,price_eur_mwh'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts = parse_utc(row[0])
                price = float(row[1])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            points.append((ts, price))
    if not points:
        raise ValidationError(f"{path}: no price rows")
    return PriceSeries(points=tuple(points))


def save_fixture(series: PriceSeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "price_eur_mwh"])
        for ts, price in series.points:
            writer.writerow([format_utc(ts), repr(price)])


def fetch_day_ahead(endpoint: str, area: str, day: date) -> PriceSeries:
    """GET `<endpoint>?area=<code>&date=<YYYY-MM-DD>` and validate the reply.

    The body must be a JSON array of {"start": ISO-8601, "price": number}.
    Transient failures (network errors, non-200 statuses) are retried twice
    with exponential backoff starting at 1 s; a malformed body is not.
    """
    params = {"area": area, "date": day.isoformat()}
    last_failure = None
    for attempt in range(RETRIES + 1):
        if attempt:
            time.sleep(BACKOFF_START_S * 2 ** (attempt - 1))
        try:
            response = requests.get(endpoint, params=params, timeout=10.0)
        except requests.RequestException as exc:
            last_failure = str(exc)
            continue
        if response.status_code != 200:
            last_failure = f"HTTP {response.status_code}"
            continue
        return _parse_day_ahead_body(response)
    raise TransportError(
        f"{endpoint} failed after {RETRIES + 1} attempts: {last_failure}"
    )


def _parse_day_ahead_body(response) -> PriceSeries:
    try:
        body = response.json()
    except ValueError as exc:
        raise ParseError(f"endpoint returned invalid JSON: {exc}") from exc
    if not isinstance(body, list):
        raise ParseError(f"expected a JSON array, got {type(body).__name__}")
    points = []
    for i, item in enumerate(body):
        if not isinstance(item, dict) or "start" not in item or "price" not in item:
            raise ParseError(f"entry {i} must be an object with 'start' and 'price'")
        try:
            ts = parse_utc(item["start"])
            price = float(item["price"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"entry {i}: {exc}") from exc
        points.append((ts, price))
    if not points:
        raise ParseError("endpoint returned an empty array")
    return PriceSeries(points=tuple(points))


def resample(series: PriceSeries, grid: TimeGrid) -> list:
    """Zero-order hold onto the grid: each step takes its hour's price."""
    if 3600 % grid.step_s != 0:
        raise ConfigError(
            f"resample needs a sub-hourly grid step dividing 3600, got {grid.step_s}"
        )
    prices = []
    for i in range(grid.n_steps):
        ts = grid.timestamp_of(i)
        try:
            prices.append(series.price_at(ts))
        except IndexError:
            raise IndexError(
                f"step {i} at {format_utc(ts)} not covered by the price series"
            ) from None
    return prices


# ---------------------------------------------------------------------------
# Synthetic fixture generation
# ---------------------------------------------------------------------------

def synthetic_belpex(start: datetime, days: int, seed: int = 0) -> PriceSeries:
    """Plausible Belgian day-ahead prices: two daily peaks, mean near 100.

    The shape has a morning and a stronger evening peak with a night dip;
    day-to-day level variation and hourly noise come from the seed.
    Occasional slightly negative night prices are intentional.
    """
    if days <= 0:
        raise ConfigError(f"days must be positive, got {days}")
    if start.minute or start.second or start.microsecond:
        raise ConfigError("start must be on the hour")
    rng = make_rng(seed)
    points = []
    for d in range(days):
        level = float(rng.normal(1.0, 0.12))
        level = min(max(level, 0.55), 1.6)
        for h in range(24):
            shape = (
                83.0
                + 38.0 * math.exp(-(((h - 8.5) / 2.4) ** 2))
                + 52.0 * math.exp(-(((h - 19.0) / 2.6) ** 2))
                - 30.0 * math.exp(-(((h - 3.5) / 2.9) ** 2))
            )
            noise = float(rng.normal(0.0, 5.0))
            ts = start + timedelta(days=d, hours=h)
            points.append((ts, round(level * shape + noise, 2)))
    return PriceSeries(points=tuple(points))


def two_tier_day(start: datetime, low: float = 20.0, high: float = 180.0) -> PriceSeries:
    """A 24-hour series: ``low`` for hours 0..11, ``high`` for 12..23.

    The sharpest possible arbitrage structure; used as a controlled
    training instance.
    """
    points = [(start + timedelta(hours=h), low if h < 12 else high) for h in range(24)]
    return PriceSeries(points=tuple(points))
