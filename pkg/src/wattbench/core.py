"""Shared domain types: time grids, unit conventions, seeding, episode records.

Conventions used throughout the package:

* all timestamps are UTC, whole seconds;
* power is signed kilowatts, positive = consumption / charging seen from the
  grid, negative = injection / discharging;
* prices are EUR/MWh and may be negative;
* seeds are 64-bit unsigned integers and feed numpy Generators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import ConfigError

# Sanity bound for any power value moving through the system, in kW.
POWER_LIMIT_KW = 1000.0

# Default control step: 15 minutes.
DEFAULT_STEP_S = 900

UTC = timezone.utc


def check_power_kw(value: float, what: str = "power") -> float:
    """Validate a signed kW value against the global sanity bound."""
    v = float(value)
    if not np.isfinite(v):
        raise ValueError(f"{what} must be finite, got {value!r}")
    if abs(v) > POWER_LIMIT_KW:
        raise ValueError(f"{what} magnitude {v} kW exceeds {POWER_LIMIT_KW} kW")
    return v


def check_price(value: float, what: str = "price") -> float:
    """Validate a EUR/MWh price. Negative prices are legal."""
    v = float(value)
    if not np.isfinite(v):
        raise ValueError(f"{what} must be finite, got {value!r}")
    return v


# ---------------------------------------------------------------------------
# Time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform step schedule anchoring every series and episode.

    ``step_s`` must divide 3600 or be a multiple of it, so hourly price
    series always map onto a whole number of steps.
    """

    start: datetime
    step_s: int
    n_steps: int

    def __post_init__(self) -> None:
        if self.start.tzinfo is None or self.start.utcoffset() != timedelta(0):
            raise ConfigError("TimeGrid.start must be timezone-aware UTC")
        if self.start.microsecond != 0:
            raise ConfigError("TimeGrid.start must be whole seconds")
        if self.step_s <= 0:
            raise ConfigError(f"step_s must be positive, got {self.step_s}")
        if 3600 % self.step_s != 0 and self.step_s % 3600 != 0:
            raise ConfigError(
                f"step_s must divide 3600 or be a multiple of it, got {self.step_s}"
            )
        if self.n_steps <= 0:
            raise ConfigError(f"n_steps must be positive, got {self.n_steps}")

    @property
    def step_h(self) -> float:
        return self.step_s / 3600.0

    def timestamp_of(self, i: int) -> datetime:
        """Timestamp of step boundary ``i``; valid for 0 <= i <= n_steps."""
        if not 0 <= i <= self.n_steps:
            raise IndexError(f"step index {i} outside [0, {self.n_steps}]")
        return self.start + timedelta(seconds=i * self.step_s)

    def hour_of_day(self, i: int) -> float:
        """Fractional UTC hour of step ``i`` in [0, 24)."""
        if not 0 <= i < self.n_steps:
            raise IndexError(f"step index {i} outside [0, {self.n_steps})")
        t = self.timestamp_of(i)
        return t.hour + t.minute / 60.0 + t.second / 3600.0



def day_grid(start: datetime, step_s: int = DEFAULT_STEP_S) -> TimeGrid:
    """One-day grid at the given resolution (96 steps at the default)."""
    return TimeGrid(start=start, step_s=step_s, n_steps=86400 // step_s)


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp, requiring UTC."""
    t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if t.tzinfo is None:
        raise ValueError(f"timestamp {text!r} lacks a timezone")
    return t.astimezone(UTC)


def format_utc(t: datetime) -> str:
    return t.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; the same seed yields the same stream."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    return np.random.default_rng(int(seed))


# ---------------------------------------------------------------------------
# Episode records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepRow:
    """One executed step.

    ``soc`` is the observed state of charge the action was chosen from
    (pre-step), ``delivered_kw`` the power actually exchanged during the
    step, ``temp_c`` the observed room temperature (logged, never rewarded).
    """

    step: int
    observation: tuple[float, ...]
    action: int
    setpoint_kw: float
    delivered_kw: float
    soc: float
    price_eur_mwh: float
    reward_eur: float
    temp_c: float = 0.0


@dataclass
class EpisodeRecord:
    """Ordered per-step log of one episode; the transfer harness's unit."""

    grid: TimeGrid
    rows: list[StepRow] = field(default_factory=list)
    truncated: bool = False

    def append(self, row: StepRow) -> None:
        expect = self.rows[-1].step + 1 if self.rows else 0
        if row.step != expect:
            raise ValueError(f"row step {row.step} breaks sequence, expected {expect}")
        if not 0.0 <= row.soc <= 1.0:
            raise ValueError(f"row soc {row.soc} outside [0, 1]")
        self.rows.append(row)

    def cumulative_reward(self) -> float:
        total = 0.0
        for row in self.rows:
            total += row.reward_eur
        return total
