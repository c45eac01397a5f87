"""Physical asset models: battery, heated room with thermostat, trace replay,
smart-meter aggregation.

All models are pure state-transition functions over frozen parameter records:
callers own the state values and may run independent instances in parallel.

The battery has an ideal variant (no charge taper, no tracking noise) and a
non-ideal one. The non-ideal charge taper is linear in SoC above
``taper_start_soc``: available charging power shrinks from ``p_max_kw`` at the
taper start to zero at ``soc_max``. Discharge has a hard cutoff at
``soc_min``. Tracking noise perturbs the delivered power and is re-clamped so
it can neither exceed feasibility nor flip sign relative to the setpoint.

Curtailment acts on power, never on stored energy: when a step would push SoC
past a bound, delivered power is reduced so the updated SoC lands exactly on
the bound, which keeps energy accounting exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .core import TimeGrid, check_power_kw, format_utc, parse_utc
from .errors import ConfigError, ParseError, ValidationError


# ---------------------------------------------------------------------------
# Battery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatteryParams:
    capacity_kwh: float = 10.0
    p_max_kw: float = 2.5
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    taper_start_soc: float = 0.8
    soc_min: float = 0.05
    soc_max: float = 1.0
    ideal: bool = False
    tracking_noise_std_kw: float = 0.05

    def __post_init__(self) -> None:
        if self.capacity_kwh <= 0:
            raise ConfigError(f"capacity_kwh must be > 0, got {self.capacity_kwh}")
        if self.p_max_kw <= 0:
            raise ConfigError(f"p_max_kw must be > 0, got {self.p_max_kw}")
        if not 0 < self.eta_charge <= 1 or not 0 < self.eta_discharge <= 1:
            raise ConfigError("efficiencies must be in (0, 1]")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ConfigError(
                f"need 0 <= soc_min < soc_max <= 1, got [{self.soc_min}, {self.soc_max}]"
            )
        if not 0 < self.taper_start_soc < self.soc_max:
            raise ConfigError(
                f"taper_start_soc {self.taper_start_soc} must lie below soc_max {self.soc_max}"
            )
        if self.tracking_noise_std_kw < 0:
            raise ConfigError("tracking_noise_std_kw must be >= 0")


@dataclass(frozen=True)
class BatteryState:
    soc: float
    last_delivered_kw: float = 0.0


def battery_available_charge_kw(params: BatteryParams, soc: float) -> float:
    """Maximum charging power the battery accepts at the given SoC."""
    if params.ideal:
        return params.p_max_kw if soc < params.soc_max else 0.0
    if soc <= params.taper_start_soc:
        return params.p_max_kw
    frac = (params.soc_max - soc) / (params.soc_max - params.taper_start_soc)
    return params.p_max_kw * min(max(frac, 0.0), 1.0)


def battery_available_discharge_kw(params: BatteryParams, soc: float) -> float:
    """Maximum discharging power (positive number) at the given SoC."""
    return params.p_max_kw if soc > params.soc_min else 0.0


def battery_step(
    params: BatteryParams,
    state: BatteryState,
    setpoint_kw: float,
    dt_h: float,
    noise_draw: float = 0.0,
) -> tuple[BatteryState, float]:
    """Advance the battery one interval; returns (new state, delivered kW).

    ``noise_draw`` is a standard-normal sample, ignored for ideal batteries
    and when the setpoint is zero (the inverter is off, nothing to track).
    """
    if not math.isfinite(setpoint_kw):
        raise ValueError(f"setpoint must be finite, got {setpoint_kw!r}")
    if dt_h <= 0:
        raise ValueError(f"dt_h must be positive, got {dt_h}")

    soc = state.soc
    if setpoint_kw > 0:
        avail = battery_available_charge_kw(params, soc)
        delivered = min(setpoint_kw, avail)
        if not params.ideal:
            delivered += params.tracking_noise_std_kw * noise_draw
            delivered = min(max(delivered, 0.0), avail)
        # Curtail so the SoC update can never overshoot soc_max; the final
        # min() only absorbs the last-ulp rounding of the curtailment algebra.
        room_kw = (params.soc_max - soc) * params.capacity_kwh / (params.eta_charge * dt_h)
        delivered = min(delivered, room_kw)
        new_soc = soc + params.eta_charge * delivered * dt_h / params.capacity_kwh
        new_soc = min(new_soc, params.soc_max)
    elif setpoint_kw < 0:
        avail = battery_available_discharge_kw(params, soc)
        magnitude = min(-setpoint_kw, avail)
        if not params.ideal:
            magnitude -= params.tracking_noise_std_kw * noise_draw
            magnitude = min(max(magnitude, 0.0), avail)
        room_kw = (soc - params.soc_min) * params.eta_discharge * params.capacity_kwh / dt_h
        magnitude = min(magnitude, room_kw)
        delivered = -magnitude if magnitude > 0.0 else 0.0
        new_soc = soc - magnitude * dt_h / (params.eta_discharge * params.capacity_kwh)
        new_soc = max(new_soc, params.soc_min)
    else:
        return replace(state, last_delivered_kw=0.0), 0.0

    return BatteryState(soc=new_soc, last_delivered_kw=delivered), delivered


# ---------------------------------------------------------------------------
# Thermal zone with hysteresis thermostat
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalParams:
    tau_h: float = 20.0
    heat_rate_k_per_h: float = 2.0
    t_ambient_c: float = 8.0
    hysteresis_c: float = 0.5
    setpoint_c: float = 20.0

    def __post_init__(self) -> None:
        if self.tau_h <= 0:
            raise ConfigError(f"tau_h must be > 0, got {self.tau_h}")
        if self.heat_rate_k_per_h <= 0:
            raise ConfigError("heat_rate_k_per_h must be > 0")
        if not 0 < self.hysteresis_c < 5:
            raise ConfigError(f"hysteresis_c must be in (0, 5), got {self.hysteresis_c}")


@dataclass(frozen=True)
class ThermalState:
    temp_c: float = 18.0
    heater_on: bool = False


def thermal_step(params: ThermalParams, state: ThermalState, dt_h: float) -> ThermalState:
    """One explicit-Euler step of the first-order RC zone, then the thermostat.

    The heater switches on below setpoint - hysteresis and off above
    setpoint + hysteresis; inside the band it keeps its previous state.
    """
    if dt_h <= 0 or dt_h > params.tau_h / 4:
        raise ValueError(
            f"dt_h must be in (0, tau/4] = (0, {params.tau_h / 4}], got {dt_h}"
        )
    drift = (params.t_ambient_c - state.temp_c) / params.tau_h
    heat = params.heat_rate_k_per_h if state.heater_on else 0.0
    temp = state.temp_c + dt_h * (drift + heat)

    heater = state.heater_on
    if temp < params.setpoint_c - params.hysteresis_c:
        heater = True
    elif temp > params.setpoint_c + params.hysteresis_c:
        heater = False
    return ThermalState(temp_c=temp, heater_on=heater)


def thermal_overshoot_bound(params: ThermalParams, dt_h: float) -> float:
    """Worst one-step excursion past the hysteresis band (discretization)."""
    pull = (params.setpoint_c - params.t_ambient_c) / params.tau_h
    return dt_h * max(params.heat_rate_k_per_h, pull)


# ---------------------------------------------------------------------------
# PV / load traces and the meter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trace:
    """Power samples on a TimeGrid; PV traces are <= 0, load traces >= 0."""

    grid: TimeGrid
    samples: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.samples) != self.grid.n_steps:
            raise ConfigError(
                f"trace has {len(self.samples)} samples for {self.grid.n_steps} steps"
            )
        for i, s in enumerate(self.samples):
            if not math.isfinite(s):
                raise ConfigError(f"trace sample {i} is not finite")


def trace_sample(trace: Trace, i: int) -> float:
    """Zero-order-hold lookup of sample ``i``."""
    if not 0 <= i < trace.grid.n_steps:
        raise IndexError(f"trace index {i} outside [0, {trace.grid.n_steps})")
    return trace.samples[i]


def meter_net_kw(load_kw: float, pv_kw: float, battery_ac_kw: float) -> float:
    """Net grid exchange: load plus PV injection plus battery AC power."""
    for v, name in ((load_kw, "load"), (pv_kw, "pv"), (battery_ac_kw, "battery")):
        check_power_kw(v, name)
    return load_kw + pv_kw + battery_ac_kw


def load_trace_csv(path: str | Path, grid: TimeGrid | None = None) -> Trace:
    """Read a `timestamp,power_kw` CSV into a Trace.

    When ``grid`` is omitted it is inferred from the first two timestamps.
    Parse failures report the 1-based line number.
    """
    path = Path(path)
    rows: list[tuple] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "power_kw"]:
            raise ParseError(f"{path}:1: expected header 'timestamp,power_kw'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts = parse_utc(row[0])
                kw = float(row[1])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            rows.append((ts, kw))
    if not rows:
        raise ValidationError(f"{path}: empty trace")

    if grid is None:
        if len(rows) < 2:
            raise ValidationError(f"{path}: cannot infer a grid from one row")
        step = int((rows[1][0] - rows[0][0]).total_seconds())
        grid = TimeGrid(start=rows[0][0], step_s=step, n_steps=len(rows))

    samples = []
    for i, (ts, kw) in enumerate(rows):
        expect = grid.timestamp_of(i)
        if ts != expect:
            raise ValidationError(
                f"{path}: row {i + 2} timestamp {format_utc(ts)} does not match "
                f"grid slot {format_utc(expect)}"
            )
        samples.append(kw)
    return Trace(grid=grid, samples=tuple(samples))


def save_trace_csv(trace: Trace, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "power_kw"])
        for i, kw in enumerate(trace.samples):
            writer.writerow([format_utc(trace.grid.timestamp_of(i)), repr(kw)])
