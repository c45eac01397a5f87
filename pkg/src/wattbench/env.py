"""Episodic control engine: pluggable backends and the arbitrage environment.

Two backends expose the same minimal interface: apply a power setpoint,
advance to the next grid step, observe. SimBackend integrates the asset
models in-process; ModbusBackend drives the emulated (or real) hardware
over MODBUS/TCP and derives delivered power from meter readings.

Both backends report state of charge at the meter's resolution (the
register codec's 0.01 % quantum) so a policy sees the same discretization
whether it runs against simulation or hardware.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .assets import (
    BatteryParams,
    BatteryState,
    ThermalParams,
    ThermalState,
    battery_step,
    thermal_step,
)
from .core import EpisodeRecord, StepRow, TimeGrid, make_rng
from .errors import ConfigError, LifecycleError, TransportError
from .modbus.client import ModbusClient
from .modbus.registers import DEFAULT_REGISTER_MAP, decode_value, encode_value

PRICE_NORM_EUR_MWH = 200.0

VIRTUAL = "virtual"
SCALED = "scaled"
WALL = "wall"

_SOC_SPEC = DEFAULT_REGISTER_MAP.by_name("soc")


def quantize_soc(soc: float) -> float:
    """Round a SoC fraction to the meter's 0.01 % register quantum."""
    return decode_value(_SOC_SPEC, encode_value(_SOC_SPEC, soc * 100.0)) / 100.0


def step_reward(price_eur_mwh: float, delivered_kw: float, dt_h: float) -> float:
    """Settlement for one step in EUR: imports cost, exports earn.

    Every consumer of the dynamics (environment, planner, oracle) must use
    this one function so their rewards agree bit for bit.
    """
    return -price_eur_mwh * delivered_kw * dt_h / 1000.0


@dataclass(frozen=True)
class BackendObservation:
    soc: float
    delivered_kw: float
    temp_c: float
    pv_kw: float
    load_kw: float


class SimBackend:
    """In-process dynamics; exact delivered power, meter-resolution SoC."""

    def __init__(
        self,
        battery: BatteryParams,
        step_s: int,
        thermal: ThermalParams | None = None,
    ):
        self.battery = battery
        self.step_s = step_s
        self.thermal = thermal if thermal is not None else ThermalParams()
        self._rng = None
        self._state = None
        self._thermal_state = ThermalState()
        self._setpoint_kw = 0.0
        self._delivered_kw = 0.0

    def reset(self, initial_soc: float, seed: int, keep_soc: bool = False) -> None:
        if keep_soc and self._state is not None:
            pass
        else:
            self._state = BatteryState(soc=initial_soc)
            self._thermal_state = ThermalState()
        self._rng = make_rng(seed)
        self._setpoint_kw = 0.0
        self._delivered_kw = 0.0

    def apply_setpoint(self, setpoint_kw: float) -> None:
        self._setpoint_kw = setpoint_kw

    def advance(self) -> None:
        draw = float(self._rng.standard_normal())
        dt_h = self.step_s / 3600.0
        self._state, self._delivered_kw = battery_step(
            self.battery, self._state, self._setpoint_kw, dt_h, draw
        )
        self._thermal_state = thermal_step(self.thermal, self._thermal_state, dt_h)

    def observe(self) -> BackendObservation:
        return BackendObservation(
            soc=quantize_soc(self._state.soc),
            delivered_kw=self._delivered_kw,
            temp_c=self._thermal_state.temp_c,
            pv_kw=0.0,
            load_kw=0.0,
        )

    def close(self) -> None:
        pass


class ModbusBackend:
    """Drives a register-mapped plant; time belongs to the hardware.

    ``advance`` watches the heartbeat register until the next step boundary
    and snapshots all registers atomically. Delivered power is derived from
    the SoC change between consecutive boundary snapshots (a rate over the
    observed tick window), scaled by the configured capacity and
    efficiency; the boundary snapshots are shared between adjacent steps,
    so quantization errors telescope instead of accumulating.

    ``battery`` must describe the hardware being driven; capacity and
    efficiencies enter the delivered-power derivation.
    """

    def __init__(
        self,
        host: str,
        port: int,
        battery: BatteryParams,
        step_s: int,
        tick_s: int = 10,
        reg_map=DEFAULT_REGISTER_MAP,
        timeout_s: float = 2.0,
        max_step_wall_s: float = 120.0,
    ):
        if step_s % tick_s != 0:
            raise ConfigError(
                f"grid step {step_s}s must be a whole number of {tick_s}s ticks"
            )
        self.battery = battery
        self.step_s = step_s
        self.tick_s = tick_s
        self.ticks_per_step = step_s // tick_s
        self.reg_map = reg_map
        self.max_step_wall_s = max_step_wall_s
        self._spec = {n: reg_map.by_name(n) for n in (
            "soc", "battery_power", "battery_setpoint", "room_temp",
            "pv_power", "load_power", "heartbeat",
        )}
        self._read_count = max(s.address for s in self._spec.values()) + 1
        self._client = ModbusClient(host, port, unit_id=reg_map.unit_id, timeout_s=timeout_s)
        self._anchor = None
        self._boundary = None  # (heartbeat, soc fraction) of the last boundary
        self._setpoint_kw = 0.0
        self._last = None
        self._tick_wall_est = None
        self._stale_ticks = 0

    def _snapshot(self):
        """One consistent read of every needed register, decoded."""
        words = self._client.read_holding(0, self._read_count)
        def dec(name):
            spec = self._spec[name]
            return decode_value(spec, words[spec.address])
        return {
            "soc": dec("soc") / 100.0,
            "delivered": dec("battery_power"),
            "temp": dec("room_temp"),
            "pv": dec("pv_power"),
            "load": dec("load_power"),
            "heartbeat": words[self._spec["heartbeat"].address],
        }

    def reset(self, initial_soc: float, seed: int, keep_soc: bool = False) -> None:
        """Hardware cannot teleport its SoC; the current value is the baseline."""
        snap = self._snapshot()
        self._anchor = snap["heartbeat"]
        self._boundary = (snap["heartbeat"], snap["soc"])
        self._setpoint_kw = 0.0
        self._last = snap
        self._stale_ticks = 0

    def apply_setpoint(self, setpoint_kw: float) -> None:
        spec = self.reg_map.by_name("battery_setpoint")
        self._client.write_register(spec.address, encode_value(spec, setpoint_kw))
        self._setpoint_kw = setpoint_kw
        # A tick computed between the boundary snapshot and this write ran
        # on the previous setpoint; count it for diagnostics.
        hb = self._client.read_holding(self._spec["heartbeat"].address, 1)[0]
        self._stale_ticks += self._hb_diff(hb, self._boundary[0])

    @staticmethod
    def _hb_diff(later: int, earlier: int) -> int:
        return (later - earlier) & 0xFFFF

    def advance(self) -> None:
        target = self.ticks_per_step
        deadline = time.monotonic() + self.max_step_wall_s
        last_hb = self._boundary[0]
        last_wall = time.monotonic()
        while True:
            snap = self._snapshot()
            done = self._hb_diff(snap["heartbeat"], self._boundary[0])
            if done >= target:
                break
            now = time.monotonic()
            if now > deadline:
                raise TransportError(
                    f"hardware advanced only {done}/{target} ticks in "
                    f"{self.max_step_wall_s} s"
                )
            progressed = self._hb_diff(snap["heartbeat"], last_hb)
            if progressed:
                est = (now - last_wall) / progressed
                self._tick_wall_est = (
                    est if self._tick_wall_est is None
                    else 0.7 * self._tick_wall_est + 0.3 * est
                )
                last_hb, last_wall = snap["heartbeat"], now
            remaining = target - done
            if self._tick_wall_est is not None and remaining > 2:
                # Sleep through the bulk of the wait, then poll tightly so
                # the boundary is caught within a fraction of a tick.
                time.sleep(self._tick_wall_est * (remaining - 1.5))
            else:
                time.sleep(0.0002)

        prev_hb, prev_soc = self._boundary
        window_ticks = self._hb_diff(snap["heartbeat"], prev_hb)
        window_h = window_ticks * self.tick_s / 3600.0
        delta = snap["soc"] - prev_soc
        if self._setpoint_kw > 0:
            delivered = delta * self.battery.capacity_kwh / (self.battery.eta_charge * window_h)
        elif self._setpoint_kw < 0:
            delivered = delta * self.battery.eta_discharge * self.battery.capacity_kwh / window_h
        else:
            delivered = 0.0
        self._boundary = (snap["heartbeat"], snap["soc"])
        self._last = dict(snap, derived_delivered=delivered)

    def observe(self) -> BackendObservation:
        snap = self._last
        return BackendObservation(
            soc=snap["soc"],
            delivered_kw=snap.get("derived_delivered", 0.0),
            temp_c=snap["temp"],
            pv_kw=snap["pv"],
            load_kw=snap["load"],
        )

    @property
    def stale_ticks(self) -> int:
        """Ticks that ran on an outdated setpoint due to write latency."""
        return self._stale_ticks

    def close(self) -> None:
        self._client.close()


@dataclass(frozen=True)
class ArbitrageEnvConfig:
    grid: TimeGrid
    prices: tuple[float, ...]
    battery: BatteryParams
    action_set_kw: tuple[float, ...] = (-1.0, 0.0, 1.0)
    initial_soc: float = 0.5
    clock_mode: str = VIRTUAL
    clock_factor: float = 3600.0

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        object.__setattr__(self, "action_set_kw", tuple(float(a) for a in self.action_set_kw))
        if len(self.prices) != self.grid.n_steps:
            raise ConfigError(
                f"{len(self.prices)} prices for {self.grid.n_steps} steps"
            )
        if 0.0 not in self.action_set_kw:
            raise ConfigError("action set must contain the idle action 0.0")
        for a in self.action_set_kw:
            if abs(a) > self.battery.p_max_kw:
                raise ConfigError(f"action {a} kW exceeds p_max {self.battery.p_max_kw} kW")
        if not self.battery.soc_min <= self.initial_soc <= self.battery.soc_max:
            raise ConfigError(
                f"initial_soc {self.initial_soc} outside "
                f"[{self.battery.soc_min}, {self.battery.soc_max}]"
            )
        if self.clock_mode not in (VIRTUAL, SCALED, WALL):
            raise ConfigError(f"unknown clock mode {self.clock_mode!r}")
        if self.clock_factor <= 0:
            raise ConfigError("clock_factor must be positive")

    @property
    def idle_action(self) -> int:
        return self.action_set_kw.index(0.0)

    @property
    def n_actions(self) -> int:
        return len(self.action_set_kw)


OBSERVATION_LENGTH = 4


def config_snapshot(config: ArbitrageEnvConfig) -> dict:
    """JSON-ready dict capturing everything needed to re-run the config."""
    from dataclasses import asdict

    from .core import format_utc

    return {
        "grid": {
            "start": format_utc(config.grid.start),
            "step_s": config.grid.step_s,
            "n_steps": config.grid.n_steps,
        },
        "prices_eur_mwh": list(config.prices),
        "battery": asdict(config.battery),
        "action_set_kw": list(config.action_set_kw),
        "initial_soc": config.initial_soc,
        "clock_mode": config.clock_mode,
        "clock_factor": config.clock_factor,
    }


def _hour_of(ts) -> float:
    return ts.hour + ts.minute / 60.0 + ts.second / 3600.0


class ArbitrageEnv:
    """Episodic battery arbitrage on one backend.

    Observation: [soc, price/200, sin(2*pi*hour/24), cos(2*pi*hour/24)].
    Reward: -price[i] * delivered_kW * dt_h / 1000 (imports cost, exports
    earn). One episode covers the configured grid; step after the horizon
    raises LifecycleError.
    """

    def __init__(self, config: ArbitrageEnvConfig, backend):
        self.config = config
        self.backend = backend
        self._index = None
        self._terminated = False
        self._truncated = False
        self.record: EpisodeRecord | None = None
        self._wall_anchor = None
        self._last_obs = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int = 0, keep_soc: bool = False):
        """Start an episode; returns (observation, info).

        ``keep_soc`` carries the battery state over from the previous
        episode (multi-day evaluation); hardware backends always carry.
        """
        self.backend.reset(self.config.initial_soc, seed=seed, keep_soc=keep_soc)
        self._index = 0
        self._terminated = False
        self._truncated = False
        self.record = EpisodeRecord(grid=self.config.grid)
        self._wall_anchor = time.monotonic()
        obs_data = self.backend.observe()
        obs = self._observation(0, obs_data.soc)
        self._last_obs = (obs, obs_data)
        info = {"price_eur_mwh": self.config.prices[0], "baseline_soc": obs_data.soc}
        return obs, info

    def step(self, action: int):
        """Apply an action; returns (obs, reward, terminated, truncated, info)."""
        if self._index is None:
            raise LifecycleError("step before reset")
        if self._terminated or self._truncated:
            raise LifecycleError("episode is over; call reset")
        if not isinstance(action, int) or isinstance(action, bool):
            raise IndexError(f"action must be an int index, got {action!r}")
        if not 0 <= action < self.config.n_actions:
            raise IndexError(
                f"action {action} outside [0, {self.config.n_actions})"
            )

        i = self._index
        setpoint = self.config.action_set_kw[action]
        pre_obs, pre_data = self._last_obs
        try:
            self.backend.apply_setpoint(setpoint)
            self._pace(i)
            self.backend.advance()
        except TransportError:
            self._truncated = True
            if self.record is not None:
                self.record.truncated = True
            raise
        data = self.backend.observe()

        price = self.config.prices[i]
        dt_h = self.config.grid.step_h
        reward = step_reward(price, data.delivered_kw, dt_h)
        self._index = i + 1
        self._terminated = self._index >= self.config.grid.n_steps
        obs = self._observation(self._index, data.soc)
        self._last_obs = (obs, data)
        self.record.append(StepRow(
            step=i,
            observation=pre_obs,
            action=action,
            setpoint_kw=setpoint,
            delivered_kw=data.delivered_kw,
            soc=pre_data.soc,
            price_eur_mwh=price,
            reward_eur=reward,
            temp_c=data.temp_c,
        ))
        info = {
            "delivered_kw": data.delivered_kw,
            "price_eur_mwh": price,
            "temp_c": data.temp_c,
            "soc": data.soc,
        }
        return obs, reward, self._terminated, self._truncated, info

    def close(self) -> None:
        self.backend.close()

    # -- helpers ------------------------------------------------------------

    def _pace(self, i: int) -> None:
        """Block until step i may finish, per the clock mode.

        SimBackend completes instantly, so pacing sleeps here; a hardware
        backend is paced by the hardware itself and needs none.
        """
        if self.config.clock_mode == VIRTUAL or isinstance(self.backend, ModbusBackend):
            return
        factor = 1.0 if self.config.clock_mode == WALL else self.config.clock_factor
        boundary = self._wall_anchor + (i + 1) * self.config.grid.step_s / factor
        delay = boundary - time.monotonic()
        if delay > 0:
            time.sleep(delay)

    def _observation(self, index: int, soc: float) -> tuple:
        grid = self.config.grid
        price = self.config.prices[min(index, grid.n_steps - 1)]
        hour = _hour_of(grid.timestamp_of(index))
        angle = 2.0 * math.pi * hour / 24.0
        return (soc, price / PRICE_NORM_EUR_MWH, math.sin(angle), math.cos(angle))

    @property
    def terminated(self) -> bool:
        return bool(self._terminated)

    @property
    def truncated(self) -> bool:
        return bool(self._truncated)

    @property
    def step_index(self) -> int:
        return 0 if self._index is None else self._index
