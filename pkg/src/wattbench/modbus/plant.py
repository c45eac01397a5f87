"""The emulated plant behind the registers: battery, heated room, traces.

PlantModel owns all mutable state and is advanced one tick at a time.  It is
not thread-safe on its own; EmulatorServer serializes ticks and register
access behind one lock so that observable behavior equals a single ordered
sequence of (tick | read | write) events.

The written setpoint registers are the authority: each tick decodes them
through the register codec, so a setpoint that does not fall on a codec
quantum is quantized before it steers the model.
"""

from __future__ import annotations

from dataclasses import replace

from ..assets import (
    BatteryParams,
    BatteryState,
    ThermalParams,
    ThermalState,
    Trace,
    battery_step,
    meter_net_kw,
    thermal_step,
    trace_sample,
)
from ..core import make_rng
from ..errors import ConfigError
from .frames import EX_ILLEGAL_ADDRESS
from .registers import (
    DEFAULT_REGISTER_MAP,
    RegisterMap,
    decode_value,
    encode_value,
    raw_to_word,
)

# Bounds that keep every encodable quantity inside a 16-bit register for the
# life of the run, checked once at construction.
_MAX_PLANT_POWER_KW = 100.0
_MAX_PLANT_TEMP_C = 300.0

MAX_TICK_S = 60


class RegisterFault(Exception):
    """A read or write that must be answered with a MODBUS exception."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class PlantModel:
    """Deterministic battery + thermal zone + trace replay, register-mapped."""

    def __init__(
        self,
        battery: BatteryParams | None = None,
        thermal: ThermalParams | None = None,
        pv_trace: Trace | None = None,
        load_trace: Trace | None = None,
        reg_map: RegisterMap = DEFAULT_REGISTER_MAP,
        tick_s: int = 10,
        seed: int = 0,
        initial_soc: float = 0.5,
        initial_temp_c: float = 18.0,
    ):
        if not isinstance(tick_s, int) or not 0 < tick_s <= MAX_TICK_S:
            raise ConfigError(f"tick_s must be an integer in 1..{MAX_TICK_S}, got {tick_s!r}")
        battery = battery if battery is not None else BatteryParams()
        thermal = thermal if thermal is not None else ThermalParams()
        if not battery.soc_min <= initial_soc <= battery.soc_max:
            raise ConfigError(
                f"initial_soc {initial_soc} outside [{battery.soc_min}, {battery.soc_max}]"
            )
        if battery.p_max_kw > _MAX_PLANT_POWER_KW:
            raise ConfigError(
                f"p_max_kw {battery.p_max_kw} exceeds the register-safe bound "
                f"{_MAX_PLANT_POWER_KW} kW"
            )
        ceiling = max(
            abs(initial_temp_c),
            abs(thermal.t_ambient_c),
            abs(thermal.t_ambient_c) + thermal.heat_rate_k_per_h * thermal.tau_h,
        )
        if ceiling > _MAX_PLANT_TEMP_C:
            raise ConfigError("thermal parameters can leave the register-safe range")
        for trace, name, lo, hi in (
            (pv_trace, "pv", -_MAX_PLANT_POWER_KW, 0.0),
            (load_trace, "load", 0.0, _MAX_PLANT_POWER_KW),
        ):
            if trace is None:
                continue
            for i, s in enumerate(trace.samples):
                if not lo <= s <= hi:
                    raise ConfigError(
                        f"{name} trace sample {i} = {s} outside [{lo}, {hi}] kW"
                    )

        self.reg_map = reg_map
        self.tick_s = tick_s
        self.battery_params = battery
        self._thermal_params = thermal
        self.pv_trace = pv_trace
        self.load_trace = load_trace
        self._rng = make_rng(seed)
        self.battery_state = BatteryState(soc=initial_soc)
        self.thermal_state = ThermalState(temp_c=initial_temp_c, heater_on=False)
        self.tick_count = 0

        self._spec = {}
        for name in (
            "soc", "battery_power", "battery_setpoint", "room_temp",
            "thermostat_setpoint", "pv_power", "load_power", "grid_power",
            "heartbeat",
        ):
            try:
                self._spec[name] = reg_map.by_name(name)
            except KeyError:
                raise ConfigError(f"register map lacks required register {name!r}") from None
        # Extra registers beyond the canonical nine are served as plain words.
        self._words: dict[int, int] = {spec.address: 0 for spec in reg_map}
        self._store("battery_setpoint", 0.0)
        self._store("thermostat_setpoint", thermal.setpoint_c)
        self._publish(delivered_kw=0.0)

    # -- register plumbing --------------------------------------------------

    def _store(self, name: str, value: float) -> None:
        spec = self._spec[name]
        self._words[spec.address] = raw_to_word(encode_value(spec, value))

    def _load(self, name: str) -> float:
        spec = self._spec[name]
        return decode_value(spec, self._words[spec.address])

    def _trace_values(self) -> tuple[float, float]:
        elapsed_s = self.tick_count * self.tick_s
        pv = load = 0.0
        if self.pv_trace is not None:
            g = self.pv_trace.grid
            pv = trace_sample(self.pv_trace, (elapsed_s // g.step_s) % g.n_steps)
        if self.load_trace is not None:
            g = self.load_trace.grid
            load = trace_sample(self.load_trace, (elapsed_s // g.step_s) % g.n_steps)
        return pv, load

    def _publish(self, delivered_kw: float) -> None:
        pv, load = self._trace_values()
        self._store("soc", self.battery_state.soc * 100.0)
        self._store("battery_power", delivered_kw)
        self._store("room_temp", self.thermal_state.temp_c)
        self._store("pv_power", pv)
        self._store("load_power", load)
        self._store("grid_power", meter_net_kw(load, pv, delivered_kw))
        spec = self._spec["heartbeat"]
        self._words[spec.address] = self.tick_count & 0xFFFF

    # -- dynamics -----------------------------------------------------------

    @property
    def dt_h(self) -> float:
        return self.tick_s / 3600.0

    def advance_tick(self) -> None:
        """Run one emulated tick from the currently written setpoints."""
        setpoint_kw = self._load("battery_setpoint")
        thermostat_c = self._load("thermostat_setpoint")
        if thermostat_c != self._thermal_params.setpoint_c:
            self._thermal_params = replace(self._thermal_params, setpoint_c=thermostat_c)

        # One standard-normal draw per tick, consumed whether or not the
        # battery uses it, so the stream position depends only on tick count.
        draw = float(self._rng.standard_normal())
        self.battery_state, delivered = battery_step(
            self.battery_params, self.battery_state, setpoint_kw, self.dt_h, draw
        )
        self.thermal_state = thermal_step(self._thermal_params, self.thermal_state, self.dt_h)
        self.tick_count += 1
        self._publish(delivered_kw=delivered)

    # -- server-facing access ----------------------------------------------

    def handle_read(self, address: int, count: int) -> list:
        words = []
        for addr in range(address, address + count):
            if addr not in self._words:
                raise RegisterFault(EX_ILLEGAL_ADDRESS, f"no register at address {addr}")
            words.append(self._words[addr])
        return words

    def handle_write(self, address: int, word: int) -> None:
        if not self.reg_map.has_address(address) or address not in self._words:
            raise RegisterFault(EX_ILLEGAL_ADDRESS, f"no register at address {address}")
        spec = self.reg_map.by_address(address)
        if not spec.writable:
            raise RegisterFault(EX_ILLEGAL_ADDRESS, f"register {spec.name!r} is read-only")
        self._words[address] = word & 0xFFFF

    def check_writable(self, address: int) -> None:
        """Raise the fault a write to ``address`` would raise, without writing."""
        if not self.reg_map.has_address(address):
            raise RegisterFault(EX_ILLEGAL_ADDRESS, f"no register at address {address}")
        spec = self.reg_map.by_address(address)
        if not spec.writable:
            raise RegisterFault(EX_ILLEGAL_ADDRESS, f"register {spec.name!r} is read-only")

    def value(self, name: str) -> float:
        """Engineering value of a register, decoded from its current word."""
        spec = self.reg_map.by_name(name)
        return decode_value(spec, self._words[spec.address])
