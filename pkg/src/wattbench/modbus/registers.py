"""Holding-register layout and the fixed-point codec shared by both ends.

Every quantity crossing the wire is a 16-bit word with a decimal scale
factor.  The codec goes through an exact integer divisor (scale 0.01 is
divisor 100) so that encode/decode round-trips are bit-exact for any value
that is a whole multiple of the scale.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from ..errors import CodecError, ConfigError

U16 = "u16"
I16 = "i16"

READ = "read"
READ_WRITE = "read_write"

# scale -> integer divisor; only exact decimal scales are allowed
_DIVISORS = {1.0: 1, 0.1: 10, 0.01: 100}


@dataclass(frozen=True)
class RegisterSpec:
    """One holding register: address, value encoding, and access mode."""

    address: int
    name: str
    kind: str
    scale: float
    unit: str
    access: str

    def __post_init__(self):
        if not 0 <= self.address <= 0xFFFF:
            raise ConfigError(f"register {self.name!r}: address {self.address} out of range")
        if self.kind not in (U16, I16):
            raise ConfigError(f"register {self.name!r}: kind must be u16 or i16, got {self.kind!r}")
        if self.scale not in _DIVISORS:
            raise ConfigError(
                f"register {self.name!r}: scale must be one of {sorted(_DIVISORS)}, got {self.scale!r}"
            )
        if self.access not in (READ, READ_WRITE):
            raise ConfigError(f"register {self.name!r}: access must be read or read_write")
        if not self.name:
            raise ConfigError("register name must be non-empty")

    @property
    def divisor(self) -> int:
        return _DIVISORS[self.scale]

    @property
    def writable(self) -> bool:
        return self.access == READ_WRITE


def encode_value(spec: RegisterSpec, value: float) -> int:
    """Engineering value -> signed raw count, rounding half away from zero.

    Raises CodecError, naming the register, if the rounded count does not
    fit the register's 16-bit range.
    """
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise CodecError(f"register {spec.name!r}: cannot encode {value!r}")
    scaled = float(value) * spec.divisor
    if scaled != scaled or scaled in (float("inf"), float("-inf")):
        raise CodecError(f"register {spec.name!r}: cannot encode non-finite value {value!r}")
    if scaled >= 0.0:
        raw = int(scaled + 0.5)
    else:
        raw = -int(-scaled + 0.5)
    if spec.kind == U16:
        lo, hi = 0, 0xFFFF
    else:
        lo, hi = -0x8000, 0x7FFF
    if not lo <= raw <= hi:
        raise CodecError(
            f"register {spec.name!r}: value {value!r} encodes to {raw}, outside [{lo}, {hi}]"
        )
    return raw


def decode_value(spec: RegisterSpec, raw: int) -> float:
    """Raw count (signed, or an unsigned wire word) -> engineering value."""
    if not isinstance(raw, int) or isinstance(raw, bool):
        raise CodecError(f"register {spec.name!r}: raw count must be an int, got {raw!r}")
    if spec.kind == I16:
        if raw > 0x7FFF:
            raw -= 0x10000
        if not -0x8000 <= raw <= 0x7FFF:
            raise CodecError(f"register {spec.name!r}: raw count {raw} outside i16 range")
    else:
        if not 0 <= raw <= 0xFFFF:
            raise CodecError(f"register {spec.name!r}: raw count {raw} outside u16 range")
    return raw / spec.divisor


def raw_to_word(raw: int) -> int:
    """Signed raw count -> unsigned 16-bit wire word (two's complement)."""
    return raw & 0xFFFF


class RegisterMap:
    """An ordered set of RegisterSpecs addressable by name or address."""

    def __init__(self, registers, unit_id: int = 1):
        regs = tuple(registers)
        if not regs:
            raise ConfigError("register map must not be empty")
        if not 0 <= unit_id <= 0xFF:
            raise ConfigError(f"unit id {unit_id} out of range")
        self.registers = regs
        self.unit_id = unit_id
        self._by_address = {}
        self._by_name = {}
        for spec in regs:
            if spec.address in self._by_address:
                raise ConfigError(f"duplicate register address {spec.address}")
            if spec.name in self._by_name:
                raise ConfigError(f"duplicate register name {spec.name!r}")
            self._by_address[spec.address] = spec
            self._by_name[spec.name] = spec

    def by_address(self, address: int) -> RegisterSpec:
        try:
            return self._by_address[address]
        except KeyError:
            raise KeyError(f"no register at address {address}") from None

    def by_name(self, name: str) -> RegisterSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"no register named {name!r}") from None

    def has_address(self, address: int) -> bool:
        return address in self._by_address

    def __iter__(self):
        return iter(self.registers)

    def __len__(self):
        return len(self.registers)

    def __eq__(self, other):
        if not isinstance(other, RegisterMap):
            return NotImplemented
        return self.registers == other.registers and self.unit_id == other.unit_id


DEFAULT_REGISTER_MAP = RegisterMap(
    [
        RegisterSpec(0, "soc", U16, 0.01, "%", READ),
        RegisterSpec(1, "battery_power", I16, 0.01, "kW", READ),
        RegisterSpec(2, "battery_setpoint", I16, 0.01, "kW", READ_WRITE),
        RegisterSpec(3, "room_temp", I16, 0.01, "degC", READ),
        RegisterSpec(4, "thermostat_setpoint", I16, 0.01, "degC", READ_WRITE),
        RegisterSpec(5, "pv_power", I16, 0.01, "kW", READ),
        RegisterSpec(6, "load_power", U16, 0.01, "kW", READ),
        RegisterSpec(7, "grid_power", I16, 0.01, "kW", READ),
        RegisterSpec(8, "heartbeat", U16, 1.0, "count", READ),
    ]
)

_MAP_SECTION = "map"
_REGISTER_KEYS = {"address", "kind", "scale", "unit", "access"}


def save_register_map(reg_map: RegisterMap, path) -> None:
    """Write a register map as an INI file, one section per register."""
    # interpolation=None so the literal '%' unit survives
    parser = configparser.ConfigParser(interpolation=None)
    parser[_MAP_SECTION] = {"unit_id": str(reg_map.unit_id)}
    for spec in reg_map:
        parser[spec.name] = {
            "address": str(spec.address),
            "kind": spec.kind,
            "scale": repr(spec.scale),
            "unit": spec.unit,
            "access": spec.access,
        }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_register_map(path) -> RegisterMap:
    """Read a register map written by save_register_map.

    Unknown keys are rejected rather than ignored so that a typo in a
    config file fails loudly.
    """
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    unit_id = 1
    if parser.has_section(_MAP_SECTION):
        for key in parser[_MAP_SECTION]:
            if key != "unit_id":
                raise ConfigError(f"{path}: unknown key {key!r} in [{_MAP_SECTION}]")
        if "unit_id" in parser[_MAP_SECTION]:
            unit_id = parser.getint(_MAP_SECTION, "unit_id")
    registers = []
    for section in parser.sections():
        if section == _MAP_SECTION:
            continue
        keys = set(parser[section])
        unknown = keys - _REGISTER_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown key {sorted(unknown)[0]!r} in [{section}]")
        missing = _REGISTER_KEYS - keys
        if missing:
            raise ConfigError(f"{path}: [{section}] missing key {sorted(missing)[0]!r}")
        try:
            registers.append(
                RegisterSpec(
                    address=parser.getint(section, "address"),
                    name=section,
                    kind=parser.get(section, "kind"),
                    scale=float(parser.get(section, "scale")),
                    unit=parser.get(section, "unit"),
                    access=parser.get(section, "access"),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: [{section}]: {exc}") from exc
    registers.sort(key=lambda spec: spec.address)
    return RegisterMap(registers, unit_id=unit_id)
