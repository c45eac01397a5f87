"""MODBUS/TCP bridge: register codec, framing, client, and the hardware
emulator that serves the non-ideal asset models over real TCP."""

from .registers import (
    RegisterSpec,
    RegisterMap,
    DEFAULT_REGISTER_MAP,
    encode_value,
    decode_value,
    load_register_map,
    save_register_map,
)
from .frames import MbapFrame, frame_to_bytes, parse_frame
from .client import ModbusClient
from .plant import PlantModel
from .emulator import EmulatorServer

__all__ = [
    "RegisterSpec",
    "RegisterMap",
    "DEFAULT_REGISTER_MAP",
    "encode_value",
    "decode_value",
    "load_register_map",
    "save_register_map",
    "MbapFrame",
    "frame_to_bytes",
    "parse_frame",
    "ModbusClient",
    "PlantModel",
    "EmulatorServer",
]
