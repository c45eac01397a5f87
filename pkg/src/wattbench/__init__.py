"""Desk-scale home energy lab: emulated MODBUS hardware, a battery
arbitrage environment, tabular controllers, and a sim-to-real harness.

The package is organized as:

* ``core``      time grids, units, seeding, episode records
* ``assets``    battery / thermal / trace models as pure transition functions
* ``modbus``    register codec, framing, client, and the hardware emulator
* ``prices``    day-ahead price ingestion (fixtures and HTTP) and resampling
* ``env``       the episodic control interface over sim or hardware backends
* ``control``   dynamic-programming and Q-learning dispatch policies
* ``transfer``  runs one policy against both backends and reports the gap
* ``telemetry`` run directories, step logs, CSV export
* ``serve``     newline-delimited JSON TCP access to an environment
* ``cli``       the ``wattbench`` command
"""

__version__ = "0.1.0"

from .errors import (
    CodecError,
    ConfigError,
    LifecycleError,
    ParseError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .core import TimeGrid, parse_utc, format_utc
from .assets import BatteryParams, ThermalParams
from .env import (
    ArbitrageEnv,
    ArbitrageEnvConfig,
    ModbusBackend,
    SimBackend,
)
from .modbus import (
    DEFAULT_REGISTER_MAP,
    EmulatorServer,
    ModbusClient,
    PlantModel,
)
from .prices import fetch_day_ahead, load_fixture, resample, save_fixture
from .control import (
    Hyperparameters,
    dp_solve,
    load_policy,
    rollout,
    save_policy,
    threshold_policy,
    train,
)
from .transfer import run_transfer
from .telemetry import RunLogger

__all__ = [
    "__version__",
    "CodecError",
    "ConfigError",
    "LifecycleError",
    "ParseError",
    "ProtocolError",
    "TransportError",
    "ValidationError",
    "TimeGrid",
    "parse_utc",
    "format_utc",
    "BatteryParams",
    "ThermalParams",
    "ArbitrageEnv",
    "ArbitrageEnvConfig",
    "ModbusBackend",
    "SimBackend",
    "DEFAULT_REGISTER_MAP",
    "EmulatorServer",
    "ModbusClient",
    "PlantModel",
    "fetch_day_ahead",
    "load_fixture",
    "resample",
    "save_fixture",
    "Hyperparameters",
    "dp_solve",
    "load_policy",
    "rollout",
    "save_policy",
    "threshold_policy",
    "train",
    "run_transfer",
    "RunLogger",
]
