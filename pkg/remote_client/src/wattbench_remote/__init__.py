"""TCP client for a served wattbench environment."""

from .client import EnvSpec, RemoteEnv
from .errors import (
    BusyError,
    LifecycleError,
    ProtocolError,
    RemoteError,
    TransportError,
)

__version__ = "0.1.0"

__all__ = [
    "BusyError",
    "EnvSpec",
    "LifecycleError",
    "ProtocolError",
    "RemoteEnv",
    "RemoteError",
    "TransportError",
]
