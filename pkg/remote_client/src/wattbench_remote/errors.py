"""Error taxonomy for the remote environment handle."""


class RemoteError(Exception):
    """Base class for everything this package raises on purpose."""


class ProtocolError(RemoteError):
    """The peer spoke, but not the protocol: malformed JSON, a response
    whose id does not match the request, missing or mistyped fields, or
    a request the server rejected as bad."""


class BusyError(RemoteError):
    """Another controller holds the environment."""


class LifecycleError(RemoteError):
    """The environment refused the command in its current episode state
    (step before reset, step after the episode ended)."""


class TransportError(RemoteError):
    """The connection could not be established or died mid-exchange and
    the single reconnect attempt did not save it."""
