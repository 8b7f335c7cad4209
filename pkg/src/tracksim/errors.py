"""Exception types raised by the simulator."""


class TrackError(ValueError):
    """Malformed or invalid track description."""


class CarModelError(ValueError):
    """Malformed or invalid car model description."""


class ConfigError(ValueError):
    """Invalid simulation configuration; message carries the offending key path."""


class ProtocolError(ValueError):
    """Malformed wire datagram or protocol desync."""


class SimulationFault(RuntimeError):
    """Non-finite state or another unrecoverable runtime fault; halts the episode."""


class StartupError(RuntimeError):
    """Server failed to start, e.g. a port in the requested range cannot be bound."""
