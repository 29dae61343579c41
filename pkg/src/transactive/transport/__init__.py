"""Message transports: deterministic in-process bus and TCP sockets."""

from .bus import LatencyModel, Receipt, SimNetwork

__all__ = ["LatencyModel", "Receipt", "SimNetwork"]
