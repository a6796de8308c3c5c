"""Exception types shared across the simulator."""


class FalloutSimError(Exception):
    """Base class for all simulator errors."""


class ContractViolation(FalloutSimError):
    """An internal invariant or API precondition was broken."""


class StallError(FalloutSimError):
    """A store could not be buffered because the store buffer is full."""


class ConfigError(FalloutSimError):
    """Bad user-supplied configuration (profiles, thresholds, overrides)."""


class InconsistentSubkeys(FalloutSimError):
    """Recovered round-9/round-10 subkeys do not belong to the same schedule."""


class RecoveryTimeout(FalloutSimError):
    """A leaked byte produced no usable hits within the trial budget."""
