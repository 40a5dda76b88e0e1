"""Exception types shared across the package."""


class RepdpError(Exception):
    """Base class for all package errors."""


class InvalidApplication(RepdpError):
    """Application failed validation; carries the violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnsupportedPrimitive(RepdpError):
    """An element requires a primitive the target does not offer."""


class RegistryExhausted(RepdpError):
    """No state ids left in the 32-bit id space."""


class DisconnectedTopology(RepdpError):
    """Topology graph is not connected."""


class InsufficientNodes(RepdpError):
    """Fewer eligible switches than requested replicas."""


class DisconnectedTerminals(RepdpError):
    """Steiner terminals do not lie in one connected component."""


class InfeasibleBudget(RepdpError):
    """Inconsistency budget cannot be met on this topology."""


class TruncatedHeader(RepdpError):
    """Byte string ends mid-way through an update header chain."""


class FieldOverflow(RepdpError):
    """Header field value does not fit its wire width."""


class ScenarioError(RepdpError):
    """Scenario file is malformed; carries file and line context."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        if path and line:
            where = f"{path}:{line}: "
        elif path:
            where = f"{path}: "
        else:
            where = ""
        super().__init__(f"{where}{message}")


class SimulationError(RepdpError):
    """Runtime failure while building or running a simulation."""
