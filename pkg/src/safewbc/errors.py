"""Domain-specific exceptions shared across the package."""


class ModelError(ValueError):
    """Malformed or physically inconsistent robot model description."""


class ScenarioError(ValueError):
    """Malformed scenario configuration. CLI maps this to exit code 2."""


class UnknownFrameError(KeyError):
    """A named frame does not exist on the model."""


class GimbalLockError(ValueError):
    """Spatial-base pitch too close to +-pi/2 for the Euler-ZYX chart."""


class SingularClosureError(ValueError):
    """Loop-closure anchor points coincide; the rod direction is undefined."""


class ContactLossError(ValueError):
    """Aggregate normal force below the minimum required for ZMP evaluation."""


class NoSupportError(ValueError):
    """Support polygon requested with no active contacts."""


class VanishingDecouplingError(ValueError):
    """Barrier row on the acceleration is numerically zero, so the barrier
    cannot influence the QP at this state."""


class UnsafeInitialStateError(ValueError):
    """Barrier value is negative at the initial state, so no pole choice can
    certify forward invariance of the safe set."""


class SimFault(RuntimeError):
    """Simulation produced a non-finite state or lost a scheduled contact.
    CLI maps this to exit code 3."""
