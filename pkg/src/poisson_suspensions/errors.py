"""Exception hierarchy shared by all modules."""


class PoissonSuspensionError(Exception):
    """Base class for every error raised by this package."""


class UnknownComponent(PoissonSuspensionError, KeyError):
    pass


class DimensionMismatch(PoissonSuspensionError, ValueError):
    pass


class OutOfSupport(PoissonSuspensionError, ValueError):
    """A box or point lies outside the declared support of its component."""


class NonFiniteWindow(PoissonSuspensionError, ValueError):
    """The window has infinite mass or is unbounded."""


class OverlappingBoxes(PoissonSuspensionError, ValueError):
    pass


class UncoveredRegion(PoissonSuspensionError, ValueError):
    """Counts were requested outside the realized part of a configuration."""


class ComponentClash(PoissonSuspensionError, ValueError):
    pass


class DomainEscape(PoissonSuspensionError, ValueError):
    """A map sent a point outside the support of its target component."""


class NotBoxRepresentable(PoissonSuspensionError, ValueError):
    """The exact preimage of a box is not a finite union of boxes."""


class WindowBlowup(PoissonSuspensionError, RuntimeError):
    """An orbit needed more realized mass than the configured budget."""


class InsufficientReplicas(PoissonSuspensionError, ValueError):
    pass


class QuadratureFailure(PoissonSuspensionError, ArithmeticError):
    pass


class NotACube(PoissonSuspensionError, ValueError):
    pass


class ConfigError(PoissonSuspensionError, ValueError):
    pass


class RuntimeBudgetExceeded(PoissonSuspensionError, RuntimeError):
    """An experiment ran longer than its declared runtime budget."""
