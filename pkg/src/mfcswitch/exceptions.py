"""Exception hierarchy shared by all solver modules."""


class MFCError(Exception):
    """Base class for errors raised by mfcswitch."""


class ScenarioError(MFCError):
    """Problem data could not be turned into a Scenario."""


class ScenarioParseError(ScenarioError):
    """Malformed scenario file or expression."""


class ScenarioSchemaError(ScenarioError):
    """A required key is missing or has the wrong shape."""


class ScenarioDomainError(ScenarioError):
    """A value is outside its admissible range (e.g. negative horizon)."""


class UnknownPreset(MFCError, KeyError):
    pass


class DeltaTooSmall(MFCError):
    """The multiplier mass is not strictly below the truncation parameter delta."""


class NoConvergence(MFCError):
    """An iterative solver hit its iteration cap.

    The best iterate and its residual are attached so callers can still
    write out artifacts.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InfeasibleControl(MFCError):
    """A negative jump intensity makes the running cost infinite."""


class TooLarge(MFCError):
    """The brute-force program would exceed its size budget."""
