"""Exception hierarchy shared by all filter components."""


class SmcError(Exception):
    """Base class for library errors."""


class IncompatibleSpaces(SmcError, ValueError):
    """Two objects live on state spaces of different size."""


class InvalidDensity(SmcError, ValueError):
    """Probability vector with negative entries or wrong total mass."""


class ZeroPosteriorMass(SmcError, ArithmeticError):
    """Prior and likelihood are in complete conflict (zero normalizer)."""

    def __init__(self, message="zero posterior mass", t=None):
        if t is not None:
            message = f"{message} at t={t}"
        super().__init__(message)
        self.t = t


class FilterCollapse(SmcError, ArithmeticError):
    """Every particle received zero weight."""

    def __init__(self, t, detail="all weights zero"):
        super().__init__(f"filter collapse at t={t}: {detail}")
        self.t = t


class EnvelopeRequired(SmcError, ValueError):
    """Accept-reject sampling without a bound on the likelihood."""


class EnvelopeViolated(SmcError, ArithmeticError):
    """A proposal produced an acceptance probability above one."""


class AcceptanceStalled(SmcError, RuntimeError):
    """Accept-reject loop hit its attempt or round cap."""


class DegenerateObservation(SmcError, ValueError):
    """Observation value for which a closed-form proposal is undefined."""


class ConfigError(SmcError, ValueError):
    """Experiment configuration failed validation.

    ``errors`` holds every problem found, each as ``(line, message)``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class MissingHistory(SmcError, ValueError):
    """Backward smoothing needs the particle systems of every time step."""
