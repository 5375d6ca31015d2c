"""Exception hierarchy. The CLI maps these onto process exit codes."""


class PdeflowError(Exception):
    """Base class for all library errors."""


class ValidationError(PdeflowError, ValueError):
    """Malformed input: bad parameters, inconsistent shapes, broken files."""


class GridMismatchError(ValidationError):
    """Two fields that must share a grid do not."""


class FormatError(ValidationError):
    """A container file could not be parsed or does not match its header."""


class UndefinedMetricError(PdeflowError, ValueError):
    """A region statistic is undefined for the given samples."""


class NumericalError(PdeflowError, ArithmeticError):
    """The numerics cannot proceed (instability, divergence)."""


class CFLError(NumericalError):
    """The requested time step violates the CFL bound.

    ``max_stable_dt`` is the largest admissible step for the given fields;
    ``iteration`` is set when the violation happens inside a fit.
    """

    def __init__(self, dt, max_stable_dt, iteration=None):
        self.dt = dt
        self.max_stable_dt = max_stable_dt
        self.iteration = iteration
        msg = f"dt={dt:g} s exceeds the CFL bound {max_stable_dt:g} s"
        if iteration is not None:
            msg += f" at iteration {iteration} (velocities grew too large)"
        super().__init__(msg)
