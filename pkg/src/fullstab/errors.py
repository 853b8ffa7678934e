"""Exception hierarchy.

``InputError`` subtypes map to CLI exit code 1, ``InconsistencyError`` to
exit code 2; everything else is an ordinary bug.
"""


class FullstabError(Exception):
    """Base class for toolkit errors."""


class InputError(FullstabError):
    """Bad user input: model files, dimensions, infeasible references."""


class ModelSyntaxError(InputError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + loc)


class UnknownIdentifierError(ModelSyntaxError):
    pass


class DimensionError(InputError):
    pass


class EvaluationError(FullstabError):
    """Runtime evaluation failure, e.g. division by zero; carries the
    offending subtree rendering."""

    def __init__(self, message, subtree=None):
        self.subtree = subtree
        if subtree is not None:
            message = f"{message} in subexpression '{subtree}'"
        super().__init__(message)


class InfeasiblePointError(InputError):
    pass


class InfeasibleSetError(InputError):
    pass


class NoMultiplierError(InputError):
    """No Lagrange multiplier exists: the reference triple is not on the
    solution-map graph."""


class UnboundedMultiplierError(FullstabError):
    """Multiplier set unbounded (MFCQ failure); second-order checks refuse
    to run.  Carries a recession direction witness."""

    def __init__(self, message, recession=None):
        self.recession = recession
        super().__init__(message)


class DeskScaleError(FullstabError):
    """Instance exceeds the documented enumeration caps."""


class DegenerateSampleError(FullstabError):
    """All sampled pairs/points were degenerate for the requested estimate."""


class SolveFailureError(FullstabError):
    pass


class LocalizationError(FullstabError):
    """No single-valued localization at the requested radii; carries the
    witness node."""

    def __init__(self, message, witness=None):
        self.witness = witness
        super().__init__(message)


class InconsistencyError(FullstabError):
    """Condition-based verdict and empirical harness disagree, or a proved
    implication chain breaks.  CLI exit code 2."""
