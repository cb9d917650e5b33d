"""Exception types shared across the checker."""


class CheckerError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(CheckerError):
    """An option value supplied by the caller does not fit the program."""


class ParseError(CheckerError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg = msg
        self.line = line
        self.col = col


class WellFormednessError(CheckerError):
    def __init__(self, diagnostics):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = list(diagnostics)


class EvalError(CheckerError):
    """Unbound variable, index out of bounds, division by zero."""


class StuckSampling(EvalError):
    """A sampling instruction received a random value as a parameter."""


class ScaleError(EvalError):
    """Non-positive or unsupported Laplace scale."""


class UnrollLimit(CheckerError):
    """A loop with a non-concrete bound exceeded the unroll limit."""


class UnmappedSymbol(CheckerError):
    """A substitution does not cover a symbol of its target."""


class GroundEvalError(CheckerError):
    """A ground constraint could not be evaluated (e.g. division by zero)."""


class SolverError(CheckerError):
    """The SMT solver produced an error or unparsable output."""


class SolverMissing(SolverError):
    """No solver executable could be found."""


class OracleError(CheckerError):
    """Non-concrete input, window too small, or precondition violated."""
