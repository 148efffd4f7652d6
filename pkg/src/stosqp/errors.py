"""Exception hierarchy shared across the package."""


class SolverError(Exception):
    """Base class for every error raised by stosqp."""


class RankDeficient(SolverError):
    """Constraint Jacobian (or a Schur complement built from it) lost full row rank."""


class NotSpd(SolverError):
    """The Hessian approximation is not symmetric positive definite."""


class NonFinite(SolverError):
    """An input contained NaN or infinite entries."""


class NonConvergent(SolverError):
    """A root finder failed to certify its answer."""


class InvariantViolated(SolverError):
    """A per-iteration guarantee of the method failed.

    ``records`` holds the partial run log up to (and including) the
    offending iteration when raised from :func:`stosqp.core.run`.
    """

    def __init__(self, message, violations=(), records=None):
        super().__init__(message)
        self.violations = list(violations)
        self.records = records


class UnknownProblem(SolverError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown problem"


class MalformedLine(SolverError, ValueError):
    def __init__(self, line_no, text, reason=""):
        msg = f"line {line_no}: malformed record {text!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.line_no = line_no
        self.text = text


class NonBinaryLabel(SolverError, ValueError):
    pass


class BatchTooLarge(SolverError, ValueError):
    pass


class DegenerateSamples(SolverError):
    pass


class EmptyRun(SolverError, ValueError):
    pass


class SchemaMismatch(SolverError, ValueError):
    pass
