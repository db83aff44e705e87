"""Exception hierarchy.

Two families: ``ValidationError`` for bad inputs (CLI exit code 1) and
``NumericalError`` for numeric or infeasibility failures (exit code 2).
"""


class ValidationError(ValueError):
    pass


class DomainError(ValidationError):
    """Parameters outside the admissible range of an operation."""


class StructuralError(ValidationError):
    """Kernel or linear system lacks the structure an operation requires."""


class ConfigError(ValidationError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class NumericalError(ArithmeticError):
    pass


class ScheduleExhausted(NumericalError):
    pass


class SeriesDivergence(NumericalError):
    pass


class ThresholdOverflow(NumericalError):
    def __init__(self, which, limit):
        self.which = which
        self.limit = limit
        super().__init__(f"threshold {which} not reached below n = {limit:.0e}; constants too large for the schedule")


class FlowBlowUp(NumericalError):
    def __init__(self, escape_time):
        self.escape_time = escape_time
        super().__init__(f"ODE solution left the 1e12 ball at t = {escape_time:.6g}")


class BasinViolation(NumericalError):
    pass


class BoundVacuous(NumericalError):
    def __init__(self, m):
        self.m = m
        super().__init__(f"nested bound vacuous: non-positive denominator at segment m = {m}")


class ConditioningInfeasible(NumericalError):
    pass


class ComplexityOverflow(NumericalError):
    def __init__(self, term_index, terms):
        self.term_index = term_index
        self.terms = terms
        super().__init__(f"n0 term {term_index + 1} overflows double precision")
