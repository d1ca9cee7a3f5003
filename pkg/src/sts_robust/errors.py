"""Exception types shared across the toolkit.

Each error carries the process exit code the CLI maps it to.
"""


class StsError(Exception):
    exit_code = 1


class NonFiniteState(StsError, ArithmeticError):
    """A state or derivative became NaN or infinite."""

    exit_code = 7


class OutOfDomain(StsError, ValueError):
    exit_code = 8


class Infeasible(StsError):
    """No input inside the box satisfies the equality constraints."""

    exit_code = 3


class SingularConfiguration(StsError):
    """z -> theta map undefined (vertical or aligned geometry)."""

    exit_code = 4


class RiccatiBlowup(StsError):
    exit_code = 5


class AllInfinite(StsError):
    """Every probe of a DFO step returned an infinite cost."""

    exit_code = 6


class ZeroBaselineTerm(StsError):
    exit_code = 9


class DegenerateExtrapolation(StsError):
    exit_code = 10
