"""Exception hierarchy shared by the solvers and the runner.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical or runtime failures with 3, failed assertions with 1.
"""


class KramersLabError(Exception):
    """Base class for all errors raised by the package."""


class AssumptionError(KramersLabError, ValueError):
    """A coefficient field or profile violates a structural assumption."""

    def __init__(self, assumption: str, detail: str):
        self.assumption = assumption
        super().__init__(f"{assumption}: {detail}")


class CatalogError(KramersLabError, KeyError):
    """Unknown catalog entry or parameter name."""

    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class GridError(KramersLabError, ValueError):
    """Grid or step size violates a solver precondition."""


class SchemeError(KramersLabError, ArithmeticError):
    """A discrete scheme lost a property it must preserve (positivity, monotonicity, ...)."""


class NumericalError(KramersLabError, ArithmeticError):
    """Non-finite values, singular systems or non-convergence."""


class ConfigError(KramersLabError, ValueError):
    """Invalid or unparsable experiment configuration."""
