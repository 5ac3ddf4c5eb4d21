"""Exception hierarchy shared by every module of the package."""


class SecrecyPlannerError(Exception):
    pass


class ScenarioError(SecrecyPlannerError, ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NoDestination(ScenarioError):
    pass


class DuplicatePosition(ScenarioError):
    pass


class NonPositiveParameter(ScenarioError):
    pass


class CoincidentNodes(SecrecyPlannerError, ValueError):
    pass


class DomainError(SecrecyPlannerError, ValueError):
    pass


class NonConvergence(SecrecyPlannerError, RuntimeError):
    pass


class SingularToTolerance(SecrecyPlannerError, ArithmeticError):
    pass


class InfeasibleAnchor(SecrecyPlannerError, ValueError):
    pass


class ParseError(SecrecyPlannerError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


class GridTooLarge(SecrecyPlannerError, ValueError):
    pass


class HeavyTailWarning(UserWarning):
    pass
