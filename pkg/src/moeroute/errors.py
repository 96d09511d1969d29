"""Exception types raised across the package."""


class RoutingError(ValueError):
    """Base class for every error raised by moeroute."""


class EmptyInput(RoutingError):
    pass


class InvalidK(RoutingError):
    pass


class InvalidTemperature(RoutingError):
    pass


class NumericalDomain(RoutingError, ArithmeticError):
    """A log/exp intermediate left its valid domain by more than rounding."""


class UnknownOperator(RoutingError):
    pass


class ShapeMismatch(RoutingError):
    pass


class NegativeCycle(RoutingError, ArithmeticError):
    """A negative-cost cycle was found in a residual graph.

    Cannot happen for graphs produced by :func:`moeroute.flow.build_graph`;
    seeing it means the graph was constructed incorrectly.
    """


class InfeasibleMarginals(RoutingError):
    pass


class BadSpec(RoutingError):
    pass


class UnknownRouter(RoutingError):
    pass
