"""Exception hierarchy shared by every copmcts module."""


class CopError(Exception):
    """Base class for all copmcts errors."""


class ParamError(CopError, ValueError):
    pass


class FormatError(CopError, ValueError):
    """Malformed instance or weight file; message carries line/field context."""


class UnboundVariable(CopError, KeyError):
    pass


class NoUnbound(CopError):
    """A heuristic was asked to choose among zero unbound variables."""


class DimensionMismatch(CopError, ValueError):
    pass


class ActionBound(CopError, ValueError):
    pass


class NonFiniteLoss(CopError, FloatingPointError):
    pass


class VersionMismatch(FormatError):
    pass


class TreeExhausted(CopError):
    """Every branch of the MCTS tree has been fully explored."""


class DeadTree(TreeExhausted):
    """The MCTS root has been proven infeasible."""


class EmptyDomain(CopError):
    pass


class UnvisitedNode(CopError, ValueError):
    pass


class CutoffUnknown(CopError):
    """Node budget exhausted before optimality (or infeasibility) was proven."""

    def __init__(self, message, best=None, nodes=0):
        super().__init__(message)
        self.best = best
        self.nodes = nodes
