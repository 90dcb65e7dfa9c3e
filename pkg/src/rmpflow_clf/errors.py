"""Exception hierarchy shared by the tree, the task maps and the leaves."""


class RmpError(Exception):
    """Base class for all errors raised by this package."""


class StructureError(RmpError, ValueError):
    """Malformed tree: dimension mismatch, dangling node, cycle, duplicate name."""


class NumericalError(RmpError, ArithmeticError):
    """Non-finite quantity produced while evaluating a node.

    ``path`` names the node (``"root/robot0/attractor"``) when it is known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class SingularityError(NumericalError):
    """A task map was evaluated at (or too close to) one of its singular points."""


class ConfigError(RmpError, ValueError):
    """Invalid leaf, scenario or run configuration."""
