"""Exception hierarchy shared by every oulab module."""


class OulabError(Exception):
    """Base class for all oulab failures."""


class ConfigurationError(OulabError):
    """Invalid sizes, grids, step lengths or scenario fields."""


class DomainError(OulabError):
    """Argument outside the mathematical domain of an operation."""


class EvaluationError(OulabError):
    """A point evaluation produced a non-finite value."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class InstabilityError(OulabError):
    """Time stepping blew up."""
