"""Exception types shared across the package."""


class FreeshellError(Exception):
    """Base class for every error raised by this package."""


class ParseError(FreeshellError):
    """A mesh or point-cloud file could not be parsed."""


class TopologyError(FreeshellError):
    """The mesh violates the required topology (manifold disk with boundary)."""


class RemeshError(FreeshellError):
    """Remeshing produced a configuration it could not repair."""


class SolveError(FreeshellError):
    """A linear system could not be solved."""


class NonFiniteError(FreeshellError):
    """A NaN or infinity appeared where a finite value was required."""


class LineSearchError(FreeshellError):
    """No step satisfying the Wolfe conditions was found."""


class ConvergenceError(FreeshellError):
    """An iterative stage hit its iteration cap before meeting its target."""


class DivergenceError(FreeshellError):
    """An iterative stage is moving away from its target."""


class DomainError(FreeshellError, ValueError):
    """An argument is outside its mathematical domain."""


class GeometryError(FreeshellError):
    """Solid generation hit a degenerate or infeasible configuration."""


class IoError(FreeshellError):
    """A file could not be read or written."""


class ConfigError(FreeshellError):
    """The pipeline configuration is malformed."""
