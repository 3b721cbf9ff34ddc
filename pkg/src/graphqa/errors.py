"""Exception types shared across the package."""


class GraphQAError(Exception):
    """Base class for all package-specific errors."""


class DataError(GraphQAError):
    """Malformed or inconsistent input data (KB files, QA files, task specs)."""


class LinkError(DataError):
    """No KB entity could be linked to a question."""


class ConfigError(GraphQAError):
    """Invalid, unknown, or conflicting configuration."""


class GraphError(GraphQAError):
    """Invalid graph construction request."""


class ShapeError(GraphQAError):
    """Tensor shape mismatch or misuse of a tensor operation."""


class NumericsError(GraphQAError):
    """Non-finite values encountered during training or optimization."""
