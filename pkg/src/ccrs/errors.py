"""Exception taxonomy shared across the package (drives CLI exit codes)."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge or diverged."""


class DegenerateGapError(RuntimeError):
    """An orbital-energy denominator fell below the degeneracy guard."""


class ContainerError(IOError):
    """A datastore container failed validation (magic, version, truncation)."""
