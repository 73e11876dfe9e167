"""Exception types shared across the toolkit."""


class CavesenseError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CavesenseError):
    """Invalid user input: malformed files, bad schemas, inconsistent config.

    CLI maps this to exit code 2.
    """


class EmptySimulationError(CavesenseError):
    """A simulated crossing never brought any source into detection range."""


class TaxonomyMismatchError(CavesenseError):
    """A classifier was calibrated against a different taxonomy scheme."""
