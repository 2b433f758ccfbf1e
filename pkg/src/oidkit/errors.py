"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class HierarchyError(DataError):
    """Invalid label hierarchy document or an unknown label."""


class InfeasibleError(DataError):
    """A search space has no admissible point."""
