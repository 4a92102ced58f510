class BankforgeError(Exception):
    """Base class for all engine errors."""


class MismatchedMemory(BankforgeError):
    pass


class DimensionMismatch(BankforgeError):
    pass


class BoundsBudgetExceeded(BankforgeError):
    pass


class OutOfBounds(BankforgeError):
    pass


class NoValidP(BankforgeError):
    pass


class DisjointTrees(BankforgeError):
    pass


class MissingSchedule(BankforgeError):
    pass


class NoSolution(BankforgeError):
    pass


class NotMersenne(BankforgeError):
    pass


class NoMersenneMultiple(BankforgeError):
    pass


class NotRepresentable(BankforgeError):
    pass


class EmptyDataset(BankforgeError):
    pass


class DegenerateTarget(BankforgeError):
    pass


class SchemaError(BankforgeError):
    """Malformed input file; ``path`` locates the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
