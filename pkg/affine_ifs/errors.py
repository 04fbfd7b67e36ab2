"""
Exception hierarchy for the affine IFS library.
"""


class AffineIFSError(Exception):
    """Base class for every error raised by the library."""
    pass


class InvalidWordError(AffineIFSError):
    """A word is empty or contains a symbol outside the alphabet."""
    pass


class InvalidMeasureError(AffineIFSError):
    """Probability data does not describe a valid ergodic shift measure."""
    pass


class PreconditionError(AffineIFSError):
    """An operation was called outside its documented domain."""
    pass


class NonContractingError(PreconditionError):
    """The IFS is not (average) contracting for the given measure."""
    pass


class InvalidEntropyError(AffineIFSError):
    """A conditional entropy sequence violates monotonicity or its caps."""
    pass


class ResourceBudgetError(AffineIFSError):
    """A requested computation exceeds its enumeration or memory budget."""
    pass


class InsufficientDataError(AffineIFSError):
    """Too few samples, pairs or slab points to produce an estimate."""
    pass
