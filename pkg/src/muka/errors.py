"""Exception taxonomy.

Every malformed input maps to exactly one error class; nothing degrades to a
silent default. ``NumericalError`` subclasses signal failures of fitting or
optimization rather than of input validation, and the CLI maps the two groups
to different exit codes.
"""


class MukaError(Exception):
    """Base class for all engine errors."""


class NumericalError(MukaError):
    """A numerical procedure failed (solver, optimizer, loss)."""


# ---------------------------------------------------------------------------
# binary matrix files

class BadMagic(MukaError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(MukaError):
    """File declares an unsupported format version."""


class TruncatedPayload(MukaError):
    """Payload length disagrees with the header's rows x dim."""


class NonFiniteValue(MukaError):
    """A NaN or infinity was found in matrix data."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class ZeroNormRow(MukaError):
    """A row with zero Euclidean norm cannot be normalized."""

    def __init__(self, index: int):
        super().__init__(f"row {index} has zero norm and cannot be normalized")
        self.index = index


# ---------------------------------------------------------------------------
# manifests

class SchemaError(MukaError):
    """Manifest document is malformed or internally inconsistent."""


class ClassCountMismatch(MukaError):
    """A text head matrix does not have one row per class."""


class SampleCountMismatch(MukaError):
    """Audio matrices of different spaces disagree on sample count."""


class FoldOverlap(MukaError):
    """A fold lists the same sample in both its train and test parts."""


# ---------------------------------------------------------------------------
# kernels and adapters

class DimensionMismatch(MukaError):
    """Vectors or matrices have incompatible dimensionality."""


class RowCountMismatch(MukaError):
    """Per-space matrices disagree on row count."""


class MissingSpace(MukaError):
    """An input lacks a feature space required by the kernel spec."""

    def __init__(self, space_name: str):
        super().__init__(f"missing feature space {space_name!r}")
        self.space_name = space_name


class SpaceMismatch(MukaError):
    """A query or head refers to a space the input does not carry."""


class EmptyClass(MukaError):
    """A class has no training samples to draw supports from."""

    def __init__(self, class_index: int):
        super().__init__(f"class {class_index} has no training samples")
        self.class_index = class_index


class InvalidShots(MukaError):
    """Shot counts must be positive (and ascending for curves)."""


class SingularSystem(NumericalError):
    """The ridge system could not be factorized; expected only on non-finite input."""


class NonFiniteLoss(NumericalError):
    """Training loss became NaN or infinite (learning rate too large)."""


class NoConvergence(NumericalError):
    """An iterative oracle did not reach its tolerance within the step budget."""
