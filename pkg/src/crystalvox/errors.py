"""Exception types shared across the package."""


class CrystalVoxError(Exception):
    """Base class for all library errors."""


class MalformedFileError(CrystalVoxError):
    """Crystal file is missing required blocks or has unparseable values."""


class UnknownElementError(CrystalVoxError):
    """Element symbol does not map to an atomic number in [1, 118]."""


class NonP1SymmetryError(CrystalVoxError):
    """File declares symmetry operations other than identity; sites must be pre-expanded."""


class EmptyDatasetError(CrystalVoxError):
    """No usable files remain after filtering."""


class DegenerateCellError(CrystalVoxError):
    """Lattice parameters do not describe a positive-volume cell."""


class CellTooLargeError(CrystalVoxError):
    """Unit cell does not fit inside the sampling box."""


class LabelOutOfRangeError(CrystalVoxError):
    """Species label exceeds the configured class count."""


class ShapeMismatchError(CrystalVoxError):
    """Tensor or grid extents are incompatible with the requested operation."""


class BatchTooSmallError(CrystalVoxError):
    """Batch normalization in training mode needs more than one value per channel."""


class NonFiniteLossError(CrystalVoxError):
    """Training produced a NaN or infinite loss."""


class NonPositiveAlphaError(CrystalVoxError):
    """Conditioning targets must be strictly positive."""


class UntrainedModelError(CrystalVoxError):
    """Model must be trained (or loaded) before scoring."""


class EmptyTruthError(CrystalVoxError):
    """Evaluation requires a non-empty ground-truth atom list."""
