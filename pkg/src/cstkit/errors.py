"""Exception and warning types shared across the toolkit."""


class CstkitError(Exception):
    """Base class for all toolkit errors."""


# --- volume I/O -------------------------------------------------------------

class MalformedHeader(CstkitError):
    """File does not carry a valid NIfTI-1 header."""


class UnsupportedDatatype(CstkitError):
    """Voxel datatype code outside the supported set."""


class UnsupportedDimensionality(CstkitError):
    """Volume is not 3-D (a trailing singleton time axis is tolerated)."""


class TruncatedData(CstkitError):
    """Voxel payload shorter than the header dimensions imply."""


class NonFiniteValues(CstkitError):
    """Volume contains NaN or infinite voxel values after scaling."""


class ValueOutOfRange(CstkitError):
    """Voxel values not representable in the requested output datatype."""


class IoFailure(CstkitError):
    """Underlying OS-level read or write failure."""


# --- mask grids -------------------------------------------------------------

class GridMismatch(CstkitError):
    """Two volumes differ in dimensions or voxel sizes."""


class AffineMismatch(CstkitError):
    """Two volumes share a grid shape but their affines disagree."""


class EmptyMask(CstkitError):
    """Operation requires a mask with at least one voxel set."""


# --- clinical statistics ----------------------------------------------------

class ComponentOutOfRange(CstkitError):
    """A motor-score component is outside its defined range."""


class NonPositiveHaematomaVolume(CstkitError):
    """Haematoma volume must be positive for the log transform."""


class EmptyCohortAfterFiltering(CstkitError):
    """Complete-case filtering left no usable subjects."""


class IdMismatch(CstkitError):
    """Subject records and integrity results do not align by id."""


class RankDeficient(CstkitError):
    """Design matrix has collinear columns."""


class TooFewObservations(CstkitError):
    """Fewer observations than model terms."""


class EmptyInput(CstkitError):
    """Statistic of an empty value list requested."""


class EmptyCohort(CstkitError):
    """Cohort table requested for an empty cohort."""


class RecordsError(CstkitError):
    """Subject records file violates the documented CSV schema."""


# --- phantoms and pipeline --------------------------------------------------

class GeometryOutOfBounds(CstkitError):
    """Phantom geometry does not fit inside the requested grid."""


class ManifestError(CstkitError):
    """Run manifest or phantom spec file is invalid."""


class DegenerateInputWarning(UserWarning):
    """Emitted when a metric is computed on degenerate input (e.g. two
    empty masks) and a convention value is returned instead of an error."""
