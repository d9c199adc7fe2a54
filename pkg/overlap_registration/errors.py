"""Exception hierarchy shared across the registration toolkit."""


class OverlapRegError(Exception):
    """Base class for all toolkit errors."""
    pass


class GeometryError(OverlapRegError, ValueError):
    """Raised when a point cloud, transform or field-of-view violates its invariants."""
    pass


class EmptyTargetError(OverlapRegError, ValueError):
    """Raised when a spatial index is built over an empty cloud."""
    pass


class AlignmentError(OverlapRegError):
    """Raised when closed-form rigid alignment cannot produce a transform."""
    pass


class DegenerateCorrespondencesError(AlignmentError):
    """Fewer than three correspondences carry positive weight."""
    pass


class RankDeficientError(AlignmentError):
    """Weighted source points do not span three dimensions."""
    pass


class ReflectionError(AlignmentError):
    """The optimal rotation came out with a negative determinant."""
    pass


class RegistrationError(OverlapRegError):
    """Raised when a registrar cannot complete a run."""
    pass


class NoOverlapSupportError(RegistrationError):
    """Every point was excluded by external weights."""
    pass


class NoModelSupportError(RegistrationError):
    """All responsibilities were absorbed by the outlier component."""
    pass


class ModelOutsideOverlapError(RegistrationError):
    """Model reweighting drove every component weight to zero."""
    pass


class EmptyViewError(OverlapRegError):
    """No world point survived the field-of-view cull."""
    pass


class DatasetError(OverlapRegError):
    """Raised when a dataset file cannot be read or written.

    Attributes:
        path: File the error refers to (may be None)
        location: Byte offset or line number, when known
    """

    def __init__(self, message: str, path=None, location=None):
        self.path = path
        self.location = location
        prefix = f'{path}: ' if path is not None else ''
        super().__init__(f'{prefix}{message}')


class PlyFormatError(DatasetError):
    """Malformed, truncated or unsupported PLY file."""
    pass


class KittiFormatError(DatasetError):
    """Malformed KITTI scan, pose or calibration file."""
    pass


class ResultSchemaError(DatasetError):
    """Results document does not match the published schema."""
    pass
