"""Exception types shared across the package."""


class RangekitError(Exception):
    """Base class for all rangekit errors."""


class InvalidIntrinsics(RangekitError):
    """Sensor model parameters violate an invariant (e.g. non-monotone elevation table)."""


class OutOfFov(RangekitError):
    """Point elevation falls outside the sensor's vertical field of view."""


class DegenerateRange(RangekitError):
    """Point lies on or inside the receiver cylinder; projection is undefined."""


class EmptyInput(RangekitError):
    """An operation that requires non-empty input received none."""


class MissingNormals(RangekitError):
    """Registration requires a normal map for the destination image."""


class DegenerateGeometry(RangekitError):
    """Normal-equation system is rank deficient or too ill-conditioned to solve."""


class InvalidPose(RangekitError):
    """A rigid transform fails the orthonormality/determinant checks."""


class FormatError(RangekitError):
    """Malformed on-disk artifact. ``offset`` is the byte offset of the defect when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class TruncatedPayload(FormatError):
    """File ends before the declared payload is complete."""
