"""Exception hierarchy.

Errors are grouped by how the CLI maps them to exit codes: input/data
problems exit 2, adapter (external process) problems exit 3, anything
else that escapes is an internal invariant violation and exits 4.
"""


class SplatgrowError(Exception):
    """Base class for all package errors."""


class InputError(SplatgrowError):
    """Bad user-supplied data: files, shapes, ranges, thresholds."""


class FormatError(InputError):
    """File has a bad magic number, version, or truncated payload."""


class RangeError(InputError):
    """A stored value violates its domain (alpha outside (0,1), s <= 0)."""


class NonUnitQuaternion(InputError):
    """Quaternion norm deviates from 1 beyond the corruption tolerance."""


class ShapeMismatch(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class BadThreshold(InputError):
    pass


class EmptyScene(InputError):
    pass


class BehindCamera(SplatgrowError):
    """Primitive center is at or behind the near plane."""


class TooSmall(InputError):
    """Image too small for the requested window-based metric."""


class DegenerateData(InputError):
    """Feature matrix rank is below the code dimension."""


class ZeroVector(InputError):
    pass


class NoBoundary(InputError):
    """Mask is constant; there is no inpainting boundary to trace."""


class AllMasked(InputError):
    """No known pixel exists to copy from."""


class NonPositiveDepth(InputError):
    pass


class EmptyOverlap(SplatgrowError):
    """No pixel qualifies for scale alignment; caller falls back to beta=1."""


class EmptyPool(InputError):
    pass


class AllExcluded(SplatgrowError):
    """Every image was excluded from the IoU aggregate."""


class UnknownQuery(InputError):
    """No embedding source (bank, file, sidecar) resolves the query."""


class AdapterFailure(SplatgrowError):
    """External adapter process failed: exit, malformed reply, or timeout.

    Carries the raw transcript of the exchange for debugging.
    """

    def __init__(self, message, transcript=""):
        super().__init__(message)
        self.transcript = transcript


class RoundAborted(SplatgrowError):
    """A growing round failed; the previous scene is retained."""
