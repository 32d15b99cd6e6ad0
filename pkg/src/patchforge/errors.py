"""Exception types shared across the pipeline."""


class PatchForgeError(Exception):
    """Base class for all patchforge errors."""


class InvalidCoordinateError(PatchForgeError):
    """A patch coordinate lies outside its grid."""


class DimensionMismatchError(PatchForgeError):
    """Pixel data does not match the expected grid or image dimensions."""


class EmptyPatchSetError(PatchForgeError):
    """An operation that needs a non-empty patch set received an empty one."""


class NoCandidateError(PatchForgeError):
    """The add tool found no candidate placement cells after clipping."""


class NoReferenceError(PatchForgeError):
    """The reference pool for a mapping is empty."""


class UnknownArtifactTypeError(PatchForgeError):
    """An artifact type outside duplication/omission/distortion/fusion."""


class MalformedGeometryError(PatchForgeError):
    """A region annotation carries invalid geometry."""


class ClientError(PatchForgeError):
    """Base class for judge/embedding client failures."""


class ClientTransportError(ClientError):
    """The remote endpoint could not be reached or returned a bad status."""


class UnparseableReplyError(ClientError):
    """The client reply did not contain the expected token or structure."""


class EmptyReplyError(ClientError):
    """The client returned an empty reply where text was required."""


class ConfigError(PatchForgeError):
    """Pipeline configuration failed validation."""


class MissingFieldError(PatchForgeError):
    """A record is missing a required field."""
