"""Exception types shared across the package."""


class ImgliftError(Exception):
    """Base class for all package errors."""


class ConfigError(ImgliftError):
    """Malformed pattern file or invalid runtime configuration."""


class NoReductionError(ImgliftError):
    """Rewrite target width would not shrink the image; pass through instead."""


class DecodeError(ImgliftError):
    """Byte stream is not a decodable image.

    Carries the detected magic bytes to aid debugging.
    """

    def __init__(self, message: str, magic: bytes = b""):
        super().__init__(message)
        self.magic = magic


class ShapeError(ImgliftError):
    """Tensor or image shape incompatible with the requested operation."""


class WindowError(ImgliftError):
    """Image smaller than the SSIM window."""


class LoadError(ImgliftError):
    """Model manifest or weight file failed to load."""


class ValidationError(ImgliftError):
    """Model graph shapes do not chain consistently."""


class ShutdownError(ImgliftError):
    """Job submitted to a pipeline that has been shut down."""


class IngestError(ImgliftError):
    """Malformed page capture (HAR or CSV)."""
