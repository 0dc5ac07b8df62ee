"""Exception hierarchy shared across the toolkit."""


class PcrError(Exception):
    """Base class for all errors raised by this package."""


# --- JPEG marker-stream parsing ---

class JpegParseError(PcrError):
    """Base class for progressive-JPEG parsing failures."""


class NotJpeg(JpegParseError):
    """Input does not start with an SOI marker."""


class NotProgressive(JpegParseError):
    """Frame is baseline/sequential (not SOF2); caller must transcode first."""


class Truncated(JpegParseError):
    """Stream ends mid-segment or mid-entropy-data without EOI."""


class Unsupported(JpegParseError):
    """Hierarchical / multi-frame / arithmetic-coded JPEG, or too many scans."""


class Malformed(JpegParseError):
    """Marker stream violates JPEG syntax (garbage where a marker is required)."""


# --- container format ---

class ContainerError(PcrError):
    """Base class for record container failures."""


class EmptyRecord(ContainerError):
    """Attempted to encode a record with no images."""


class BadMagic(ContainerError):
    """File does not start with the PCR magic."""


class VersionUnsupported(ContainerError):
    """Format version is newer than this reader understands."""


class CorruptIndex(ContainerError):
    """Metadata/index region fails its checksum or internal consistency."""


class TruncatedPayload(ContainerError):
    """File ends before the payload extent declared by the index."""


# --- reader ---

class ZeroLengthImage(PcrError):
    """Image has no bytes in scan group 1 (corrupt record)."""


class FidelityUnavailable(PcrError):
    """Requested scan group exceeds the record's group count."""


# --- fidelity metrics ---

class DimensionMismatch(PcrError):
    """Compared images have different dimensions."""


class TooSmall(PcrError):
    """Image too small for even a single SSIM scale."""


# --- autotuning ---

class ShapeMismatch(PcrError):
    """Feature batch / label / parameter shapes are inconsistent."""


class ZeroGradient(PcrError):
    """A gradient has zero norm; cosine similarity is undefined."""


# --- simulation ---

class ConfigInvalid(PcrError):
    """Simulation config fails validation."""
