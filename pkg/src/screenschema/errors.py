"""Exception hierarchy shared by all modules."""


class ScreenSchemaError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(ScreenSchemaError, ValueError):
    pass


class DimensionError(ScreenSchemaError, ValueError):
    pass


class SizeError(ScreenSchemaError, ValueError):
    """Raised when a sequence is too short for the requested operation."""


class DecodeError(ScreenSchemaError):
    pass


class SequenceError(ScreenSchemaError):
    """Frame files are missing or not contiguous."""


class ValidationError(ScreenSchemaError, ValueError):
    pass


class VersionError(ValidationError):
    pass


class SerializationError(ScreenSchemaError, ValueError):
    pass


class ParamsFileError(ScreenSchemaError):
    pass


class BackendError(ScreenSchemaError):
    """An external OCR or generation backend failed."""


class ScriptingError(BackendError):
    """A scripted mock backend received a request it has no entry for."""


class TransportError(BackendError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ProtocolError(BackendError):
    pass


class BackendTimeout(BackendError):
    pass
