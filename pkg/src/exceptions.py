from typing import Optional


class SknaException(Exception):
    pass


class FormatError(SknaException):
    pass


class DataError(SknaException):
    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class ConfigError(SknaException):
    pass


class ModelError(SknaException):
    pass


class ExcludedSegment(SknaException):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class FileOperationError(SknaException):
    pass
