"""
Custom exceptions for the calibration toolkit
"""


class CalibrationToolkitError(Exception):
    """Base exception for calibration toolkit errors"""
    pass


class ConfigurationError(CalibrationToolkitError):
    """Raised when configuration is invalid"""
    pass


class InvalidParameterError(CalibrationToolkitError, ValueError):
    """Raised when an operation is called outside its documented domain"""
    pass


class EmptyHeadError(InvalidParameterError):
    """Raised when the head/tail threshold leaves no head class"""
    pass


class DataLoadError(CalibrationToolkitError):
    """Raised when data loading fails"""
    pass


class DataValidationError(DataLoadError):
    """Raised when loaded data violates a container invariant"""
    pass


class MissingArtifactError(CalibrationToolkitError):
    """Raised when an upstream pipeline artifact is absent"""
    pass


class DivergenceError(CalibrationToolkitError):
    """Raised when a Renyi d2 integral diverges"""
    pass


class TheoryCheckError(CalibrationToolkitError):
    """Raised when a theory verification case fails"""
    pass
