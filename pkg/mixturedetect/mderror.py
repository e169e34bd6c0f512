"""
Mixture detection exceptions

The base class is MDNError

Every exception records the thing it is about in `source`:
    a file path, a parameter name or the operation that failed
"""


# importorator
__all__ = ['MDNError', 'ConfigurationError', 'UsageError', 'DomainError',
           'NumericError', 'FormatError', 'GenerationError']


# base exception
class MDNError(Exception):
    def __init__(self, source, message=''):
        self.source = source
        self.message = message
        super().__init__(f'{source}: {message}' if message else str(source))


# bad shapes, lengths or config values
class ConfigurationError(MDNError, ValueError):
    def __init__(self, source, message=''):
        super().__init__(source, message)


# bad command line values
class UsageError(ConfigurationError):
    def __init__(self, source, message=''):
        super().__init__(source, message)


# math domain error (sigma <= 0)
class DomainError(MDNError, ValueError):
    def __init__(self, source, message=''):
        super().__init__(source, message)


# non-finite values
class NumericError(MDNError, ArithmeticError):
    def __init__(self, source, message=''):
        super().__init__(source, message)


# unreadable checkpoint, csv or manifest
class FormatError(MDNError):
    def __init__(self, path, message=''):
        super().__init__(str(path), message)
        self.path = str(path)


# synthetic scene could not be placed
class GenerationError(MDNError):
    def __init__(self, source, message=''):
        super().__init__(source, message)
