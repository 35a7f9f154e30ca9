"""
Exceptions raised by muonbench.

Each class also derives from the closest builtin, so code catching
``ValueError`` or ``ArithmeticError`` keeps working.
"""

__all__ = [
    'MuonbenchError',
    'ShapeError',
    'NumericError',
    'DegenerateInputError',
    'RangeError',
    'ConfigError',
    'ReportError',
]


class MuonbenchError(Exception):
    pass


class ShapeError(MuonbenchError, ValueError):
    pass


class NumericError(MuonbenchError, ArithmeticError):
    pass


class DegenerateInputError(MuonbenchError, ValueError):
    pass


class RangeError(MuonbenchError, ValueError):
    pass


class ConfigError(MuonbenchError, ValueError):
    """
    A configuration problem. ``key_path`` names the offending key
    (e.g. ``"sweep.batch_grid[2]"``) when there is one.
    """

    def __init__(self, message, key_path=None):
        if key_path:
            message = "{}: {}".format(key_path, message)
        super(ConfigError, self).__init__(message)
        self.key_path = key_path


class ReportError(MuonbenchError, OSError):

    def __init__(self, message, path):
        super(ReportError, self).__init__("{}: {}".format(path, message))
        self.path = path
