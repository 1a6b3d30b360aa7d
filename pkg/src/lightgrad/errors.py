"""Exception types shared across the package."""


class LightGradError(Exception):
    pass


class DomainError(LightGradError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(LightGradError, ValueError):
    pass


class ConfigError(LightGradError, ValueError):
    pass


class AlignmentError(LightGradError, ValueError):
    """No monotone surjective alignment exists for the given sizes."""


class VocabularyError(LightGradError, KeyError):
    pass


class PlanningError(LightGradError, ValueError):
    pass


class FormatError(LightGradError):
    """Malformed mel, checkpoint, transcript or config file."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class CheckpointError(FormatError):
    pass
