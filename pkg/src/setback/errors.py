"""Exception hierarchy. Each family maps to a CLI exit code."""


class SetbackError(Exception):
    exit_code = 4


class ConfigError(SetbackError):
    exit_code = 2


class DataError(SetbackError):
    exit_code = 3


class StageError(SetbackError):
    exit_code = 4


class NoRampError(DataError):
    """A demand profile has no detectable ramp-up before its setback."""


class WindowOverlapError(DataError):
    """Morning and evening realignment windows intersect."""
