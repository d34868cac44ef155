"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class NpcgpError(Exception):
    exit_code = 1


class ConfigError(NpcgpError):
    exit_code = 2


class DataError(NpcgpError):
    exit_code = 3


class NumericError(NpcgpError):
    exit_code = 4


class StructuralError(NpcgpError):
    exit_code = 5


class ParameterError(NpcgpError, ValueError):
    exit_code = 6
