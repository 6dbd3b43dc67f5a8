"""Shared exception types.

ConfigError covers malformed inputs and schema violations and maps to CLI
exit code 2. NumericalError covers convergence and degeneracy failures and
maps to exit code 3.
"""


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass
