"""Exception types shared across the toolkit, mapped to CLI exit codes."""


class PipelineError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(PipelineError, ValueError):
    """Invalid configuration: bad fractions, unknown backend spec, malformed config file."""

    exit_code = 2


class DataError(PipelineError, ValueError):
    """Invalid or inconsistent data: malformed records, dimension mismatches, empty inputs."""

    exit_code = 3


class BackendError(PipelineError, RuntimeError):
    """Embedding backend failure: unreachable server, protocol violation, cache miss."""

    exit_code = 4


class NumericalError(PipelineError, ArithmeticError):
    """Numerical failure: NaN/Inf loss, divergent training."""

    exit_code = 5
