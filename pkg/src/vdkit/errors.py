"""Exception types shared across the package."""


class VdkitError(Exception):
    """Base class for all vdkit errors."""


class ConfigError(VdkitError):
    """A config file, weight bundle, or taxonomy failed validation."""


class InputError(VdkitError):
    """An input file or value violates the documented contract."""


class InvariantError(VdkitError):
    """An internal consistency check failed; indicates a bug upstream."""


class CtcInfeasibleError(InputError):
    """Target cannot be emitted in the given number of time steps."""


class StageError(VdkitError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
