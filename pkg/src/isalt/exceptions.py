class IsaltError(Exception):
    """Base class for errors raised by this package."""


class BlowUp(IsaltError):
    """A trajectory left the finite region (non-finite, above threshold, or failed implicit solve)."""

    def __init__(self, step, trajectory=None, reason="threshold"):
        self.step = step
        self.trajectory = trajectory
        self.reason = reason
        where = f"step {step}" if trajectory is None else f"trajectory {trajectory}, step {step}"
        super().__init__(f"blow-up at {where} ({reason})")


class NonConvergence(IsaltError):
    """Newton iteration for the implicit step exceeded its iteration cap."""


class SingularNewtonMatrix(IsaltError):
    """``I - delta * grad f`` was numerically singular inside the Newton solve."""


class SingularLinearization(IsaltError):
    """``I - delta * grad f`` was numerically singular in the SSBE basis term."""


class DatasetFormatError(IsaltError):
    """A dataset file is corrupt, truncated, or of an unknown version."""


class ConfigError(IsaltError):
    """An experiment configuration is invalid."""


class MissingArtifact(IsaltError):
    """A required artifact is absent or does not match its manifest checksum."""
