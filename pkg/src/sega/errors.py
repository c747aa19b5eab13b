"""Exception hierarchy shared by every sega module.

Each exception carries the exit code the CLI reports for it:
1 usage/config, 2 data/validation, 3 numeric failure.
"""

from pathlib import Path


class SegaError(Exception):
    """Base class for all sega errors."""

    exit_code = 2


class ConfigError(SegaError):
    """Invalid or contradictory run configuration."""

    exit_code = 1


class DatasetError(SegaError):
    """Malformed dataset file, reported with file and line."""

    def __init__(self, path: Path | str, line: int | None, message: str):
        self.path = Path(path)
        self.line = line
        self.message = message
        where = f"{self.path}:{line}" if line is not None else str(self.path)
        super().__init__(f"{where}: {message}")


class GraphError(SegaError):
    """Graph invariant violation or lookup of an unknown node."""

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = violations or []
        super().__init__(message)


class ProviderError(SegaError):
    """Embedding provider failure (missing key, HTTP failure)."""

    def __init__(self, message: str, retryable: bool = False):
        self.retryable = retryable
        super().__init__(message)


class PreferenceError(SegaError):
    """Preference extraction failure (unreachable LLM, missing cache entries)."""


class NoPostsError(PreferenceError):
    """A user has no posts, so no topic-emotion pairs can be extracted."""

    def __init__(self, user_id: str):
        self.user_id = user_id
        super().__init__(f"user {user_id} has no posts")


class CheckpointError(SegaError):
    """Unreadable or incompatible parameter checkpoint."""


class AutodiffError(SegaError):
    """Shape mismatch or misuse of the differentiation tape."""

    exit_code = 3


class NumericError(SegaError):
    """Non-finite values reached a tensor operation."""

    exit_code = 3
