# errors.py
# exceptions raised by quadracer and the exit codes the CLI maps them to


class QuadracerError(Exception):
    """Base class for every error raised by quadracer."""

    exit_code = 1


class ConfigError(QuadracerError):
    exit_code = 2


class MissingArtifactError(QuadracerError):
    exit_code = 2


class PlanningError(QuadracerError):
    """No guiding path could be found between two consecutive targets."""

    exit_code = 3

    def __init__(self, pair, message):
        self.pair = pair
        super().__init__(f"pair {pair[0]}->{pair[1]}: {message}")


class TrainingDivergedError(QuadracerError):
    exit_code = 4

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class DomainError(QuadracerError, ValueError):
    pass


class ThrustRangeError(QuadracerError, ValueError):
    pass


class CheckpointError(QuadracerError):
    exit_code = 2


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CorruptArtifactError(QuadracerError):
    """An ESDF, path or CSV artifact does not match its documented format."""

    exit_code = 2
