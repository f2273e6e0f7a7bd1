"""Exception hierarchy shared across the package."""


class UsageError(ValueError):
    """A caller violated an operation's contract."""


class SizeLimitError(UsageError):
    """A brute-force operation was asked to exceed its size guard."""


class UnsupportedRewardError(UsageError):
    """A reward backend cannot score the given problem kind."""


class BackendError(RuntimeError):
    """A generation backend failed after exhausting its retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(BackendError):
    """A backend returned a response the client cannot interpret."""


class SearchError(RuntimeError):
    """A search strategy could not continue."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ConstructionError(RuntimeError):
    """Data construction aborted for one problem; partial output is kept."""

    def __init__(self, message: str, problem_id: str, step: int, partial=None):
        super().__init__(message)
        self.problem_id = problem_id
        self.step = step
        self.partial = list(partial) if partial is not None else []


class DataFormatError(ValueError):
    """A dataset or checkpoint file failed validation."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
