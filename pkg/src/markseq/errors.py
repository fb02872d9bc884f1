class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class RecordError(InvalidInputError):
    """A malformed line in one of the JSONL/CSV/config inputs."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class SchemaVersionError(InvalidInputError):
    pass
