"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or channel counts."""


class DomainError(ValueError):
    """A value is outside its documented domain."""


class CapacityError(DomainError):
    """A dataset cannot supply the requested episode composition."""


class EmptySelectionError(DomainError):
    """Descriptor selection suppressed every descriptor of a field."""


class FormatError(ValueError):
    """A file does not conform to its binary or text format.

    ``offset`` is the byte offset (binary formats) or ``line`` the
    1-based line number (text formats) at which parsing failed.
    """

    def __init__(self, message: str, *, offset: int | None = None,
                 line: int | None = None):
        if offset is not None:
            message = f"offset {offset}: {message}"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.offset = offset
        self.line = line
