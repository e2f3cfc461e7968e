"""Exception hierarchy shared by all vimflow modules."""

from __future__ import annotations


class VimflowError(Exception):
    """Base class for every error raised by vimflow."""


class GridError(VimflowError, ValueError):
    """Invalid grid description or an operator applied to an unsuitable grid."""


class GridMismatch(VimflowError, ValueError):
    """Two fields that must share a grid do not."""


class NonFinite(VimflowError, ArithmeticError):
    """A field contains NaN or Inf.

    ``index`` is the (i1, i2, i3, it) node of the first offending value in
    row-major order, or ``None`` when unknown.
    """

    def __init__(self, message: str, index: tuple[int, ...] | None = None, block: str | None = None):
        super().__init__(message)
        self.index = index
        self.block = block


class SameAxis(VimflowError, ValueError):
    pass


class TemporalAxis(VimflowError, ValueError):
    pass


class MissingMicrorotation(VimflowError, ValueError):
    pass


class InsufficientData(VimflowError, ValueError):
    pass


class LadderTooShort(VimflowError, ValueError):
    pass


class ParseError(VimflowError, ValueError):
    """Malformed expression text.

    ``offset`` is the character offset into the input where parsing failed and
    ``token`` the offending token text (empty at end of input).
    """

    def __init__(self, message: str, offset: int, token: str = ""):
        super().__init__(f"{message} at offset {offset}" + (f" (near {token!r})" if token else ""))
        self.offset = offset
        self.token = token
        self.reason = message


class ConfigError(VimflowError, ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


class IoError(VimflowError, OSError):
    pass
