# app/align/errors.py
from __future__ import annotations

from pathlib import Path
from typing import Iterable


class AlignmentError(Exception):
    """Base class for every error raised by the alignment engine."""


def _rebuild(cls: type, state: dict, message: str) -> AlignmentError:
    exc = cls.__new__(cls)
    Exception.__init__(exc, message)
    exc.__dict__.update(state)
    return exc


class DimensionError(AlignmentError, ValueError):
    pass


class NonFiniteError(AlignmentError, FloatingPointError):
    pass


class DataFormatError(AlignmentError):
    def __init__(self, message: str, *, path: str | Path | None = None, line: int | None = None) -> None:
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}:{line}: " if line is not None else f"{self.path}: "
        super().__init__(f"{where}{message}")

    def __reduce__(self):
        # keyword-only init; keeps the error picklable across fold workers
        return (_rebuild, (type(self), self.__dict__, str(self)))


class DanglingReferenceError(DataFormatError):
    def __init__(self, kind: str, ids: Iterable[int], *, path: str | Path | None = None) -> None:
        self.kind = kind
        self.ids = sorted(set(int(i) for i in ids))
        shown = ", ".join(str(i) for i in self.ids[:20])
        more = f" (+{len(self.ids) - 20} more)" if len(self.ids) > 20 else ""
        super().__init__(f"unknown {kind} id(s): {shown}{more}", path=path)


class ConfigError(AlignmentError):
    def __init__(self, message: str, *, field: str | None = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)

    def __reduce__(self):
        return (_rebuild, (type(self), self.__dict__, str(self)))


class DivergenceError(AlignmentError):
    def __init__(self, epoch: int, *, last_finite_epoch: int, last_finite_loss: float | None) -> None:
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"non-finite loss at epoch {epoch}; "
            f"last finite epoch={last_finite_epoch} loss={last_finite_loss}"
        )

    def __reduce__(self):
        return (_rebuild, (type(self), self.__dict__, str(self)))


class CheckpointError(AlignmentError):
    pass
