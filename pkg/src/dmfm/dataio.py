"""Matrix time-series container, on-disk formats and detrending.

Two formats are supported:

``csv-long``
    Header ``t,row,col,value``; one line per cell, 1-based integer indices,
    any line order, every cell present exactly once.
``dmx-binary``
    ``b"DMX1"``, little-endian ``uint64`` T, d1, d2, a ``uint32`` version
    (1), then ``T*d1*d2`` little-endian float64 values, frame-major then
    row-major.  Header is 32 bytes.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadAlpha, GapError, IoError, ParseError, ShapeError, SeriesTooShort

MAGIC = b"DMX1"
VERSION = 1
_HEADER = struct.Struct("<4sQQQI")
CSV_HEADER = ["t", "row", "col", "value"]
FORMATS = ("csv-long", "dmx-binary")


@dataclass(frozen=True)
class MatrixSeries:
    """An ordered sequence of ``T`` real ``d1 x d2`` matrices.

    ``frames`` is stored as a read-only ``(T, d1, d2)`` float64 array.  The
    same type is used for factor series (``r1 x r2`` frames).
    """

    frames: np.ndarray

    def __post_init__(self):
        a = np.array(self.frames, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None, None]
        if a.ndim != 3 or min(a.shape) < 1:
            raise ShapeError(f"frames must have shape (T, d1, d2) with T, d1, d2 >= 1; got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("series entries must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "frames", a)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def d1(self) -> int:
        return self.frames.shape[1]

    @property
    def d2(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    def __len__(self) -> int:
        return self.T

    def __getitem__(self, idx):
        return self.frames[idx]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.frames
        return self.frames.astype(dtype)

    def head(self, t: int) -> "MatrixSeries":
        """First ``t`` frames."""
        return MatrixSeries(self.frames[:t])


FactorSeries = MatrixSeries


def _as_frames(series) -> np.ndarray:
    return np.asarray(series, dtype=np.float64)


def _guess_format(path: Path) -> str:
    return "csv-long" if path.suffix.lower() in (".csv", ".txt") else "dmx-binary"


def write_series(series, path, format: str | None = None) -> None:
    path = Path(path)
    format = format or _guess_format(path)
    a = _as_frames(series)
    if a.ndim != 3:
        raise ShapeError(f"expected (T, d1, d2) frames, got {a.shape}")
    T, d1, d2 = a.shape
    try:
        if format == "dmx-binary":
            with open(path, "wb") as fh:
                fh.write(_HEADER.pack(MAGIC, T, d1, d2, VERSION))
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        elif format == "csv-long":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for t in range(T):
                    for i in range(d1):
                        for j in range(d2):
                            w.writerow((t + 1, i + 1, j + 1, repr(float(a[t, i, j]))))
        else:
            raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_series(path, format: str | None = None, shape: tuple[int, int] | None = None) -> MatrixSeries:
    """Read a series written in one of the supported formats.

    ``shape`` optionally declares ``(d1, d2)`` for CSV input; indices outside
    it raise :class:`ShapeError`.  Otherwise dimensions are inferred from the
    largest indices present.
    """
    path = Path(path)
    format = format or _guess_format(path)
    try:
        if format == "dmx-binary":
            return _read_dmx(path)
        if format == "csv-long":
            return _read_csv(path, shape)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def _read_dmx(path: Path) -> MatrixSeries:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, T, d1, d2, version = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    n = T * d1 * d2
    body = raw[_HEADER.size:]
    if len(body) != 8 * n:
        raise ShapeError(f"{path}: header declares {n} values but body holds {len(body) / 8:g}")
    a = np.frombuffer(body, dtype="<f8").reshape(T, d1, d2)
    return MatrixSeries(a.astype(np.float64))


def _read_csv(path: Path, shape) -> MatrixSeries:
    cells: dict[tuple[int, int, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                t, i, j = (int(x) for x in row[:3])
                v = float(row[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if min(t, i, j) < 1:
                raise ShapeError(f"{path}:{lineno}: indices are 1-based")
            if shape is not None and (i > shape[0] or j > shape[1]):
                raise ShapeError(f"{path}:{lineno}: cell ({i},{j}) outside declared {shape[0]}x{shape[1]}")
            if (t, i, j) in cells:
                raise ParseError(f"{path}:{lineno}: duplicate cell t={t} row={i} col={j}")
            cells[(t, i, j)] = v
    if not cells:
        raise ParseError(f"{path}: no data rows")
    idx = np.array(list(cells.keys()))
    T, d1, d2 = idx.max(axis=0)
    if shape is not None:
        d1, d2 = shape
    if len(cells) != T * d1 * d2:
        raise GapError(f"{path}: {T * d1 * d2 - len(cells)} of {T * d1 * d2} cells missing")
    a = np.empty((T, d1, d2))
    a[idx[:, 0] - 1, idx[:, 1] - 1, idx[:, 2] - 1] = list(cells.values())
    return MatrixSeries(a)


def exp_smooth_detrend(series, alpha: float = 0.1) -> tuple[MatrixSeries, MatrixSeries]:
    """Exponential-smoothing trend ``B_t = alpha Y_t + (1 - alpha) B_{t-1}``.

    Starts from ``B_1 = Y_1``.  Returns ``(Y - B, B)``.
    """
    if not (0.0 < alpha <= 1.0):
        raise BadAlpha(f"alpha must lie in (0, 1], got {alpha}")
    y = _as_frames(series)
    if y.shape[0] < 2:
        raise SeriesTooShort("detrending needs at least two frames")
    trend = np.empty_like(y)
    trend[0] = y[0]
    for t in range(1, y.shape[0]):
        trend[t] = alpha * y[t] + (1.0 - alpha) * trend[t - 1]
    return MatrixSeries(y - trend), MatrixSeries(trend)
