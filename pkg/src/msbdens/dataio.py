"""Dataset container, whitening, and the CSV / ``MSBD`` binary formats.

Binary layout (little-endian)::

    b"MSBD" | u32 version=1 | u64 n | u64 p | n*p f64 (row-major)
    [ u64 n | n f64 ]          # optional response block

A response-only file is the same layout with ``p == 1`` and no trailing
block.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "WhitenStats",
    "fit_whitening",
    "apply_whitening",
    "invert_whitening",
    "load_dataset",
    "save_dataset",
    "load_csv",
    "save_csv",
    "load_binary",
    "save_binary",
]

MAGIC = b"MSBD"
VERSION = 1
_DEGENERATE_SD = 1e-12


class DataError(ValueError):
    """Malformed, inconsistent, or non-finite input data."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``features`` (n x p) and response vector ``responses``."""

    features: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.responses, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DataError(
                f"responses must have length {x.shape[0]}, got shape {y.shape}"
            )
        _check_finite(x, "features")
        _check_finite(y[:, None], "responses")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.responses[rows])


@dataclass(frozen=True)
class WhitenStats:
    """Per-column means and standard deviations (``sds > 0``)."""

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        sds = np.atleast_1d(np.asarray(self.sds, dtype=np.float64))
        if means.shape != sds.shape or means.ndim != 1:
            raise DataError("means and sds must be 1-D vectors of equal length")
        if not np.all(sds > 0):
            raise DataError("whitening sds must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sds", sds)

    def __len__(self):
        return self.means.shape[0]

    def apply(self, values):
        """Whiten a row or a matrix of rows."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != len(self):
            raise DataError(
                f"expected trailing length {len(self)}, got {values.shape[-1]}"
            )
        return (values - self.means) / self.sds

    def invert(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != len(self):
            raise DataError(
                f"expected trailing length {len(self)}, got {values.shape[-1]}"
            )
        return values * self.sds + self.means


def _check_finite(a: np.ndarray, what: str):
    bad = ~np.isfinite(a)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"non-finite value in {what} at row {r}, column {c}")


def fit_whitening(values) -> WhitenStats:
    """Column means and population standard deviations.

    Columns whose sd is below 1e-12 get ``sd = 1`` so they whiten to zeros.
    A 1-D input is treated as a single column.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.size == 0:
        raise DataError("cannot fit whitening on an empty matrix")
    means = a.mean(axis=0)
    sds = a.std(axis=0)
    sds = np.where(sds < _DEGENERATE_SD, 1.0, sds)
    return WhitenStats(means, sds)


def apply_whitening(stats: WhitenStats, row) -> np.ndarray:
    return stats.apply(row)


def invert_whitening(stats: WhitenStats, row) -> np.ndarray:
    return stats.invert(row)


# --------------------------------------------------------------------- CSV


def load_csv(path, response_path=None) -> Dataset:
    """Read a header-less CSV.

    The last column is the response unless ``response_path`` names a
    separate one-column CSV holding it.
    """
    rows = _read_csv_matrix(Path(path))
    if response_path is None:
        if rows.shape[1] < 2:
            raise DataError(f"{path}: need at least one feature and a response column")
        return Dataset(rows[:, :-1], rows[:, -1])
    resp = _read_csv_matrix(Path(response_path))
    if resp.shape[1] != 1:
        raise DataError(f"{response_path}: response file must have one column")
    if resp.shape[0] != rows.shape[0]:
        raise DataError(
            f"{response_path}: {resp.shape[0]} responses for {rows.shape[0]} rows"
        )
    return Dataset(rows, resp[:, 0])


def _read_csv_matrix(path: Path) -> np.ndarray:
    out = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(
                    f"{path}: row {lineno} has {len(cells)} columns, expected {width}"
                )
            vals = []
            for col, cell in enumerate(cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} at row {lineno}, column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value {cell!r} at row {lineno}, column {col}"
                    )
                vals.append(v)
            out.append(vals)
    if not out:
        raise DataError(f"{path}: empty file")
    return np.array(out, dtype=np.float64)


def save_csv(dataset: Dataset, path):
    mat = np.column_stack([dataset.features, dataset.responses])
    with open(path, "w") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


# ------------------------------------------------------------------ binary


def save_binary(dataset: Dataset, path, include_responses: bool = True):
    n, p = dataset.features.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQQ", VERSION, n, p))
        fh.write(dataset.features.astype("<f8").tobytes())
        if include_responses:
            fh.write(struct.pack("<Q", n))
            fh.write(dataset.responses.astype("<f8").tobytes())


def load_binary(path, response_path=None) -> Dataset:
    data = Path(path).read_bytes()
    x, extra = _parse_block(data, path)
    if response_path is not None:
        y_mat, _ = _parse_block(Path(response_path).read_bytes(), response_path)
        if y_mat.shape[1] != 1:
            raise DataError(f"{response_path}: response file must have p=1")
        y = y_mat[:, 0]
    else:
        if len(extra) < 8:
            raise DataError(f"{path}: missing response block")
        (ny,) = struct.unpack_from("<Q", extra)
        if ny != x.shape[0]:
            raise DataError(f"{path}: response block has n={ny}, matrix has n={x.shape[0]}")
        need = 8 + 8 * ny
        if len(extra) != need:
            raise DataError(f"{path}: response block is {len(extra)} bytes, expected {need}")
        y = np.frombuffer(extra, dtype="<f8", count=ny, offset=8).astype(np.float64)
    if y.shape[0] != x.shape[0]:
        raise DataError(f"{path}: {y.shape[0]} responses for {x.shape[0]} rows")
    return Dataset(x, y)


def _parse_block(data: bytes, path):
    if len(data) < 24 or data[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not an MSBD file")
    version, n, p = struct.unpack_from("<IQQ", data, 4)
    if version != VERSION:
        raise DataError(f"{path}: dataset format version {version}, this build reads {VERSION}")
    body = 4 + 20
    need = body + 8 * n * p
    if len(data) < need:
        raise DataError(f"{path}: header says n={n}, p={p} but file is truncated")
    x = np.frombuffer(data, dtype="<f8", count=n * p, offset=body).astype(np.float64)
    return x.reshape(n, p), data[need:]


def load_dataset(path, format: str | None = None, response_path=None) -> Dataset:
    """Load a dataset; ``format`` is ``"csv"`` or ``"bin"`` (guessed from suffix)."""
    fmt = format or ("csv" if str(path).endswith(".csv") else "bin")
    if fmt == "csv":
        return load_csv(path, response_path)
    if fmt == "bin":
        return load_binary(path, response_path)
    raise DataError(f"unknown dataset format {fmt!r}")


def save_dataset(dataset: Dataset, path, format: str | None = None):
    fmt = format or ("csv" if str(path).endswith(".csv") else "bin")
    if fmt == "csv":
        save_csv(dataset, path)
    elif fmt == "bin":
        save_binary(dataset, path)
    else:
        raise DataError(f"unknown dataset format {fmt!r}")
