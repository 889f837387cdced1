"""CSV input and output. The literal token ``NA`` (case-sensitive) is the only
missing-value encoding, both when reading and when writing."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

NA = "NA"


class DataError(ValueError):
    """Malformed input file."""


def _parse(token: str, where: str) -> float:
    if token == NA:
        return math.nan
    try:
        v = float(token)
    except ValueError as exc:
        raise DataError(f"{where}: cannot parse {token!r} (missing values must be {NA})") from exc
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {token!r}")
    return v


def read_table(path: str | Path) -> tuple[list[str], NDArray[np.float64]]:
    """Header and values (NaN where the file has ``NA``)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    vals = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
        for j, tok in enumerate(r):
            vals[i, j] = _parse(tok.strip(), f"{path}: row {i + 2}, column {header[j]!r}")
    return header, vals


def read_regression(path: str | Path, response: str | None) -> tuple[list[str], NDArray, NDArray | None]:
    """Covariate names, covariates (NaN = missing) and the response column (if named)."""
    header, vals = read_table(path)
    if response is None:
        return header, vals, None
    if response not in header:
        raise DataError(f"{path}: response column {response!r} not found")
    j = header.index(response)
    y = vals[:, j]
    if np.isnan(y).any():
        raise DataError(f"{path}: response column {response!r} has missing values")
    keep = [k for k in range(len(header)) if k != j]
    if not keep:
        raise DataError(f"{path}: no covariate columns")
    return [header[k] for k in keep], vals[:, keep], y


def read_rates(path: str | Path, p: int) -> NDArray[np.float64]:
    """One-line CSV of ``p`` rates (an optional header line of names is skipped)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty rates file")
    for r in rows:
        try:
            rates = np.array([float(t) for t in r])
        except ValueError:
            continue
        if rates.shape != (p,):
            raise DataError(f"{path}: expected {p} rates, found {rates.size}")
        return rates
    raise DataError(f"{path}: no numeric line of rates")


def read_matrix(path: str | Path, p: int) -> NDArray[np.float64]:
    """Square ``p x p`` numeric CSV, with or without a header line."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        [float(t) for t in rows[0]]
    except (ValueError, IndexError):
        rows = rows[1:]
    try:
        M = np.array([[float(t) for t in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry") from exc
    if M.shape != (p, p):
        raise DataError(f"{path}: expected a {p} x {p} matrix, found {M.shape}")
    return M


def fmt(v: float) -> str:
    """Round-trip float formatting; NaN becomes ``NA``."""
    return NA if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_rows(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_matrix(path: str | Path, M: NDArray, names: Sequence[str] | None = None) -> None:
    names = list(names) if names is not None else [f"x{j}" for j in range(M.shape[1])]
    write_rows(path, names, [[float(v) for v in row] for row in M])
