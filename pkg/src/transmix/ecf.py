"""Empirical characteristic function of consecutive observation pairs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["InsufficientDataError", "Series", "EcfGrid", "ecf_at", "ecf_grid",
           "load_series_csv", "save_series_csv"]


class InsufficientDataError(ValueError):
    """Raised when the series is too short to form observation pairs."""


@dataclass(frozen=True)
class Series:
    """A univariate observation sequence."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] < 2:
            raise InsufficientDataError(
                f"series must be 1-D with at least 2 observations, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise InsufficientDataError("series contains non-finite values")
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class EcfGrid:
    """Pair-ECF values precomputed on a tensor grid of frequencies.

    values[a, b] is the ECF at (nodes1[a], nodes2[b]); axis1 and axis2
    cache the ECF along the two frequency axes.
    """

    nodes1: np.ndarray
    nodes2: np.ndarray
    values: np.ndarray
    axis1: np.ndarray
    axis2: np.ndarray
    n: int


def ecf_at(s: Series, t1: float, t2: float) -> complex:
    """(1/n) sum_{j<n} exp(i (t1 Y_j + t2 Y_{j+1})).

    Note the 1/n normalization with n-1 summands, so the value at the
    origin is (n-1)/n.
    """
    y = s.y
    return complex(np.sum(np.exp(1j * (t1 * y[:-1] + t2 * y[1:])))) / s.n


def ecf_grid(s: Series, nodes1, nodes2) -> EcfGrid:
    """Evaluate the pair ECF on the tensor grid nodes1 x nodes2.

    Uses the axis-factorized product exp(i t1 Y_j) * exp(i t2 Y_{j+1})
    accumulated by a BLAS matrix product, which matches the pointwise
    sum to double-precision rounding.
    """
    nodes1 = np.asarray(nodes1, dtype=float)
    nodes2 = np.asarray(nodes2, dtype=float)
    if nodes1.size == 0 or nodes2.size == 0:
        raise ValueError("node vectors must be nonempty")
    y = s.y
    n = s.n
    e1 = np.exp(1j * np.outer(nodes1, y[:-1]))   # (n1, n-1)
    e2 = np.exp(1j * np.outer(nodes2, y[1:]))    # (n2, n-1)
    values = (e1 @ e2.T) / n
    axis1 = e1.sum(axis=1) / n
    axis2 = e2.sum(axis=1) / n
    for arr in (nodes1, nodes2, values, axis1, axis2):
        arr.flags.writeable = False
    return EcfGrid(nodes1=nodes1, nodes2=nodes2, values=values,
                   axis1=axis1, axis2=axis2, n=n)


def load_series_csv(path, has_header: bool = False) -> Series:
    """Read a single-column CSV of observations, one value per line."""
    path = Path(path)
    skip = 1 if has_header else 0
    try:
        y = np.loadtxt(path, dtype=float, skiprows=skip, ndmin=1)
    except OSError:
        raise
    except ValueError as exc:
        raise ValueError(f"could not parse series file {path}: {exc}") from exc
    return Series(y=y)


def save_series_csv(path, s: Series) -> None:
    np.savetxt(path, s.y, fmt="%.17g")
