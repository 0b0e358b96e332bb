"""Data preparation and the implicit-assumption checks (nonsingularity, KMO)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .types import Column, DataError, Dataset

NONSINGULAR_RTOL = 1e-8

_KAISER_LABELS = [
    (0.9, "marvelous"),
    (0.8, "meritorious"),
    (0.7, "middling"),
    (0.6, "mediocre"),
    (0.5, "miserable"),
    (0.0, "unacceptable"),
]


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    nonsingular: bool
    kmo: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.shape[0]


def log_transform(data: Dataset, columns) -> Dataset:
    """Replace the named columns by their natural logarithm."""
    values = np.array(data.values)
    cols = list(data.columns)
    for name in columns:
        j = data.column_index(name)
        if cols[j].log_transformed:
            raise DataError(f"column {name!r} already transformed")
        bad = np.flatnonzero(values[:, j] <= 0)
        if bad.size:
            raise DataError(
                f"column {name!r} has non-positive value {values[bad[0], j]!r} at row {bad[0] + 1}"
            )
        values[:, j] = np.log(values[:, j])
        cols[j] = replace(cols[j], log_transformed=True)
    return Dataset(values, tuple(cols), standardized=False)


def standardize(data: Dataset) -> Dataset:
    """Center each column and scale it to unit sample standard deviation (ddof=1)."""
    if data.n < 2:
        raise DataError("need at least two rows to standardize")
    x = data.values
    sd = x.std(axis=0, ddof=1)
    const = np.flatnonzero(~(sd > 0))
    if const.size:
        raise DataError(f"column {data.names[const[0]]!r} is constant")
    z = (x - x.mean(axis=0)) / sd
    # a second pass removes the rounding left by the first
    z = (z - z.mean(axis=0)) / z.std(axis=0, ddof=1)
    return Dataset(z, data.columns, standardized=True)


def correlation_matrix(data: Dataset) -> CorrelationMatrix:
    """Pearson correlations, with the nonsingularity and KMO diagnostics attached."""
    x = data.values
    if data.p == 1:
        return CorrelationMatrix(np.ones((1, 1)), True, None)
    xc = x - x.mean(axis=0)
    ss = np.sqrt((xc ** 2).sum(axis=0))
    r = (xc.T @ xc) / np.outer(ss, ss)
    r = (r + r.T) / 2
    np.fill_diagonal(r, 1.0)
    np.clip(r, -1.0, 1.0, out=r)
    ev = np.linalg.eigvalsh(r)
    nonsingular = bool(ev[0] > NONSINGULAR_RTOL * ev[-1])
    corr = CorrelationMatrix(r, nonsingular)
    return replace(corr, kmo=kmo(corr) if nonsingular else None)


def partial_correlations(r: np.ndarray) -> np.ndarray:
    """Partial correlation of each pair given all other variables."""
    prec = np.linalg.inv(r)
    d = np.sqrt(np.diag(prec))
    q = -prec / np.outer(d, d)
    np.fill_diagonal(q, 1.0)
    return q


def kmo(corr: CorrelationMatrix) -> float | None:
    """Kaiser-Meyer-Olkin measure of sampling adequacy.

    Returns None when undefined: a singular matrix, or no off-diagonal
    correlation at all (0/0).
    """
    if not corr.nonsingular:
        return None
    r = corr.values
    off = ~np.eye(corr.p, dtype=bool)
    r2 = float((r[off] ** 2).sum())
    q2 = float((partial_correlations(r)[off] ** 2).sum())
    if r2 + q2 == 0.0:
        return None
    return r2 / (r2 + q2)


def kmo_label(value: float | None) -> str:
    if value is None:
        return "undefined (no common variance)"
    for cut, label in _KAISER_LABELS:
        if value >= cut:
            return label
    return "unacceptable"


def factor_upper_bound(p: int) -> int:
    """Largest m with (p - m)^2 - p - m >= 0."""
    if p < 3:
        raise ValueError(f"no admissible number of factors for p={p} (need p >= 3)")
    m = 0
    while (p - (m + 1)) ** 2 - p - (m + 1) >= 0:
        m += 1
    return m


def existence_ok(p: int, m: int) -> bool:
    return (p - m) ** 2 - p - m >= 0


def prepare(data: Dataset, log_columns=()) -> tuple[Dataset, CorrelationMatrix]:
    """Log-transform the named columns, standardize, and compute the correlation diagnostics."""
    if log_columns:
        data = log_transform(data, log_columns)
    z = standardize(data)
    return z, correlation_matrix(z)


__all__ = [
    "Column", "CorrelationMatrix", "log_transform", "standardize", "correlation_matrix",
    "partial_correlations", "kmo", "kmo_label", "factor_upper_bound", "existence_ok", "prepare",
]
