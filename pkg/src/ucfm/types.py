"""Shared domain types for the Bayesian confirmatory factor workflow.

All user-facing cell indices are 1-based (``L[j,k]``); arrays are 0-based.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Cell = tuple[int, int]  # 0-based (row, factor)


class DataError(ValueError):
    """Raised when observed data violate an input contract."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Column:
    name: str
    log_transformed: bool = False


@dataclass(frozen=True)
class Dataset:
    """An ``n x p`` observation matrix plus per-column metadata."""

    values: np.ndarray
    columns: tuple[Column, ...]
    standardized: bool = False

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DataError("values must be a 2-d matrix")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {i + 1}, column {j + 1}")
        cols = tuple(c if isinstance(c, Column) else Column(str(c)) for c in self.columns)
        if len(cols) != values.shape[1]:
            raise DataError(f"{len(cols)} column names for {values.shape[1]} columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", cols)
        if self.standardized:
            mean = values.mean(axis=0)
            sd = values.std(axis=0, ddof=1)
            if np.any(np.abs(mean) > 1e-10) or np.any(np.abs(sd - 1) > 1e-10):
                raise DataError("flagged standardized but column moments are off")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def subset(self, rows) -> "Dataset":
        # a row subset of standardized data is no longer exactly standardized
        return Dataset(self.values[rows], self.columns, standardized=False)

    @classmethod
    def from_array(cls, values, names: Sequence[str] | None = None) -> "Dataset":
        values = np.asarray(values, dtype=float)
        if names is None:
            names = [f"x{j + 1}" for j in range(values.shape[1])]
        return cls(values, tuple(Column(nm) for nm in names))

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        """Read a CSV with a header row of column names.

        Every cell must parse as a float; missing-value codes are rejected.
        """
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DataError(f"{path}: empty file")
        header, body = rows[0], [r for r in rows[1:] if r]
        out = np.empty((len(body), len(header)))
        for i, row in enumerate(body):
            if len(row) != len(header):
                raise DataError(f"{path}: row {i + 1} has {len(row)} fields, expected {len(header)}")
            for j, cell in enumerate(row):
                try:
                    out[i, j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: unparsable value {cell!r} at row {i + 1}, column {header[j]!r}"
                    ) from None
        if not np.all(np.isfinite(out)):
            i, j = np.argwhere(~np.isfinite(out))[0]
            raise DataError(f"{path}: non-finite value at row {i + 1}, column {header[j]!r}")
        return cls.from_array(out, [h.strip() for h in header])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.names)
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class UcfmSpec:
    """Factor count plus the minimal identification restrictions on the loadings.

    Cells are stored 0-based. ``m = 0`` denotes the no-factor model (all loadings
    absent) and is accepted for oracle comparisons.
    """

    m: int
    zero_cells: frozenset = field(default_factory=frozenset)
    positive_cells: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "zero_cells", frozenset(tuple(c) for c in self.zero_cells))
        object.__setattr__(self, "positive_cells", frozenset(tuple(c) for c in self.positive_cells))
        if self.m < 0:
            raise ValueError("m must be non-negative")

    @classmethod
    def from_anchors(cls, anchors: Sequence[int]) -> "UcfmSpec":
        """Anchor row ``anchors[k]`` loads positively on factor ``k`` and on no other factor."""
        m = len(anchors)
        if len(set(anchors)) != m:
            raise ValueError("anchor rows must be distinct")
        zeros = {(a, l) for k, a in enumerate(anchors) for l in range(m) if l != k}
        pos = {(a, k) for k, a in enumerate(anchors)}
        return cls(m, frozenset(zeros), frozenset(pos))

    def free_mask(self, p: int) -> np.ndarray:
        mask = np.ones((p, self.m), dtype=bool)
        for j, k in self.zero_cells:
            if j < p and k < self.m:
                mask[j, k] = False
        return mask

    def n_free_loadings(self, p: int) -> int:
        return int(self.free_mask(p).sum())

    def n_free_params(self, p: int) -> int:
        """mu, free loadings, uniquenesses and the factor correlations."""
        return p + self.n_free_loadings(p) + p + self.m * (self.m - 1) // 2

    def anchors(self) -> list[int] | None:
        """Anchor row of each factor, or None when the pattern is not anchor-shaped."""
        out = []
        for k in range(self.m):
            rows = [
                j for (j, kk) in self.positive_cells if kk == k
                and all((j, l) in self.zero_cells for l in range(self.m) if l != k)
            ]
            if not rows:
                return None
            out.append(min(rows))
        return out


def validate_spec(spec: UcfmSpec, data: Dataset) -> list[str]:
    """Return every violated invariant of ``spec`` against ``data`` (empty list means ok)."""
    p, m = data.p, spec.m
    out = []
    if (p - m) ** 2 - p - m < 0:
        out.append(f"existence bound: (p-m)^2-p-m = {(p - m) ** 2 - p - m} < 0 for p={p}, m={m}")
    conflict = spec.zero_cells & spec.positive_cells
    if conflict:
        cells = ", ".join(f"L[{j + 1},{k + 1}]" for j, k in sorted(conflict))
        out.append(f"cell conflict: {cells} both zero and positive")
    bad = [c for c in spec.zero_cells | spec.positive_cells if not (0 <= c[0] < p and 0 <= c[1] < m)]
    if bad:
        cells = ", ".join(f"L[{j + 1},{k + 1}]" for j, k in sorted(bad))
        out.append(f"cell out of range: {cells}")
    if m >= 1 and not conflict and not bad:
        anchors = spec.anchors()
        if anchors is None:
            out.append("minimal conditions: every factor needs an anchor row (positive on it, zero elsewhere)")
        elif len(spec.zero_cells) != m * (m - 1) or len(spec.positive_cells) != m:
            out.append(
                f"minimal conditions: expected {m * (m - 1)} zero and {m} positive cells, "
                f"got {len(spec.zero_cells)} and {len(spec.positive_cells)}"
            )
    return out


@dataclass(frozen=True)
class FactorParams:
    """One parameter state (mu, Lambda, Psi, Phi); Psi is stored as its diagonal."""

    mu: np.ndarray
    Lambda: np.ndarray
    psi: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        for name in ("mu", "Lambda", "psi", "Phi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.Lambda.ndim != 2:
            raise ValueError("Lambda must be p x m")

    @property
    def p(self) -> int:
        return self.Lambda.shape[0]

    @property
    def m(self) -> int:
        return self.Lambda.shape[1]

    @property
    def Psi(self) -> np.ndarray:
        return np.diag(self.psi)

    @property
    def Sigma(self) -> np.ndarray:
        return self.Lambda @ self.Phi @ self.Lambda.T + np.diag(self.psi)

    def violations(self, spec: UcfmSpec | None = None) -> list[str]:
        out = []
        p, m = self.p, self.m
        if self.mu.shape != (p,) or self.psi.shape != (p,) or self.Phi.shape != (m, m):
            return ["shape mismatch"]
        if not (np.all(np.isfinite(self.Lambda)) and np.all(np.isfinite(self.psi))
                and np.all(np.isfinite(self.Phi)) and np.all(np.isfinite(self.mu))):
            return ["non-finite entries"]
        if np.any(self.psi <= 0):
            out.append("psi must be strictly positive")
        if m:
            if not np.array_equal(self.Phi, self.Phi.T):
                out.append("Phi not symmetric")
            if np.any(np.abs(np.diag(self.Phi) - 1) > 1e-12):
                out.append("Phi diagonal not unit")
            if np.linalg.eigvalsh(self.Phi).min() <= 0:
                out.append("Phi not positive definite")
        if spec is not None:
            if spec.m != m:
                out.append(f"spec has m={spec.m}, params have m={m}")
            else:
                for j, k in spec.zero_cells:
                    if self.Lambda[j, k] != 0:
                        out.append(f"L[{j + 1},{k + 1}] must be exactly 0")
                for j, k in spec.positive_cells:
                    if not self.Lambda[j, k] > 0:
                        out.append(f"L[{j + 1},{k + 1}] must be positive")
        return out


class _DrawArrays:
    """Common array-backed container of parameter draws (draw index first)."""

    Lambda: np.ndarray
    Phi: np.ndarray

    def __len__(self) -> int:
        return self.Lambda.shape[0]


@dataclass(frozen=True)
class PosteriorDraws(_DrawArrays):
    """Retained posterior draws stored as stacked arrays.

    ``params(g)`` materializes draw ``g`` as a :class:`FactorParams`.
    """

    mu: np.ndarray
    Lambda: np.ndarray
    psi: np.ndarray
    Phi: np.ndarray
    spec: UcfmSpec
    seed: int
    burn_in: int
    factor_scores: np.ndarray | None = None
    phi_step: float | None = None
    chains: int = 1

    def __post_init__(self):
        for name in ("mu", "Lambda", "psi", "Phi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.factor_scores is not None:
            object.__setattr__(self, "factor_scores", _frozen(self.factor_scores))

    @property
    def kept(self) -> int:
        return len(self)

    def params(self, g: int) -> FactorParams:
        return FactorParams(self.mu[g], self.Lambda[g], self.psi[g], self.Phi[g])

    def __iter__(self):
        return (self.params(g) for g in range(len(self)))

    def mean_params(self) -> FactorParams:
        """Posterior mean with polarity cells clamped positive and zero cells exact."""
        lam = self.Lambda.mean(axis=0)
        for j, k in self.spec.zero_cells:
            lam[j, k] = 0.0
        for j, k in self.spec.positive_cells:
            lam[j, k] = max(lam[j, k], 1e-8)
        phi = self.Phi.mean(axis=0)
        phi = (phi + phi.T) / 2
        np.fill_diagonal(phi, 1.0)
        return FactorParams(self.mu.mean(axis=0), lam, self.psi.mean(axis=0), phi)

    def thin(self, step: int) -> "PosteriorDraws":
        fs = None if self.factor_scores is None else self.factor_scores[::step]
        return replace(self, mu=self.mu[::step], Lambda=self.Lambda[::step], psi=self.psi[::step],
                       Phi=self.Phi[::step], factor_scores=fs)

    @classmethod
    def concatenate(cls, parts: Sequence["PosteriorDraws"]) -> "PosteriorDraws":
        first = parts[0]
        fs = None
        if all(d.factor_scores is not None for d in parts):
            fs = np.concatenate([d.factor_scores for d in parts])
        return cls(
            np.concatenate([d.mu for d in parts]),
            np.concatenate([d.Lambda for d in parts]),
            np.concatenate([d.psi for d in parts]),
            np.concatenate([d.Phi for d in parts]),
            first.spec, first.seed, first.burn_in, fs, first.phi_step, sum(d.chains for d in parts),
        )

    # -- draw dumps -------------------------------------------------------
    @staticmethod
    def dump_header(p: int, m: int) -> list[str]:
        cols = [f"mu[{j + 1}]" for j in range(p)]
        cols += [f"L[{j + 1},{k + 1}]" for k in range(m) for j in range(p)]  # vec(Lambda)
        cols += [f"psi[{j + 1}]" for j in range(p)]
        cols += [f"Phi[{k + 1},{l + 1}]" for l in range(m) for k in range(l + 1, m)]
        return cols

    def to_flat(self) -> np.ndarray:
        G, p, m = self.Lambda.shape
        lam = self.Lambda.transpose(0, 2, 1).reshape(G, p * m)
        tri = [self.Phi[:, k, l] for l in range(m) for k in range(l + 1, m)]
        phi = np.stack(tri, axis=1) if tri else np.empty((G, 0))
        return np.hstack([self.mu, lam, self.psi, phi])

    def write_tsv(self, path) -> None:
        """Write one record per retained draw: mu, vec(Lambda), diag(Psi), strict lower Phi."""
        G, p, m = self.Lambda.shape
        with open(path, "w") as fh:
            fh.write("# seed=%d burn_in=%d chains=%d phi_step=%r spec=%s\n" % (
                self.seed, self.burn_in, self.chains,
                None if self.phi_step is None else float(self.phi_step), render_spec(self.spec).replace("\n", " | ")))
            fh.write("\t".join(self.dump_header(p, m)) + "\n")
            for row in self.to_flat():
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def read_tsv(cls, path) -> "PosteriorDraws":
        with open(path) as fh:
            meta_line = fh.readline()
            header = fh.readline().rstrip("\n").split("\t")
            flat = np.array([[float(v) for v in line.rstrip("\n").split("\t")] for line in fh if line.strip()])
        meta = dict(kv.split("=", 1) for kv in meta_line[2:].split(" spec=")[0].split())
        spec = parse_spec(meta_line.split(" spec=", 1)[1].strip().replace(" | ", "\n"))
        p = sum(h.startswith("mu[") for h in header)
        m = spec.m
        if header != cls.dump_header(p, m):
            raise DataError(f"{path}: unexpected draw header")
        G = flat.shape[0] if flat.size else 0
        flat = flat.reshape(G, len(header))
        mu = flat[:, :p]
        lam = flat[:, p:p + p * m].reshape(G, m, p).transpose(0, 2, 1)
        psi = flat[:, p + p * m:2 * p + p * m]
        phi = np.broadcast_to(np.eye(m), (G, m, m)).copy()
        col = 2 * p + p * m
        for l in range(m):
            for k in range(l + 1, m):
                phi[:, k, l] = phi[:, l, k] = flat[:, col]
                col += 1
        step = meta.get("phi_step", "None")
        return cls(mu, lam, psi, phi, spec, int(meta["seed"]), int(meta["burn_in"]),
                   phi_step=None if step == "None" else float(step), chains=int(meta.get("chains", 1)))


@dataclass(frozen=True)
class PriorDraws(_DrawArrays):
    """Independent prior draws of the loadings and factor correlations."""

    Lambda: np.ndarray
    Phi: np.ndarray
    spec: UcfmSpec
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "Lambda", _frozen(self.Lambda))
        object.__setattr__(self, "Phi", _frozen(self.Phi))


@dataclass(frozen=True)
class ComparisonResult:
    labels: tuple[str, ...]
    log_marginals_or_bfs: np.ndarray
    prior_probs: np.ndarray
    posterior_probs: np.ndarray
    details: tuple[dict, ...] = ()

    def __post_init__(self):
        for name in ("log_marginals_or_bfs", "prior_probs", "posterior_probs"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "labels", tuple(self.labels))
        for name in ("prior_probs", "posterior_probs"):
            v = getattr(self, name)
            if abs(v.sum() - 1) > 1e-9 or np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} must be a probability vector")

    def best(self) -> str:
        return self.labels[int(np.argmax(self.posterior_probs))]


# -- UcfmSpec text form -----------------------------------------------------

def render_spec(spec: UcfmSpec) -> str:
    """Canonical text form, e.g.::

        [ucfm m=2]
        L[3,1] = 0
        L[5,2] = 0
        L[3,2] > 0
        L[5,1] > 0
    """
    lines = [f"[ucfm m={spec.m}]"]
    lines += [f"L[{j + 1},{k + 1}] = 0" for j, k in sorted(spec.zero_cells)]
    lines += [f"L[{j + 1},{k + 1}] > 0" for j, k in sorted(spec.positive_cells)]
    return "\n".join(lines)


def parse_spec(text: str) -> UcfmSpec:
    """Inverse of :func:`render_spec`; restrictions may also be ';'-separated."""
    from .dsl import DslError, _Parser

    lines = [(i, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines(), start=1)]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines:
        raise DslError("expected '[ucfm m=<int>]' header", 1, 1)
    first, header = lines[0]
    mo = re.fullmatch(r"\[ucfm\s+m\s*=\s*(\d+)\s*\]", header)
    if mo is None:
        raise DslError("expected '[ucfm m=<int>]' header", first, 1)
    zeros, pos = set(), set()
    for ln_no, line in lines[1:]:
        for stmt in filter(None, (s.strip() for s in line.split(";"))):
            cell, op = _Parser(stmt, first_line=ln_no).restriction()
            (zeros if op == "=" else pos).add((cell.j - 1, cell.k - 1))
    return UcfmSpec(int(mo.group(1)), frozenset(zeros), frozenset(pos))


def format_cell(cell: Cell) -> str:
    return f"L[{cell[0] + 1},{cell[1] + 1}]"


def cells_text(cells: Iterable[Cell]) -> str:
    return ", ".join(format_cell(c) for c in sorted(cells))


def to_tsv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write("\t".join(header) + "\n")
    for r in rows:
        buf.write("\t".join(_field(v) for v in r) + "\n")
    return buf.getvalue()


def _field(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_path(path) -> str:
    return Path(path).read_text()
