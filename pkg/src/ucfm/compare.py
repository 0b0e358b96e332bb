"""Bayes factors of inequality-constrained models against the encompassing model.

The Bayes factor of a constrained model against its unconstrained parent is
``f / c``: the posterior proportion of draws satisfying the constraints over
the prior proportion. Both proportions are computed on draws of the
encompassing model, so one chain serves every competing model.

Under the prior, loading rows are independent: each row has its own
uniqueness, and Phi never enters a constraint. The prior proportion therefore
factorizes over groups of rows that no atom links. Each factor is estimated
on the same prior draws. The product is the same quantity as the joint
proportion, but it stays estimable when the joint prior mass is far below
one over the number of draws. This matters because interval constraints such
as ``abs(L[8,2]) < .3`` have tiny mass under a diffuse prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import ConstraintSet, satisfies
from .types import ComparisonResult, PosteriorDraws, PriorDraws

MIN_DRAWS = 1000


class ConstraintMassError(ValueError):
    """No prior draw satisfies a constraint set, so c cannot be estimated."""


@dataclass(frozen=True)
class EncompassingBF:
    bf: float
    f: float
    c: float
    mc_se: float
    c_parts: tuple[float, ...] = ()
    n_posterior: int = 0
    n_prior: int = 0

    def as_dict(self) -> dict:
        return {"bf": self.bf, "f": self.f, "c": self.c, "mc_se": self.mc_se}


def row_components(cs: ConstraintSet) -> list[list[int]]:
    """Indices of atoms grouped by connected sets of rows; an atom links the rows it touches."""
    parent = list(range(cs.p))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    rows_of = []
    for atom in cs.atoms:
        rows = sorted({j for j, _ in atom.cells()})
        rows_of.append(rows)
        for r in rows[1:]:
            parent[find(r)] = find(rows[0])
    groups: dict[int, list[int]] = {}
    for i, rows in enumerate(rows_of):
        # an atom without cells (a pure constant) gets its own group
        key = find(rows[0]) if rows else -1 - i
        groups.setdefault(key, []).append(i)
    return [groups[k] for k in sorted(groups)]


def _atom_values(lam: np.ndarray, cs: ConstraintSet, chunk: int = 250_000) -> np.ndarray:
    A, b = cs.matrix()
    flat = lam.reshape(len(lam), cs.p * cs.m)
    out = np.empty((len(lam), len(cs.atoms)), dtype=bool)
    for s in range(0, len(lam), chunk):
        out[s:s + chunk] = flat[s:s + chunk] @ A.T + b > 0
    return out


def prior_proportion(prior_lambda: np.ndarray, cs: ConstraintSet) -> tuple[float, tuple[float, ...], float]:
    """Return (c, per-component proportions, relative variance of c)."""
    n = len(prior_lambda)
    if not cs.atoms:
        return 1.0, (), 0.0
    ok = _atom_values(prior_lambda, cs)
    parts = []
    relvar = 0.0
    for group in row_components(cs):
        share = float(ok[:, group].all(axis=1).mean())
        if share == 0.0:
            raise ConstraintMassError(
                "prior never satisfies constraints; increase prior draw count or loosen constraints")
        parts.append(share)
        relvar += (1 - share) / (n * share)
    return float(np.prod(parts)), tuple(parts), relvar


def encompassing_bf(posterior: PosteriorDraws, prior: PriorDraws, cs: ConstraintSet) -> EncompassingBF:
    """Bayes factor of the constrained model against the encompassing model.

    ``mc_se`` propagates the binomial standard errors of f and of each prior
    factor through the ratio by the delta method.
    """
    for name, draws in (("posterior", posterior), ("prior", prior)):
        if len(draws) < MIN_DRAWS:
            raise ValueError(f"need at least {MIN_DRAWS} {name} draws, got {len(draws)}")
    n_post, n_prior = len(posterior), len(prior)
    if not cs.atoms:
        return EncompassingBF(1.0, 1.0, 1.0, 0.0, (), n_post, n_prior)
    f = float(np.mean(satisfies(posterior.Lambda, cs)))
    c, parts, relvar_c = prior_proportion(prior.Lambda, cs)
    bf = f / c
    var_f = f * (1 - f) / n_post
    mc_se = float(np.sqrt(var_f / c ** 2 + bf ** 2 * relvar_c))
    return EncompassingBF(bf, f, c, mc_se, parts, n_post, n_prior)


def pmp(bfs, prior_probs=None) -> np.ndarray:
    """Posterior model probabilities from Bayes factors against a common model.

    ``P(M_t | X) = 1 / sum_s (p_s / p_t) B_st`` with ``B_st = bf_s / bf_t``,
    evaluated in log space.
    """
    bfs = np.asarray(bfs, dtype=float)
    if bfs.ndim != 1 or bfs.size == 0:
        raise ValueError("bfs must be a non-empty vector")
    if np.any(bfs < 0) or not np.all(np.isfinite(bfs)):
        raise ValueError("bfs must be finite and non-negative")
    if prior_probs is None:
        prior_probs = np.full(bfs.size, 1.0 / bfs.size)
    prior_probs = np.asarray(prior_probs, dtype=float)
    if prior_probs.shape != bfs.shape:
        raise ValueError("prior_probs and bfs differ in length")
    if np.any(prior_probs < 0) or abs(prior_probs.sum() - 1) > 1e-9:
        raise ValueError("prior_probs must be non-negative and sum to 1")
    with np.errstate(divide="ignore"):
        logw = np.log(bfs) + np.log(prior_probs)
    if not np.any(np.isfinite(logw)):
        raise ValueError("all Bayes factors are zero (or carry zero prior mass)")
    return pmp_from_log(logw)


def pmp_from_log(logw) -> np.ndarray:
    """Normalize log weights (log prior + log evidence) to probabilities."""
    logw = np.asarray(logw, dtype=float)
    top = logw.max()
    if not np.isfinite(top):
        raise ValueError("all model weights are zero")
    w = np.exp(logw - top)
    return w / w.sum()


def log_bf_matrix(bfs) -> np.ndarray:
    """``log B[s, t] = log bf_s - log bf_t`` for Bayes factors against a common model."""
    with np.errstate(divide="ignore"):
        lb = np.log(np.asarray(bfs, dtype=float))
    return lb[:, None] - lb[None, :]


def compare_models(posterior: PosteriorDraws, prior: PriorDraws, models: dict[str, ConstraintSet],
                   prior_probs=None) -> ComparisonResult:
    results = {name: encompassing_bf(posterior, prior, cs) for name, cs in models.items()}
    bfs = np.array([r.bf for r in results.values()])
    probs = pmp(bfs, prior_probs)
    pp = np.full(len(bfs), 1.0 / len(bfs)) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    details = tuple(dict(r.as_dict(), c_parts=list(r.c_parts)) for r in results.values())
    return ComparisonResult(tuple(results), bfs, pp, probs, details)


__all__ = [
    "ConstraintMassError", "EncompassingBF", "row_components", "prior_proportion",
    "encompassing_bf", "pmp", "pmp_from_log", "log_bf_matrix", "compare_models",
]
