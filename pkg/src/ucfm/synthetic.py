"""Synthetic data sets with known structure, for demos and recovery checks."""

from __future__ import annotations

import numpy as np

from .types import Dataset, FactorParams, UcfmSpec

MBS_NAMES = ("BMI", "log_trig", "HDL", "log_IR", "log_GB", "log_G2", "SBP", "DBP")

# posterior means of the two-factor metabolic model (glucose, unimpaired lipid)
MBS_LAMBDA = np.array([
    [0.324, -0.068],
    [-0.006, -0.653],
    [0.000, 0.706],
    [0.767, -0.179],
    [0.470, 0.000],
    [0.355, -0.124],
    [0.274, 0.029],
    [0.202, 0.139],
])
MBS_PHI12 = -0.277
# factor 1 is anchored on log_GB, factor 2 on HDL (0-based rows)
MBS_ANCHORS = (4, 2)


def mbs_spec() -> UcfmSpec:
    return UcfmSpec.from_anchors(MBS_ANCHORS)


def mbs_params() -> FactorParams:
    """Loadings and factor correlation at the reported means; uniquenesses make unit variances."""
    phi = np.array([[1.0, MBS_PHI12], [MBS_PHI12, 1.0]])
    communality = np.einsum("jk,kl,jl->j", MBS_LAMBDA, phi, MBS_LAMBDA)
    return FactorParams(np.zeros(8), MBS_LAMBDA.copy(), 1.0 - communality, phi)


def sample_model(params: FactorParams, n: int, rng: np.random.Generator,
                 error_cov: np.ndarray | None = None) -> np.ndarray:
    """Draw n rows from the factor model; ``error_cov`` replaces diag(psi) when given."""
    m = params.m
    xi = rng.multivariate_normal(np.zeros(m), params.Phi, size=n) if m else np.zeros((n, 0))
    cov = np.diag(params.psi) if error_cov is None else error_cov
    eps = rng.multivariate_normal(np.zeros(params.p), cov, size=n)
    return params.mu + xi @ params.Lambda.T + eps


def mbs_dataset(n: int = 464, seed: int = 0) -> Dataset:
    """Data generated at the metabolic-syndrome posterior means."""
    z = sample_model(mbs_params(), n, np.random.default_rng(seed))
    return Dataset.from_array(z, MBS_NAMES)


# a clean two-factor structure with one residual pair that invites a doublet factor
DOUBLET_LAMBDA = np.array([
    [0.8, 0.0],
    [0.7, 0.0],
    [0.6, 0.0],
    [0.5, 0.0],
    [0.0, 0.8],
    [0.0, 0.7],
    [0.0, 0.6],
    [0.0, 0.5],
])
DOUBLET_PHI12 = 0.3
DOUBLET_PAIR = (6, 7)
DOUBLET_CORR = 0.1


def doublet_params() -> tuple[FactorParams, np.ndarray]:
    """Two-factor parameters plus an error covariance with one correlated residual pair."""
    phi = np.array([[1.0, DOUBLET_PHI12], [DOUBLET_PHI12, 1.0]])
    psi = 1.0 - (DOUBLET_LAMBDA ** 2).sum(axis=1)
    params = FactorParams(np.zeros(8), DOUBLET_LAMBDA.copy(), psi, phi)
    cov = np.diag(psi)
    a, b = DOUBLET_PAIR
    cov[a, b] = cov[b, a] = DOUBLET_CORR * np.sqrt(psi[a] * psi[b])
    return params, cov


def doublet_dataset(n: int = 500, seed: int = 0) -> Dataset:
    params, cov = doublet_params()
    z = sample_model(params, n, np.random.default_rng(seed), error_cov=cov)
    return Dataset.from_array(z, [f"x{j + 1}" for j in range(8)])


def overfactored_dataset(n: int = 300, seed: int = 0) -> Dataset:
    """Single-factor data (rank-one loadings) for rank-screen checks."""
    lam = np.array([[0.8], [0.7], [0.7], [0.6], [0.6], [0.5]])
    params = FactorParams(np.zeros(6), lam, 1.0 - (lam ** 2).ravel(), np.eye(1))
    return Dataset.from_array(sample_model(params, n, np.random.default_rng(seed)))


__all__ = [
    "MBS_NAMES", "MBS_LAMBDA", "MBS_PHI12", "MBS_ANCHORS", "mbs_spec", "mbs_params", "sample_model",
    "mbs_dataset", "doublet_params", "doublet_dataset", "overfactored_dataset",
]
