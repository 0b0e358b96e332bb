"""Gibbs sampler for the oblique Gaussian factor model.

Model: ``z_i = mu + Lambda xi_i + eps_i`` with ``xi_i ~ N(0, Phi)`` and
``eps_i ~ N(0, diag(psi))``; Phi is a correlation matrix.

Prior (conjugate in the row-regression form used by the sampler):

* ``psi_j ~ IG(psi_shape, psi_rate)``
* ``(mu_j, free Lambda_j.) | psi_j ~ N(0, loading_variance * psi_j * I)``,
  truncated to the positive half-line on polarity cells
* ``Phi`` = correlation matrix of an ``IW(phi_df, I)`` draw.

Blocks: xi rows are drawn from their normal full conditional. Each row's
``(psi_j, mu_j, Lambda_j.)`` is drawn jointly given xi, psi_j with the row
integrated out and then the row given psi_j (normal, truncated on a polarity
cell); drawing them together keeps the chain moving when some psi_j
approaches zero. Phi is updated by random-walk Metropolis on its
off-diagonal elements, because the unit diagonal rules out a conjugate draw.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr, multigammaln, ndtri, ndtri_exp
from scipy.stats import invwishart

from .types import Dataset, FactorParams, PosteriorDraws, PriorDraws, UcfmSpec, validate_spec

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


class NumericalError(RuntimeError):
    """A chain left the finite / positive-definite region."""


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters; ``phi_df=None`` means ``m + 2`` and
    ``training_fraction=None`` sizes training samples at twice the free-parameter count."""

    loading_variance: float = 100.0
    psi_shape: float = 0.01
    psi_rate: float = 0.01
    phi_df: float | None = None
    training_fraction: float | None = None

    def __post_init__(self):
        for name in ("loading_variance", "psi_shape", "psi_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.phi_df is not None and not self.phi_df > 0:
            raise ValueError("phi_df must be strictly positive")
        if self.training_fraction is not None and not 0 < self.training_fraction <= 0.5:
            raise ValueError("training_fraction must lie in (0, 0.5]")

    def df(self, m: int) -> float:
        df = self.phi_df if self.phi_df is not None else m + 2.0
        if not df > m - 1:
            raise ValueError(f"phi_df={df} must exceed m-1={m - 1}")
        return float(df)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator for one chain."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


# -- densities ----------------------------------------------------------------

def implied_covariance(params: FactorParams) -> np.ndarray:
    lam = params.Lambda
    sigma = lam @ params.Phi @ lam.T + np.diag(params.psi)
    return (sigma + sigma.T) / 2


def observed_loglik(params: FactorParams, data: Dataset | np.ndarray) -> float:
    """Log likelihood of the data with the factor scores integrated out."""
    z = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    sigma = implied_covariance(params)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("implied covariance is not positive definite") from None
    resid = z - params.mu
    sol = np.linalg.solve(chol, resid.T)
    n, p = z.shape
    return float(-0.5 * n * p * LOG_2PI - n * np.log(np.diag(chol)).sum() - 0.5 * (sol ** 2).sum())


def log_phi_prior(Phi: np.ndarray, df: float) -> float:
    """Density of the correlation matrix of an IW(df, I) draw (off-diagonal Lebesgue measure)."""
    m = Phi.shape[0]
    if m < 2:
        return 0.0
    try:
        chol = np.linalg.cholesky(Phi)
    except np.linalg.LinAlgError:
        return -np.inf
    logdet = 2 * np.log(np.diag(chol)).sum()
    inv_chol = np.linalg.inv(chol)
    inv_diag = (inv_chol ** 2).sum(axis=0)
    return float(m * gammaln(df / 2) - multigammaln(df / 2, m)
                 - (df + m + 1) / 2 * logdet - df / 2 * np.log(inv_diag).sum())


def log_invgamma(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x


def log_prior(params: FactorParams, spec: UcfmSpec, prior: PriorSpec) -> float:
    """Joint prior log density at ``params`` (free cells only)."""
    p, m = params.p, spec.m
    free = spec.free_mask(p)
    v = prior.loading_variance
    out = float(log_invgamma(params.psi, prior.psi_shape, prior.psi_rate).sum())
    for j in range(p):
        beta = np.concatenate([[params.mu[j]], params.Lambda[j][free[j]]])
        var = v * params.psi[j]
        out += -0.5 * beta.size * (LOG_2PI + np.log(var)) - 0.5 * (beta ** 2).sum() / var
    out += len(spec.positive_cells) * np.log(2.0)
    if any(params.Lambda[j, k] <= 0 for j, k in spec.positive_cells):
        return -np.inf
    if m >= 2:
        out += log_phi_prior(params.Phi, prior.df(m))
    return out


# -- truncated normal -----------------------------------------------------------

def rtruncnorm(mean, sd, rng: np.random.Generator, lower: float = 0.0) -> np.ndarray:
    """Draw from N(mean, sd^2) restricted to (lower, inf) by inverse CDF.

    When the bound sits in the upper tail the draw is made through the
    log survival function so that far-tail truncation stays exact.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    alpha = (lower - mean) / sd
    u = rng.random(np.broadcast(mean, sd).shape)
    with np.errstate(divide="ignore"):
        # alpha < 0: invert the CDF above Phi(alpha), which leaves at least half the mass
        lo = ndtri(np.where(alpha < 0, np.exp(log_ndtr(alpha)), 0.0) * (1 - u) + u)
        # alpha >= 0: x = -Phi^{-1}(u * Phi(-alpha)) computed in log space
        hi = -ndtri_exp(log_ndtr(-alpha) + np.log1p(-u))
    x = np.where(alpha < 0, lo, hi)
    return np.maximum(mean + sd * x, np.nextafter(lower, np.inf))


# -- prior sampling -----------------------------------------------------------------

def sample_phi_prior(m: int, df: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if m < 2:
        return np.ones((size, m, m))
    w = invwishart.rvs(df, np.eye(m), size=size, random_state=rng).reshape(size, m, m)
    d = np.sqrt(np.einsum("gii->gi", w))
    phi = w / d[:, :, None] / d[:, None, :]
    idx = np.arange(m)
    phi[:, idx, idx] = 1.0
    return phi


# A whole row of loadings shares psi, so capping its scale near the float limit
# leaves every sign and every comparison with a finite bound unchanged.
LOG_PSI_CAP = 600.0


def sample_prior(spec: UcfmSpec, prior: PriorSpec, count: int, seed: int, p: int,
                 chunk: int = 200_000) -> PriorDraws:
    """Independent prior draws of Lambda and Phi honoring zero and polarity cells."""
    if count <= 0:
        raise ValueError("count must be positive")
    m = spec.m
    rng = make_rng(seed)
    free = spec.free_mask(p)
    lam = np.zeros((count, p, m))
    pos = np.zeros((p, m), dtype=bool)
    for j, k in spec.positive_cells:
        pos[j, k] = True
    for start in range(0, count, chunk):
        g = min(chunk, count - start)
        # log of a Gamma(a) draw as log Gamma(a+1) + log(U)/a; small shapes underflow otherwise
        a = prior.psi_shape
        log_g = np.log(rng.gamma(a + 1.0, size=(g, p))) + np.log(rng.random((g, p))) / a
        log_psi = np.minimum(np.log(prior.psi_rate) - log_g, LOG_PSI_CAP)
        sd = np.exp(0.5 * (np.log(prior.loading_variance) + log_psi))[:, :, None]
        block = rng.standard_normal((g, p, m)) * sd
        block = np.where(pos, np.abs(block), block)
        lam[start:start + g] = np.where(free, block, 0.0)
    phi = sample_phi_prior(m, prior.df(m), count, rng)
    return PriorDraws(lam, phi, spec, seed)


# -- the Gibbs engine ---------------------------------------------------------------

class GibbsEngine:
    """Mutable chain state with one method per full-conditional block.

    ``fix_phi`` freezes Phi at its current value; the marginal-likelihood
    code uses it for reduced runs.
    """

    def __init__(self, z: np.ndarray, spec: UcfmSpec, prior: PriorSpec, rng: np.random.Generator,
                 init: FactorParams | None = None, phi_step: float | None = None):
        self.z = np.asarray(z, dtype=float)
        self.n, self.p = self.z.shape
        self.spec = spec
        self.m = m = spec.m
        self.prior = prior
        self.rng = rng
        self.v = prior.loading_variance
        self.df = prior.df(m) if m else 0.0
        d = m + 1
        self.free = np.ones((self.p, d), dtype=bool)
        self.free[:, 1:] = spec.free_mask(self.p)
        self.q = self.free.sum(axis=1)
        self.trunc = np.full(self.p, -1)
        for j, k in spec.positive_cells:
            if self.trunc[j] >= 0:
                raise ValueError(f"row {j + 1} carries more than one polarity cell")
            self.trunc[j] = k + 1
        self.trunc_rows = np.flatnonzero(self.trunc >= 0)
        self.pair_mask = self.free[:, :, None] & self.free[:, None, :]
        self.tril = np.tril_indices(m, -1)
        self.phi_step = phi_step if phi_step is not None else 1.5 / np.sqrt(self.n * max(len(self.tril[0]), 1))
        self.fix_phi = False
        self.phi_accepts = 0
        self.phi_tries = 0
        if init is None:
            init = default_init(self.z, spec)
        self.beta = np.zeros((self.p, d))
        self.beta[:, 0] = init.mu
        self.beta[:, 1:] = np.where(self.free[:, 1:], init.Lambda, 0.0)
        for j in self.trunc_rows:
            self.beta[j, self.trunc[j]] = max(self.beta[j, self.trunc[j]], 1e-3)
        self.psi = np.maximum(np.array(init.psi, dtype=float), 1e-3)
        self.phi = np.array(init.Phi, dtype=float) if m else np.ones((0, 0))
        self.xi = np.zeros((self.n, m))
        if m:
            self.step_xi()

    # state views
    @property
    def mu(self) -> np.ndarray:
        return self.beta[:, 0]

    @property
    def lam(self) -> np.ndarray:
        return self.beta[:, 1:]

    def params(self) -> FactorParams:
        return FactorParams(self.mu.copy(), self.lam.copy(), self.psi.copy(),
                            self.phi.copy() if self.m else np.ones((0, 0)))

    def set_params(self, params: FactorParams) -> None:
        self.beta[:, 0] = params.mu
        self.beta[:, 1:] = np.where(self.free[:, 1:], params.Lambda, 0.0)
        self.psi = np.array(params.psi, dtype=float)
        if self.m:
            self.phi = np.array(params.Phi, dtype=float)

    # blocks
    def step_xi(self) -> None:
        lam, m = self.lam, self.m
        lam_s = lam / self.psi[:, None]
        phi_inv = np.linalg.inv(self.phi)
        prec = phi_inv + lam.T @ lam_s
        chol = np.linalg.cholesky(prec)
        # cov = prec^{-1}; draw mean + chol^{-T} e
        rhs = (self.z - self.mu) @ lam_s
        mean = np.linalg.solve(prec, rhs.T).T
        e = self.rng.standard_normal((self.n, m))
        self.xi = mean + np.linalg.solve(chol.T, e.T).T

    def _design(self):
        x = np.empty((self.n, self.m + 1))
        x[:, 0] = 1.0
        x[:, 1:] = self.xi
        return x

    def _beta_system(self):
        x = self._design()
        xtx = x.T @ x
        xtz = x.T @ self.z  # (d, p)
        prec = xtx[None] * self.pair_mask
        idx = np.arange(self.m + 1)
        prec[:, idx, idx] = np.where(self.free, xtx[idx, idx] + 1.0 / self.v, 1.0)
        rhs = (xtz.T * self.free)
        mean = np.linalg.solve(prec, rhs[:, :, None])[:, :, 0]
        return x, prec, mean

    def step_beta(self, system=None) -> None:
        _, prec, mean = system or self._beta_system()
        chol = np.linalg.cholesky(prec)
        e = self.rng.standard_normal(mean.shape) * self.free
        noise = np.linalg.solve(np.swapaxes(chol, 1, 2), e[:, :, None])[:, :, 0]
        beta = mean + np.sqrt(self.psi)[:, None] * noise
        for j in self.trunc_rows:
            beta[j] = self._trunc_row(j, prec[j], mean[j])
        self.beta = np.where(self.free, beta, 0.0)

    def step_beta_psi(self) -> None:
        """Draw (psi_j, beta_j) jointly: psi_j with beta_j integrated out, then beta_j | psi_j.

        On polarity rows the collapsed psi draw is an independence Metropolis
        step whose acceptance ratio is the change in P(beta_t > 0 | psi).
        """
        x, prec, mean = system = self._beta_system()
        zz = (self.z ** 2).sum(axis=0)
        rhs = (x.T @ self.z).T * self.free
        shape = self.prior.psi_shape + 0.5 * self.n
        rate = self.prior.psi_rate + 0.5 * np.maximum(zz - (rhs * mean).sum(axis=1), 0.0)
        prop = rate / self.rng.gamma(shape, size=self.p)
        for j in self.trunc_rows:
            t = self.trunc[j]
            f = np.flatnonzero(self.free[j])
            c_tt = np.linalg.inv(prec[j][np.ix_(f, f)])[int(np.flatnonzero(f == t)[0]), int(np.flatnonzero(f == t)[0])]
            lr = log_ndtr(mean[j, t] / np.sqrt(prop[j] * c_tt)) - log_ndtr(mean[j, t] / np.sqrt(self.psi[j] * c_tt))
            if np.log(self.rng.random()) >= lr:
                prop[j] = self.psi[j]
        self.psi = prop
        self.step_beta(system)

    def _trunc_row(self, j, prec_j, mean_j):
        f = np.flatnonzero(self.free[j])
        t = int(np.flatnonzero(f == self.trunc[j])[0])
        cov = self.psi[j] * np.linalg.inv(prec_j[np.ix_(f, f)])
        mf = mean_j[f]
        s_t = np.sqrt(cov[t, t])
        bt = float(rtruncnorm(mf[t], s_t, self.rng))
        rest = np.arange(f.size) != t
        out = np.zeros(self.m + 1)
        out[f[t]] = bt
        if rest.any():
            c_rt = cov[rest, t]
            cmean = mf[rest] + c_rt / cov[t, t] * (bt - mf[t])
            ccov = cov[np.ix_(rest, rest)] - np.outer(c_rt, c_rt) / cov[t, t]
            out[f[rest]] = cmean + np.linalg.cholesky(ccov) @ self.rng.standard_normal(rest.sum())
        return out

    # Phi
    def xi_scatter(self) -> np.ndarray:
        return self.xi.T @ self.xi

    def log_phi_target(self, phi: np.ndarray, scatter: np.ndarray) -> float:
        try:
            chol = np.linalg.cholesky(phi)
        except np.linalg.LinAlgError:
            return -np.inf
        logdet = 2 * np.log(np.diag(chol)).sum()
        sol = np.linalg.solve(chol, scatter)
        tr = np.trace(np.linalg.solve(chol.T, sol))
        return -0.5 * self.n * logdet - 0.5 * tr + log_phi_prior(phi, self.df)

    def phi_from_vec(self, vec: np.ndarray) -> np.ndarray:
        phi = np.eye(self.m)
        phi[self.tril] = vec
        phi.T[self.tril] = vec
        return phi

    def step_phi(self, moves: int = 3) -> None:
        if self.m < 2:
            return
        scatter = self.xi_scatter()
        cur = self.phi[self.tril]
        cur_t = self.log_phi_target(self.phi, scatter)
        for _ in range(moves):
            prop = cur + self.phi_step * self.rng.standard_normal(cur.size)
            if np.any(np.abs(prop) >= 1):
                self.phi_tries += 1
                continue
            phi_p = self.phi_from_vec(prop)
            t = self.log_phi_target(phi_p, scatter)
            self.phi_tries += 1
            if np.log(self.rng.random()) < t - cur_t:
                cur, cur_t = prop, t
                self.phi = phi_p
                self.phi_accepts += 1

    def adapt_phi_step(self, target: float = 0.3) -> None:
        if self.phi_tries:
            rate = self.phi_accepts / self.phi_tries
            self.phi_step *= float(np.exp(2.0 * (rate - target)))
            self.phi_step = min(self.phi_step, 0.5)
        self.phi_accepts = self.phi_tries = 0

    def sweep(self) -> None:
        if self.m:
            self.step_xi()
        self.step_beta_psi()
        if self.m >= 2 and not self.fix_phi:
            self.step_phi()

    def check(self, it: int) -> None:
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.psi))
                and np.all(self.psi > 0) and np.all(np.isfinite(self.xi))):
            raise NumericalError(f"chain diverged at iteration {it}")


# -- initial values ---------------------------------------------------------------

def default_init(z: np.ndarray, spec: UcfmSpec) -> FactorParams:
    """Identified principal-axis solution when possible, otherwise a neutral start."""
    from .efa import identified_start

    p, m = z.shape[1], spec.m
    mu = z.mean(axis=0)
    var = z.var(axis=0, ddof=1)
    if m == 0:
        return FactorParams(mu, np.zeros((p, 0)), var, np.ones((0, 0)))
    start = identified_start(z, spec)
    if start is not None:
        lam, psi, phi = start
        return FactorParams(mu, lam, np.maximum(psi, 0.05 * var), phi)
    lam = np.where(spec.free_mask(p), 0.1, 0.0)
    for j, k in spec.positive_cells:
        lam[j, k] = 0.5
    return FactorParams(mu, lam, 0.5 * var, np.eye(m))


# -- public runners ---------------------------------------------------------------

def run_chain(engine: GibbsEngine, iterations: int, burn_in: int, keep_scores: bool = False,
              adapt: bool = True, callback=None):
    """Advance ``engine``; return stacked retained states (mu, Lambda, psi, Phi, scores, scatter)."""
    kept = iterations - burn_in
    p, m = engine.p, engine.m
    mu = np.empty((kept, p))
    lam = np.empty((kept, p, m))
    psi = np.empty((kept, p))
    phi = np.empty((kept, m, m))
    scatter = np.empty((kept, m, m))
    scores = np.empty((kept, engine.n, m)) if keep_scores else None
    for it in range(iterations):
        engine.sweep()
        if adapt and it < burn_in and (it + 1) % 50 == 0 and m >= 2 and not engine.fix_phi:
            engine.adapt_phi_step()
        if it % 100 == 0 or it == iterations - 1:
            engine.check(it)
        g = it - burn_in
        if g >= 0:
            mu[g] = engine.mu
            lam[g] = engine.lam
            psi[g] = engine.psi
            phi[g] = engine.phi
            scatter[g] = engine.xi_scatter()
            if keep_scores:
                scores[g] = engine.xi
            if callback is not None:
                callback(g, engine)
    return mu, lam, psi, phi, scores, scatter


def gibbs_run(data: Dataset, spec: UcfmSpec, prior: PriorSpec | None = None, iterations: int = 50_000,
              burn_in: int = 10_000, seed: int = 0, chains: int = 1, keep_scores: bool = False,
              init: FactorParams | None = None) -> PosteriorDraws:
    """Sample the posterior of the factor model under ``spec``.

    Several chains use independent streams spawned from ``seed`` and are
    concatenated after burn-in. The result is a deterministic function of the
    arguments.
    """
    prior = prior or PriorSpec()
    problems = validate_spec(spec, data)
    if problems:
        raise ValueError("invalid spec: " + "; ".join(problems))
    if not iterations > burn_in >= 0:
        raise ValueError("need iterations > burn_in >= 0")
    parts = []
    for ss in np.random.SeedSequence(seed).spawn(chains):
        engine = GibbsEngine(data.values, spec, prior, make_rng(ss), init=init)
        mu, lam, psi, phi, scores, _ = run_chain(engine, iterations, burn_in, keep_scores)
        parts.append(PosteriorDraws(mu, lam, psi, phi, spec, seed, burn_in, scores,
                                    engine.phi_step if spec.m >= 2 else None))
    return parts[0] if chains == 1 else PosteriorDraws.concatenate(parts)
