"""Choosing the number of factors: marginal likelihoods, rank screen, PMPs.

The marginal likelihood uses the candidate identity

    log m(X) = log L(theta*; X) + log pi(theta*) - log pi(theta* | X)

with the posterior ordinate factored as

    pi(Phi* | X) * pi(mu*, Lambda*, psi* | Phi*, X),

each estimated with the Metropolis acceptance-probability identity on the
likelihood with factor scores integrated out. The Gibbs output supplies
the draws: the main run for the first factor and a reduced run with Phi
fixed for both. Averaging full-conditional densities over sampled factor
scores instead would be far noisier, because those densities swing by
tens of log units as the scores move.

Diffuse priors are properized with training samples: for a split into
training rows T and remaining rows R,

    log m(X_R | X_T) = log L(theta*; X_R) + log pi(theta* | X_T) - log pi(theta* | X),

averaged over several random splits. The diffuse prior's normalizing
constants cancel from this quantity.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_t

from .efa import choose_anchors
from .preprocess import factor_upper_bound
from .sampler import (
    LOG_2PI, GibbsEngine, NumericalError, PriorSpec, gibbs_run, log_invgamma, log_phi_prior, log_prior, make_rng,
    observed_loglik, run_chain,
)
from .types import Dataset, FactorParams, PosteriorDraws, UcfmSpec, validate_spec

log = logging.getLogger(__name__)

DEFAULT_SPLITS = 5


def _log_mean_exp(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(logsumexp(values) - np.log(values.size))


@dataclass
class OrdinateParts:
    phi: float
    rows: float

    @property
    def total(self) -> float:
        return self.phi + self.rows


MAX_EVAL = 5000
PROPOSAL_DF = 10
PROPOSAL_INFLATE = 1.2


class _Target:
    """Unnormalized log posterior on the observed (factor-free) likelihood, batched over draws."""

    def __init__(self, z: np.ndarray, spec: UcfmSpec, prior: PriorSpec):
        self.n, self.p = z.shape
        self.spec, self.prior = spec, prior
        self.zbar = z.mean(axis=0)
        zc = z - self.zbar
        self.scatter = zc.T @ zc / self.n
        self.free = spec.free_mask(self.p)
        self.q = 1 + self.free.sum(axis=1)
        self.df = prior.df(spec.m) if spec.m >= 2 else None

    def loglik(self, mu, lam, psi, phi) -> np.ndarray:
        sigma = lam @ phi @ np.swapaxes(lam, 1, 2)
        idx = np.arange(self.p)
        sigma[:, idx, idx] += psi
        out = np.full(len(mu), -np.inf)
        try:
            chol = np.linalg.cholesky(sigma)
            good = np.ones(len(mu), dtype=bool)
        except np.linalg.LinAlgError:
            good = np.array([np.all(np.linalg.eigvalsh(s_) > 0) for s_ in sigma])
            chol = np.zeros_like(sigma)
            chol[good] = np.linalg.cholesky(sigma[good])
        if not good.any():
            return out
        chol = chol[good]
        d = self.zbar - mu[good]
        s_mu = self.scatter + d[:, :, None] * d[:, None, :]
        half = np.linalg.solve(chol, s_mu)
        tr = np.einsum("gii->g", np.linalg.solve(np.swapaxes(chol, 1, 2), half))
        logdet = 2 * np.log(np.einsum("gii->gi", chol)).sum(axis=1)
        out[good] = -0.5 * self.n * (self.p * LOG_2PI + logdet + tr)
        return out

    def row_prior(self, mu, lam, psi) -> np.ndarray:
        pr = self.prior
        v = pr.loading_variance
        beta2 = mu ** 2 + (np.where(self.free, lam, 0.0) ** 2).sum(axis=2)
        var = v * psi
        out = (log_invgamma(psi, pr.psi_shape, pr.psi_rate)
               - 0.5 * self.q * (LOG_2PI + np.log(var)) - 0.5 * beta2 / var).sum(axis=1)
        return out + len(self.spec.positive_cells) * np.log(2.0)

    def phi_prior(self, phi) -> np.ndarray:
        if self.df is None:
            return np.zeros(len(phi))
        return np.array([log_phi_prior(f, self.df) for f in phi])


class _RowCoords:
    """Unconstrained coordinates for (mu, free Lambda, psi): polarity loadings and psi on the log scale."""

    def __init__(self, spec: UcfmSpec, p: int):
        self.p, self.m = p, spec.m
        self.free = spec.free_mask(p)
        pos = np.zeros((p, spec.m), dtype=bool)
        for j, k in spec.positive_cells:
            pos[j, k] = True
        self.logged = pos[self.free]

    def to_u(self, mu, lam, psi):
        l = lam[:, self.free]
        l = np.where(self.logged, np.log(np.where(self.logged, l, 1.0)), l)
        return np.concatenate([mu, l, np.log(psi)], axis=1)

    def from_u(self, u):
        p = self.p
        nf = int(self.free.sum())
        mu = u[:, :p]
        l = u[:, p:p + nf]
        l = np.where(self.logged, np.exp(l), l)
        lam = np.zeros((len(u), p, self.m))
        lam[:, self.free] = l
        psi = np.exp(u[:, p + nf:])
        log_jac = (u[:, p:p + nf] * self.logged).sum(axis=1) + u[:, p + nf:].sum(axis=1)
        return mu, lam, psi, log_jac


def _spread(count: int, limit: int) -> np.ndarray:
    return np.unique(np.linspace(0, count - 1, min(count, limit)).astype(int))


def posterior_ordinate(z: np.ndarray, spec: UcfmSpec, prior: PriorSpec, theta: FactorParams,
                       rng: np.random.Generator, iterations: int, burn_in: int,
                       main: PosteriorDraws | None = None) -> OrdinateParts:
    """Estimate ``log pi(theta | z)`` as ``log pi(Phi* | z) + log pi(mu*, Lambda*, psi* | Phi*, z)``.

    Both factors use the Metropolis acceptance-probability identity on the
    likelihood with the factor scores integrated out. For Phi the proposal
    is a random walk scaled to the posterior spread, averaged over the main
    run (numerator) and over a reduced Gibbs run with Phi fixed at Phi*
    (denominator). For the row parameters the proposal is a multivariate t
    fitted to that reduced run, in coordinates where polarity loadings and
    uniquenesses are logged. ``main`` supplies posterior draws on the same
    ``z``; otherwise a run is made when Phi needs it.
    """
    m = spec.m
    target = _Target(z, spec, prior)
    phi_star = np.asarray(theta.Phi, dtype=float)
    tril = np.tril_indices(m, -1)

    if m >= 2 and main is None:
        engine = GibbsEngine(z, spec, prior, rng, init=theta)
        mu, lam, psi, phi, _, _ = run_chain(engine, iterations, burn_in)
        main = PosteriorDraws(mu, lam, psi, phi, spec, 0, burn_in)

    # reduced run with Phi fixed at Phi* (the ordinary posterior when m < 2)
    engine = GibbsEngine(z, spec, prior, rng, init=theta)
    engine.fix_phi = m >= 2
    r_mu, r_lam, r_psi, _, _, _ = run_chain(engine, iterations, burn_in, adapt=False)
    sel = _spread(len(r_mu), MAX_EVAL)
    r_mu, r_lam, r_psi = r_mu[sel], r_lam[sel], r_psi[sel]

    phi_part = 0.0
    if m >= 2:
        g = _spread(len(main), MAX_EVAL)
        m_mu, m_lam, m_psi, m_phi = main.mu[g], main.Lambda[g], main.psi[g], main.Phi[g]
        vec = m_phi[:, tril[0], tril[1]]
        step = np.maximum(vec.std(axis=0), 1e-3)
        star_vec = phi_star[tril]

        def log_q(to, frm):
            d = (to - frm) / step
            return -0.5 * (d ** 2).sum(axis=-1) - np.log(step).sum() - 0.5 * d.shape[-1] * LOG_2PI

        stars = np.broadcast_to(phi_star, m_phi.shape)
        t_star = target.loglik(m_mu, m_lam, m_psi, stars) + target.phi_prior(stars[:1])[0]
        t_cur = target.loglik(m_mu, m_lam, m_psi, m_phi) + target.phi_prior(m_phi)
        num = np.minimum(0.0, t_star - t_cur) + log_q(star_vec, vec)

        prop = star_vec + step * rng.standard_normal((len(r_mu), star_vec.size))
        ok = np.all(np.abs(prop) < 1, axis=1)
        prop_phi = np.broadcast_to(np.eye(m), (len(r_mu), m, m)).copy()
        prop_phi[:, tril[0], tril[1]] = prop
        prop_phi[:, tril[1], tril[0]] = prop
        den = np.full(len(r_mu), -np.inf)
        if ok.any():
            t_prop = (target.loglik(r_mu[ok], r_lam[ok], r_psi[ok], prop_phi[ok])
                      + target.phi_prior(prop_phi[ok]))
            t_here = target.loglik(r_mu[ok], r_lam[ok], r_psi[ok], np.broadcast_to(phi_star, prop_phi[ok].shape))
            den[ok] = np.minimum(0.0, t_prop - t_here - target.phi_prior(phi_star[None])[0])
        if not np.isfinite(num).any() or not np.isfinite(den).any():
            raise NumericalError("posterior ordinate of Phi is numerically zero at the anchor; "
                                 "choose a different anchor point")
        phi_part = _log_mean_exp(num) - _log_mean_exp(den)

    coords = _RowCoords(spec, z.shape[1])
    u = coords.to_u(r_mu, r_lam, r_psi)
    u_star = coords.to_u(theta.mu[None], theta.Lambda[None], theta.psi[None])
    if np.any(theta.psi <= 0) or not np.all(np.isfinite(u_star)):
        raise NumericalError("anchor lies outside the parameter space; choose a different anchor point")
    cov = np.atleast_2d(np.cov(u, rowvar=False)) * PROPOSAL_INFLATE
    cov += 1e-10 * np.eye(cov.shape[0])
    proposal = multivariate_t(u.mean(axis=0), cov, df=PROPOSAL_DF)

    def h(uu):
        mu_, lam_, psi_, jac = coords.from_u(uu)
        phis = np.broadcast_to(phi_star, (len(uu), m, m))
        return target.loglik(mu_, lam_, psi_, phis) + target.row_prior(mu_, lam_, psi_) + jac

    h_star = float(h(u_star)[0])
    lq_star = float(proposal.logpdf(u_star[0]))
    if not np.isfinite(h_star):
        raise NumericalError("posterior ordinate is numerically zero at the anchor; choose a different anchor point")
    num = np.minimum(lq_star, h_star - h(u) + proposal.logpdf(u))
    v = proposal.rvs(size=len(u), random_state=rng).reshape(len(u), -1)
    den = np.minimum(0.0, h(v) - h_star + lq_star - proposal.logpdf(v))
    _, _, _, jac_star = coords.from_u(u_star)
    rows_part = _log_mean_exp(num) - _log_mean_exp(den) - float(jac_star[0])
    parts = OrdinateParts(float(phi_part), float(rows_part))
    if not np.isfinite(parts.total):
        raise NumericalError("posterior ordinate is numerically zero at the anchor; choose a different anchor point")
    return parts


@dataclass
class MarginalEstimate:
    value: float
    full_ordinate: float
    split_values: list[float] = field(default_factory=list)
    training_size: int = 0
    anchor: FactorParams | None = None


def anchor_point(draws: PosteriorDraws) -> FactorParams:
    """Posterior mean, with polarity cells clamped positive."""
    theta = draws.mean_params()
    lam = np.array(theta.Lambda)
    for j, k in draws.spec.positive_cells:
        lam[j, k] = max(lam[j, k], 1e-8)
    return FactorParams(theta.mu, lam, theta.psi, theta.Phi)


def training_size_for(spec: UcfmSpec, p: int, n: int, prior: PriorSpec) -> int:
    if prior.training_fraction is not None:
        return int(math.ceil(prior.training_fraction * n))
    return min(2 * spec.n_free_params(p), n // 2)


def training_splits(n: int, size: int, count: int, seed: int) -> list[np.ndarray]:
    rng = make_rng(np.random.SeedSequence([seed, 0x5EED]))
    return [np.sort(rng.choice(n, size=size, replace=False)) for _ in range(count)]


def chib_log_marginal(data: Dataset, spec: UcfmSpec, prior: PriorSpec | None = None, seed: int = 0, *,
                      iterations: int = 50_000, burn_in: int = 10_000, splits: int = DEFAULT_SPLITS,
                      training_size: int | None = None, split_rows: list[np.ndarray] | None = None,
                      draws: PosteriorDraws | None = None, details: bool = False):
    """Candidate-estimator log marginal likelihood.

    With ``splits=0`` this is the log marginal under the diffuse prior itself;
    otherwise it is the training-sample (partial) log marginal averaged over
    the splits. ``draws`` may pass an existing posterior sample of the full
    data to serve as anchor source.
    """
    prior = prior or PriorSpec()
    problems = validate_spec(spec, data)
    if problems:
        raise ValueError("invalid spec: " + "; ".join(problems))
    z = data.values
    root = np.random.SeedSequence(seed)
    s_main, s_full, *s_splits = root.spawn(2 + max(splits, len(split_rows or [])))

    if draws is None:
        engine = GibbsEngine(z, spec, prior, make_rng(s_main))
        mu, lam, psi, phi, _, _ = run_chain(engine, iterations, burn_in)
        draws = PosteriorDraws(mu, lam, psi, phi, spec, seed, burn_in)
    theta = anchor_point(draws)
    full = posterior_ordinate(z, spec, prior, theta, make_rng(s_full), iterations, burn_in, main=draws).total

    if splits == 0 and not split_rows:
        value = observed_loglik(theta, z) + log_prior(theta, spec, prior) - full
        est = MarginalEstimate(value, full, anchor=theta)
        return est if details else est.value

    if split_rows is None:
        size = training_size or training_size_for(spec, data.p, data.n, prior)
        split_rows = training_splits(data.n, size, splits, seed)
    values = []
    for rows, ss in zip(split_rows, s_splits):
        mask = np.zeros(data.n, dtype=bool)
        mask[rows] = True
        train_ord = posterior_ordinate(z[mask], spec, prior, theta, make_rng(ss), iterations, burn_in).total
        values.append(observed_loglik(theta, z[~mask]) + train_ord - full)
    est = MarginalEstimate(float(np.mean(values)), full, values, len(split_rows[0]), theta)
    return est if details else est.value


# -- rank screen -------------------------------------------------------------------

@dataclass(frozen=True)
class ScreenResult:
    passed: bool
    reason: str
    smallest_q05: float
    largest_median: float

    def __bool__(self) -> bool:
        return self.passed


RANK_RATIO = 0.1
SCREEN_MAX_DRAWS = 5000
MAX_SUBSETS = 5000


def orthogonal_loadings(draws) -> np.ndarray:
    """``Lambda V`` with ``Phi = V V^T``, per draw."""
    chol = np.linalg.cholesky(np.asarray(draws.Phi))
    return np.asarray(draws.Lambda) @ chol


def orthogonal_singular_values(draws) -> np.ndarray:
    """Singular values of the orthogonalized loadings per draw (descending)."""
    return np.linalg.svd(orthogonal_loadings(draws), compute_uv=False)


def _row_subsets(p: int, d: int, a: np.ndarray, r: int):
    """Row sets of size d to delete: all of them when few, else one greedy choice."""
    if math.comb(p, d) <= MAX_SUBSETS:
        return list(itertools.combinations(range(p), d))
    # greedy: repeatedly drop the row whose removal most lowers the median r-th singular value
    dropped: list[int] = []
    for _ in range(d):
        best, best_val = None, np.inf
        for j in range(p):
            if j in dropped:
                continue
            keep = [i for i in range(p) if i not in dropped and i != j]
            val = np.median(np.linalg.svd(a[:, keep], compute_uv=False)[:, r])
            if val < best_val:
                best, best_val = j, val
        dropped.append(best)
    return [tuple(dropped)]


def deficiency_profile(draws) -> dict[int, np.ndarray]:
    """Per-draw evidence that the loadings are equivalent to a rank-r matrix, for each r < m.

    A loading matrix of rank r reproduces the same covariance as any matrix
    that differs from it in at most m - r rows, the difference being absorbed
    by the uniquenesses. The statistic for r is therefore the smallest, over
    deletions of m - r rows, of the (r+1)-th singular value of the remaining
    orthogonalized loadings. It never exceeds the plain smallest singular
    value and is near zero when a draw is deficient in this sense.
    """
    a = orthogonal_loadings(draws)
    _, p, m = a.shape
    out = {}
    for r in range(m - 1, -1, -1):
        d = m - r
        if p - d < m:
            break
        best = np.full(len(a), np.inf)
        for rows in _row_subsets(p, d, a, r):
            keep = [j for j in range(p) if j not in rows]
            best = np.minimum(best, np.linalg.svd(a[:, keep], compute_uv=False)[:, r])
        out[r] = best
    return out


def rank_screen(draws: PosteriorDraws, ratio: float = RANK_RATIO) -> ScreenResult:
    """Flag column-rank deficiency of the loadings (overfactoring).

    Fails when, for some rank r < m, the 5th percentile of the deficiency
    statistic (``deficiency_profile``) falls below ``ratio`` times the median
    largest singular value of the orthogonalized loadings.
    """
    if len(draws) < 1000:
        raise ValueError(f"rank screen needs at least 1000 draws, got {len(draws)}")
    m = draws.Lambda.shape[2]
    if m == 0:
        return ScreenResult(True, "no factors", 0.0, 0.0)
    if len(draws) > SCREEN_MAX_DRAWS:
        draws = draws.thin(int(math.ceil(len(draws) / SCREEN_MAX_DRAWS)))
    hi = float(np.median(orthogonal_singular_values(draws)[:, 0]))
    q05 = {r: float(np.quantile(v, 0.05)) for r, v in deficiency_profile(draws).items()}
    if not q05:
        q05 = {m - 1: float(np.quantile(orthogonal_singular_values(draws)[:, -1], 0.05))}
    worst = min(q05, key=q05.get)
    lo = q05[worst]
    if lo < ratio * hi:
        d = m - worst
        return ScreenResult(False, f"rank deficiency: loadings act as rank {worst} up to {d} variable"
                                   f"{'s' if d > 1 else ''} (5th pct {lo:.3f} < {ratio} x median "
                                   f"largest singular value {hi:.3f})", lo, hi)
    return ScreenResult(True, "full column rank", lo, hi)


# -- dimension selection ------------------------------------------------------------

@dataclass
class DimensionReport:
    candidate_ms: list[int]
    excluded: list[tuple[int, str]]
    log_marginals: list[float]  # nan for excluded candidates
    pmps: list[float]  # 0 for excluded candidates
    specs: dict = field(default_factory=dict)
    screens: dict = field(default_factory=dict)
    training_size: int = 0

    def pmp(self, m: int) -> float:
        return self.pmps[self.candidate_ms.index(m)]

    @property
    def best(self) -> int:
        return self.candidate_ms[int(np.nanargmax(self.pmps))]

    def rows(self):
        excl = dict(self.excluded)
        for m, lm, pr in zip(self.candidate_ms, self.log_marginals, self.pmps):
            yield m, (f"excluded ({excl[m]})" if m in excl else "ok"), lm, pr


def pmps_from_log_marginals(log_marginals, prior_probs=None) -> np.ndarray:
    lm = np.asarray(log_marginals, dtype=float)
    pp = np.full(lm.size, 1 / lm.size) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    w = lm + np.log(pp)
    return np.exp(w - logsumexp(w))


def canonical_spec(data: Dataset, m: int, anchors: dict | None = None) -> UcfmSpec:
    if anchors and m in anchors:
        return UcfmSpec.from_anchors([a - 1 for a in anchors[m]])
    return UcfmSpec.from_anchors(choose_anchors(data.values, m))


def select_dimension(data: Dataset, prior: PriorSpec | None = None, seed: int = 0, *,
                     iterations: int = 50_000, burn_in: int = 10_000, splits: int = DEFAULT_SPLITS,
                     max_m: int | None = None, anchors: dict | None = None) -> DimensionReport:
    """Screen each admissible m for rank deficiency, then compare survivors by PMP.

    All candidates share the same training splits, sized for the largest
    surviving model, so their partial marginals condition on the same rows.
    """
    prior = prior or PriorSpec()
    bound = factor_upper_bound(data.p)
    if max_m is not None:
        if max_m > bound:
            raise ValueError(f"existence bound: m={max_m} exceeds the maximum {bound} for p={data.p}")
        bound = max_m
    candidates = list(range(1, bound + 1))
    specs, screens, draws_by_m, excluded = {}, {}, {}, []
    for m in candidates:
        spec = canonical_spec(data, m, anchors)
        specs[m] = spec
        child = int(np.random.SeedSequence([seed, m]).generate_state(1)[0])
        try:
            draws = gibbs_run(data, spec, prior, iterations, burn_in, seed=child)
        except NumericalError as exc:
            excluded.append((m, f"sampler failure: {exc}"))
            continue
        screens[m] = rank_screen(draws)
        draws_by_m[m] = draws
        log.info("m=%d screen: %s", m, screens[m].reason)
        if not screens[m]:
            excluded.append((m, screens[m].reason))
    survivors = [m for m in candidates if m not in dict(excluded)]
    if not survivors:
        raise RuntimeError("every candidate number of factors was excluded")
    top = max(survivors)
    size = training_size_for(specs[top], data.p, data.n, prior)
    rows = training_splits(data.n, size, splits, seed) if splits else None
    lm = {}
    for m in survivors:
        child = int(np.random.SeedSequence([seed, m, 1]).generate_state(1)[0])
        lm[m] = chib_log_marginal(data, specs[m], prior, child, iterations=iterations, burn_in=burn_in,
                                  splits=splits, split_rows=rows, draws=draws_by_m[m])
        log.info("m=%d log marginal %.3f", m, lm[m])
    probs = pmps_from_log_marginals([lm[m] for m in survivors])
    pmp_map = dict(zip(survivors, probs))
    return DimensionReport(
        candidates,
        excluded,
        [lm.get(m, float("nan")) for m in candidates],
        [float(pmp_map.get(m, 0.0)) for m in candidates],
        specs,
        screens,
        size if splits else 0,
    )
