"""Principal-axis pilot solutions: starting values and anchor choice.

Nothing here is used for inference; the pilot only orients the chain and
picks anchor variables when the user gives none.
"""

from __future__ import annotations

import numpy as np

from .types import UcfmSpec


def principal_axis(r: np.ndarray, m: int, iterations: int = 100, tol: float = 1e-6):
    """Iterated principal-axis factoring of a correlation matrix; returns (loadings, communalities)."""
    p = r.shape[0]
    try:
        h = 1 - 1 / np.diag(np.linalg.inv(r))
    except np.linalg.LinAlgError:
        h = np.full(p, 0.5)
    h = np.clip(h, 0.05, 0.995)
    for _ in range(iterations):
        rr = r.copy()
        np.fill_diagonal(rr, h)
        vals, vecs = np.linalg.eigh(rr)
        vals, vecs = vals[::-1][:m], vecs[:, ::-1][:, :m]
        lam = vecs * np.sqrt(np.maximum(vals, 0))
        new = np.clip((lam ** 2).sum(axis=1), 0.005, 0.995)
        if np.max(np.abs(new - h)) < tol:
            h = new
            break
        h = new
    return lam, h


def varimax(lam: np.ndarray, iterations: int = 200, tol: float = 1e-8) -> np.ndarray:
    p, m = lam.shape
    if m < 2:
        return lam.copy()
    h = np.sqrt((lam ** 2).sum(axis=1, keepdims=True))
    h[h == 0] = 1
    a = lam / h
    rot = np.eye(m)
    crit = 0.0
    for _ in range(iterations):
        b = a @ rot
        u, s, vt = np.linalg.svd(a.T @ (b ** 3 - b @ np.diag((b ** 2).mean(axis=0))))
        rot = u @ vt
        if s.sum() < crit * (1 + tol):
            break
        crit = s.sum()
    return (a @ rot) * h


def choose_anchors(z: np.ndarray, m: int) -> list[int]:
    """Pick one anchor variable per factor from a varimax-rotated pilot.

    Each factor takes the still-unused variable with the largest share of its
    communality on that factor, weighted by the communality itself.
    """
    r = np.corrcoef(z, rowvar=False)
    lam, h = principal_axis(r, m)
    lam = varimax(lam)
    h = np.maximum((lam ** 2).sum(axis=1), 1e-12)
    score = (lam ** 2) * ((lam ** 2) / h[:, None])
    anchors = [-1] * m
    used: set[int] = set()
    order = np.argsort(-score.max(axis=0))
    for k in order:
        cand = [j for j in np.argsort(-score[:, k]) if j not in used]
        anchors[k] = int(cand[0])
        used.add(anchors[k])
    # order factors by anchor row for a reproducible canonical layout
    return sorted(anchors)


def identified_start(z: np.ndarray, spec: UcfmSpec):
    """Rotate a pilot solution into the anchor structure of ``spec``.

    With anchor block ``B = L0[anchors]`` the oblique rotation ``Lambda = L0 B^-1 D``
    zeroes the anchor cross-loadings, and ``D`` rescales the factors to unit
    variance. Returns (Lambda, psi, Phi) or None when the pattern is not
    anchor-shaped or the block is singular.
    """
    anchors = spec.anchors()
    m = spec.m
    if anchors is None or m == 0:
        return None
    sd = z.std(axis=0, ddof=1)
    r = np.corrcoef(z, rowvar=False)
    l0, h = principal_axis(r, m)
    b = l0[anchors]
    if abs(np.linalg.det(b)) < 1e-6:
        return None
    d = np.sqrt((b @ b.T).diagonal())
    lam = l0 @ np.linalg.inv(b) * d
    phi = (b @ b.T) / np.outer(d, d)
    np.fill_diagonal(phi, 1.0)
    free = spec.free_mask(z.shape[1])
    lam = np.where(free, lam, 0.0) * sd[:, None]
    psi = np.maximum(1 - h, 0.05) * sd ** 2
    if np.linalg.eigvalsh(phi).min() < 1e-3:
        phi = 0.5 * phi + 0.5 * np.eye(m)
    return lam, psi, phi
