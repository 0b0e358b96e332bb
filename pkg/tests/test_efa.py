import numpy as np

from ucfm.efa import choose_anchors, identified_start, principal_axis, varimax
from ucfm.synthetic import doublet_params, sample_model
from ucfm.types import UcfmSpec


def _z(n=2000, seed=0):
    params, _ = doublet_params()
    return sample_model(params, n, np.random.default_rng(seed))


def test_principal_axis_reproduces_off_diagonal():
    params, _ = doublet_params()
    sigma = params.Sigma
    lam, h = principal_axis(sigma, 2)
    fit = lam @ lam.T
    off = ~np.eye(8, dtype=bool)
    assert np.max(np.abs(fit[off] - sigma[off])) < 1e-3
    np.testing.assert_allclose(h, (lam ** 2).sum(axis=1))


def test_varimax_is_an_orthogonal_rotation():
    lam = np.random.default_rng(1).normal(size=(6, 2))
    rot = varimax(lam)
    np.testing.assert_allclose(rot @ rot.T, lam @ lam.T, atol=1e-10)


def test_choose_anchors_one_per_block():
    a = choose_anchors(_z(), 2)
    assert len(set(a)) == 2
    assert {a[0] < 4, a[1] < 4} == {True, False}


def test_identified_start_honours_spec():
    spec = UcfmSpec.from_anchors([0, 4])
    lam, psi, phi = identified_start(_z(), spec)
    assert lam[0, 1] == 0 and lam[4, 0] == 0 and lam[0, 0] > 0 and lam[4, 1] > 0
    assert np.allclose(np.diag(phi), 1) and np.all(psi > 0)
