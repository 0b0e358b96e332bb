import numpy as np
import pytest

from ucfm.report import (
    fmt3, load_results, posterior_summary, render_report, render_text, reproduced_residual, save_results,
)
from ucfm.synthetic import mbs_params
from ucfm.types import FactorParams, PosteriorDraws, UcfmSpec

SPEC = UcfmSpec.from_anchors([4, 2])


def _draws(g=2000, seed=0, const=None):
    rng = np.random.default_rng(seed)
    lam = rng.normal(size=(g, 8, 2)) * SPEC.free_mask(8)
    lam[:, 4, 0] = np.abs(lam[:, 4, 0])
    lam[:, 2, 1] = np.abs(lam[:, 2, 1])
    r = rng.uniform(-0.5, 0, g)
    phi = np.stack([[[1, x], [x, 1]] for x in r])
    psi = rng.uniform(0.2, 1, (g, 8))
    mu = rng.normal(size=(g, 8))
    if const is not None:
        lam[:] = lam[0]
        phi[:] = phi[0]
        psi[:] = psi[0]
        mu[:] = const
    return PosteriorDraws(mu, lam, psi, phi, SPEC, seed, 0)


def _sort_quantile(x, q):
    """Linear-interpolation quantile from a full sort (numpy's default definition)."""
    s = np.sort(x)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    return s[lo] + (h - lo) * (s[min(lo + 1, len(s) - 1)] - s[lo])


def test_summary_matches_sort_oracle():
    d = _draws()
    rows = {r.parameter: r for r in posterior_summary(d)}
    x = d.Lambda[:, 0, 1]
    r = rows["L[1,2]"]
    assert r.mean == pytest.approx(x.mean(), abs=1e-12)
    assert r.lower == pytest.approx(_sort_quantile(x, 0.025), abs=1e-12)
    assert r.upper == pytest.approx(_sort_quantile(x, 0.975), abs=1e-12)


def test_constant_chain_gives_degenerate_interval():
    d = _draws(const=0.7)
    r = [row for row in posterior_summary(d) if row.parameter == "mu[1]"][0]
    assert (r.mean, r.lower, r.upper) == pytest.approx((0.7, 0.7, 0.7), abs=1e-15)


def test_summary_order_and_fixed_cells():
    names = [r.parameter for r in posterior_summary(_draws())]
    assert names[:8] == [f"L[{j},1]" for j in range(1, 9)]
    assert names[8:16] == [f"L[{j},2]" for j in range(1, 9)]
    assert names[16] == "Phi[1,2]"
    fixed = {r.parameter for r in posterior_summary(_draws()) if r.fixed}
    assert fixed == {"L[3,1]", "L[5,2]"}


def test_summary_needs_1000_draws():
    with pytest.raises(ValueError, match="1000"):
        posterior_summary(_draws(g=500))


def test_reproduced_and_residual():
    s = np.eye(8)
    s[1, 0] = s[0, 1] = 0.041
    out = reproduced_residual(s, mbs_params())
    assert out["reproduced"][1, 0] == pytest.approx(0.101, abs=5e-4)
    assert out["residual"][1, 0] == pytest.approx(-0.060, abs=5e-4)
    np.testing.assert_array_equal(out["reproduced"] + out["residual"], s)
    zero = FactorParams(np.zeros(3), np.zeros((3, 1)), np.ones(3), np.eye(1))
    s3 = np.array([[1, 0.2, 0.1], [0.2, 1, 0.3], [0.1, 0.3, 1]])
    o3 = reproduced_residual(s3, zero)
    np.testing.assert_array_equal(o3["reproduced"], np.eye(3))
    np.testing.assert_array_equal(o3["residual"], s3 - np.eye(3))


def test_fmt3():
    assert fmt3(-0.0001) == "0.000"
    assert fmt3(None) == "–"
    assert fmt3(0.2775) in ("0.278", "0.277")


def _results():
    return {
        "preprocess": {"n": 10, "p": 3, "names": ["a", "b", "c"], "log_columns": ["b"], "nonsingular": True,
                       "kmo": 0.61, "kmo_label": "mediocre", "max_m": 1},
        "dimension": {"rows": [{"m": 1, "status": "ok", "reason": "", "log_marginal": -12.5, "pmp": 1.0}],
                      "training_size": 4, "splits": 2},
        "provenance": {"seed": 1},
    }


def test_partial_report_and_byte_identical_rerender(tmp_path):
    res = _results()
    text = render_text(res)
    assert "Step 1" in text and "Step 4" not in text and "Step 2" not in text
    save_results(res, tmp_path)
    first = {p.name: p.read_bytes() for p in render_report(load_results(tmp_path), tmp_path / "a")}
    second = {p.name: p.read_bytes() for p in render_report(load_results(tmp_path), tmp_path / "b")}
    assert first == second
    assert set(first) == {"summary.txt", "provenance.txt", "dimension.tsv"}


def test_render_requires_a_step():
    with pytest.raises(ValueError):
        render_text({"provenance": {}})
