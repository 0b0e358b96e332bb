import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ucfm.dsl import DslError
from ucfm.types import (
    ComparisonResult, DataError, Dataset, FactorParams, PosteriorDraws, UcfmSpec, parse_spec, render_spec,
    validate_spec,
)


def _data(p, n=20, seed=0):
    return Dataset.from_array(np.random.default_rng(seed).normal(size=(n, p)))


def test_existence_bound_examples():
    assert validate_spec(UcfmSpec.from_anchors([0, 1, 2, 3]), _data(8)) == []
    problems = validate_spec(UcfmSpec.from_anchors([0, 1, 2, 3, 4]), _data(8))
    assert any("existence bound" in v for v in problems)


def test_cell_conflict_reported():
    spec = UcfmSpec(1, frozenset({(0, 0)}), frozenset({(0, 0)}))
    assert any("cell conflict" in v for v in validate_spec(spec, _data(4)))


def test_minimal_conditions_need_anchor_per_factor():
    spec = UcfmSpec(2, frozenset({(0, 1)}), frozenset({(0, 0)}))
    assert any("minimal conditions" in v for v in validate_spec(spec, _data(8)))


def test_anchor_spec_matches_reported_base_model():
    # factor 1 anchored on row 5, factor 2 on row 3 (1-based)
    spec = UcfmSpec.from_anchors([4, 2])
    assert spec.zero_cells == {(2, 0), (4, 1)}
    assert spec.positive_cells == {(4, 0), (2, 1)}
    assert render_spec(spec) == "[ucfm m=2]\nL[3,1] = 0\nL[5,2] = 0\nL[3,2] > 0\nL[5,1] > 0"
    assert spec.anchors() == [4, 2]


@given(st.lists(st.integers(0, 9), min_size=1, max_size=4, unique=True))
def test_spec_text_round_trip(anchors):
    spec = UcfmSpec.from_anchors(anchors)
    assert parse_spec(render_spec(spec)) == spec


def test_parse_spec_errors_are_positioned():
    with pytest.raises(DslError) as exc:
        parse_spec("[ucfm m=2]\nL[3,1] = 1")
    assert exc.value.line == 2
    with pytest.raises(DslError):
        parse_spec("ucfm 2")


def test_dataset_rejects_non_finite():
    with pytest.raises(DataError):
        Dataset.from_array([[1.0, np.nan], [2.0, 3.0]])


def test_csv_round_trip(tmp_path):
    d = Dataset.from_array(np.random.default_rng(1).normal(size=(5, 3)), ["a", "b", "c"])
    d.write_csv(tmp_path / "x.csv")
    back = Dataset.read_csv(tmp_path / "x.csv")
    assert back.names == ["a", "b", "c"]
    np.testing.assert_array_equal(back.values, d.values)


def test_csv_errors_name_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,NA\n")
    with pytest.raises(DataError, match=r"row 2, column 'b'"):
        Dataset.read_csv(path)
    path.write_text("a,b\n1,2,3\n")
    with pytest.raises(DataError, match="row 1 has 3 fields"):
        Dataset.read_csv(path)


def test_factor_params_violations():
    spec = UcfmSpec.from_anchors([0, 1])
    lam = np.array([[0.5, 0.0], [0.0, 0.4], [0.3, 0.2]])
    good = FactorParams(np.zeros(3), lam, np.ones(3), np.array([[1, 0.2], [0.2, 1]]))
    assert good.violations(spec) == []
    bad = FactorParams(np.zeros(3), lam * [[-1, 1]] + [[0, 0.1], [0, 0], [0, 0]], np.array([1, 0, 1.0]),
                       np.array([[1, 0.2], [0.2, 1.1]]))
    text = " ".join(bad.violations(spec))
    for needle in ("psi", "diagonal", "L[1,1] must be positive", "L[1,2] must be exactly 0"):
        assert needle in text


def test_draw_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    spec = UcfmSpec.from_anchors([0, 2])
    g, p = 7, 4
    lam = rng.normal(size=(g, p, 2)) * spec.free_mask(p)
    lam[:, 0, 0] = np.abs(lam[:, 0, 0])
    lam[:, 2, 1] = np.abs(lam[:, 2, 1])
    r = rng.uniform(-0.5, 0.5, g)
    phi = np.stack([np.array([[1, x], [x, 1]]) for x in r])
    draws = PosteriorDraws(rng.normal(size=(g, p)), lam, rng.uniform(0.1, 1, (g, p)), phi, spec, 3, 10,
                           phi_step=np.float64(0.25))
    draws.write_tsv(tmp_path / "d.tsv")
    header = (tmp_path / "d.tsv").read_text().splitlines()[1].split("\t")
    assert header[:p] == [f"mu[{j + 1}]" for j in range(p)]
    assert header[-1] == "Phi[2,1]"
    back = PosteriorDraws.read_tsv(tmp_path / "d.tsv")
    for name in ("mu", "Lambda", "psi", "Phi"):
        np.testing.assert_array_equal(getattr(back, name), getattr(draws, name))
    assert back.spec == spec and back.seed == 3 and back.phi_step == 0.25


def test_comparison_result_validates_probabilities():
    ComparisonResult(("a", "b"), np.array([1.0, 2.0]), np.array([0.5, 0.5]), np.array([1 / 3, 2 / 3]))
    with pytest.raises(ValueError):
        ComparisonResult(("a", "b"), np.array([1.0, 2.0]), np.array([0.5, 0.6]), np.array([1 / 3, 2 / 3]))
