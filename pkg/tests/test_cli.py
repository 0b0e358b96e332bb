import json
import shutil

import numpy as np
import pytest
import yaml

from ucfm import data_path
from ucfm.cli import main, step_seed
from ucfm.config import ConfigError, load_config

FAST = {
    "seed": 7,
    "data": {"path": "mbs.csv", "log_columns": ["trig", "IR", "GB", "G2"]},
    "chain": {"iterations": 1500, "burn_in": 500},
    "dimension": {"max_m": 2, "splits": 1},
    "ucfm": {"m": 2, "anchors": [5, 3]},
    "models": {"path": "mbs_models.txt", "prior_draws": 20000},
}


@pytest.fixture
def workdir(tmp_path):
    for name in ("mbs.csv", "mbs_models.txt"):
        shutil.copy(data_path(name), tmp_path / name)
    return tmp_path


def _config(workdir, **changes):
    cfg = json.loads(json.dumps(FAST))
    for key, value in changes.items():
        if value is None:
            cfg.pop(key, None)
        else:
            cfg[key] = value
    path = workdir / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def _bundle(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


def test_all_equals_sequential_steps(workdir, capsys):
    cfg = _config(workdir)
    assert main(["all", "--config", cfg, "--out-dir", str(workdir / "a")]) == 0
    for step in ("preprocess", "select-dim", "fit", "compare", "report"):
        assert main([step, "--config", cfg, "--out-dir", str(workdir / "b")]) == 0, step
    a, b = _bundle(workdir / "a"), _bundle(workdir / "b")
    assert a == b
    for name in ("summary.txt", "dimension.tsv", "loadings.tsv", "comparison.tsv", "reproduced.tsv",
                 "residual.tsv", "provenance.txt", "draws.tsv", "results.json"):
        assert name in a
    summary = a["summary.txt"].decode()
    for section in ("Step 1", "Step 2", "Step 3", "Step 4"):
        assert section in summary


def test_master_seed_changes_results(workdir):
    cfg = _config(workdir)
    main(["preprocess", "--config", cfg, "--out-dir", str(workdir / "s")])
    no_ucfm = _config(workdir, ucfm=None)
    assert main(["fit", "--config", no_ucfm, "--out-dir", str(workdir / "s")]) == 2  # needs select-dim
    cfg2 = _config(workdir, ucfm={"m": 2, "anchors": [5, 3]})
    main(["fit", "--config", cfg2, "--out-dir", str(workdir / "s"), "--seed", "1"])
    one = (workdir / "s" / "draws.tsv").read_bytes()
    main(["fit", "--config", cfg2, "--out-dir", str(workdir / "s"), "--seed", "2"])
    assert (workdir / "s" / "draws.tsv").read_bytes() != one
    assert step_seed(1, "fit") != step_seed(2, "fit")


def test_chain_provenance_belongs_to_fit_step(workdir):
    cfg, out = _config(workdir), str(workdir / "c")
    main(["preprocess", "--config", cfg, "--out-dir", out])
    main(["fit", "--config", cfg, "--out-dir", out, "--chains", "2"])
    assert main(["report", "--config", cfg, "--out-dir", out]) == 0
    prov = json.loads((workdir / "c" / "results.json").read_text())["provenance"]
    assert prov["chain_by_step"]["fit"]["chains"] == 2
    assert "dimension" not in prov["chain_by_step"]


def test_existence_bound_rejected(workdir, capsys):
    cfg = _config(workdir, dimension={"max_m": 5})
    out = str(workdir / "o")
    assert main(["preprocess", "--config", cfg, "--out-dir", out]) == 0
    assert main(["select-dim", "--config", cfg, "--out-dir", out]) == 2
    assert "existence bound" in capsys.readouterr().err


def test_compare_before_fit_is_dependency_error(workdir, capsys):
    cfg = _config(workdir)
    assert main(["compare", "--config", cfg, "--out-dir", str(workdir / "o")]) == 2
    assert "run that step first" in capsys.readouterr().err


def test_bad_constraint_file_leaves_bundle_untouched(workdir, capsys):
    cfg = _config(workdir, ucfm={"m": 2, "anchors": [5, 3]})
    out = workdir / "o"
    for step in ("preprocess", "fit"):
        assert main([step, "--config", cfg, "--out-dir", str(out)]) == 0
    before = _bundle(out)
    (workdir / "mbs_models.txt").write_text("[model X]\nL[1,1] >> 0\n")
    assert main(["compare", "--config", cfg, "--out-dir", str(out)]) == 2
    err = capsys.readouterr().err
    assert "line 2, column 9" in err and "models.path" in err
    assert _bundle(out) == before


def test_constraint_on_zero_cell_names_model(workdir, capsys):
    cfg = _config(workdir)
    out = str(workdir / "o")
    for step in ("preprocess", "fit"):
        main([step, "--config", cfg, "--out-dir", out])
    (workdir / "mbs_models.txt").write_text("[model Z]\nL[1,1] > 0\nL[3,1] > 0\n")
    assert main(["compare", "--config", cfg, "--out-dir", out]) == 2
    assert "model Z, statement 2: cell L[3,1] is fixed at zero" in capsys.readouterr().err


def test_data_error_exit_code(workdir, capsys):
    (workdir / "mbs.csv").write_text("a,b,c\n1,2,x\n")
    cfg = _config(workdir)
    assert main(["preprocess", "--config", cfg, "--out-dir", str(workdir / "o")]) == 3
    assert "unparsable value 'x'" in capsys.readouterr().err


def test_config_errors_name_the_field(workdir, capsys):
    cfg = _config(workdir, chain={"iterations": 100, "burn_in": 200})
    assert main(["preprocess", "--config", cfg, "--out-dir", str(workdir / "o")]) == 2
    assert "chain.burn_in" in capsys.readouterr().err


@pytest.mark.parametrize("raw,field", [
    ({"data": {"path": 3}}, "data.path"),
    ({"data": {"path": "x.csv"}, "chain": {"iterations": "many"}}, "chain.iterations"),
    ({"data": {"path": "x.csv"}, "bogus": 1}, "bogus"),
    ({"data": {"path": "x.csv"}, "prior": {"psi_shape": -1}}, "prior"),
    ({"data": {"path": "x.csv"}, "ucfm": {"m": 2, "anchors": [1]}}, "ucfm.anchors"),
    ({"data": {"path": "x.csv"}, "ucfm": {"m": 1, "restrictions": ["L[1,1] = 3"]}}, "ucfm.restrictions"),
    ({"data": {"path": "x.csv"}, "models": {"prior_draws": 10}}, "models.prior_draws"),
])
def test_config_schema(tmp_path, raw, field):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.path == field


def test_config_restrictions_block(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"data": {"path": "x.csv"},
                                    "ucfm": {"m": 2, "restrictions": ["L[3,1] = 0", "L[5,2] = 0",
                                                                      "L[3,2] > 0", "L[5,1] > 0"]}}))
    cfg = load_config(path)
    assert cfg.ucfm.anchors() == [4, 2]
    assert cfg.data_path == tmp_path / "x.csv"


def test_machine_output_prints_tsv(workdir, capsys):
    cfg = _config(workdir, ucfm={"m": 2, "anchors": [5, 3]})
    out = str(workdir / "o")
    main(["preprocess", "--config", cfg, "--out-dir", out])
    capsys.readouterr()
    assert main(["fit", "--config", cfg, "--out-dir", out, "--machine-output"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "parameter\tmean\tlower\tupper"
    assert "L[3,1]\tNA\tNA\tNA" in text


def test_out_dir_from_environment(workdir, monkeypatch):
    monkeypatch.setenv("UCFM_OUT_DIR", str(workdir / "env"))
    assert main(["preprocess", "--config", _config(workdir)]) == 0
    assert (workdir / "env" / "results.json").exists()


@pytest.mark.slow
def test_bundled_example_end_to_end(tmp_path):
    assert main(["all", "--config", str(data_path("mbs.yaml")), "--out-dir", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "results.json").read_text())
    p2 = [r["pmp"] for r in res["dimension"]["rows"] if r["m"] == 2][0]
    assert p2 > 0.9
    assert res["comparison"]["best"] == "M3"
