import json

import numpy as np
import pytest

from mfrw.config import RunConfig, load_config, parse_config
from mfrw.errors import DataError, InvalidConfigError
from mfrw.io import (PATH_COLUMNS, dumps_json, fmt, path_rows, read_series_csv, read_table_csv,
                     table_rows, write_csv)
from mfrw.process import synth_fgn_exact
from mfrw.variations import structure_function


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, np.float64(np.pi)):
        assert float(fmt(x)) == float(x)
    assert fmt(7) == "7" and fmt(np.int64(3)) == "3"
    assert fmt(1 / 3) == "0.33333333333333331"


def test_write_csv_bytes(tmp_path):
    path = write_csv(tmp_path / "a.csv", ("x", "y"), [(1, 0.5), (2, 0.25)])
    assert path.read_bytes() == b"x,y\n1,0.5\n2,0.25\n"


def test_json_is_stable():
    obj = {"b": np.float64(1.5), "a": np.arange(3), "c": (np.bool_(True), None), "d": float("nan")}
    text = dumps_json(obj)
    assert text.endswith("\n")
    assert json.loads(text) == {"a": [0, 1, 2], "b": 1.5, "c": [True, None], "d": None}
    assert text == dumps_json(dict(reversed(list(obj.items()))))


def test_path_csv_round_trip(tmp_path):
    path = synth_fgn_exact(0.7, 64, 1)
    write_csv(tmp_path / "p.csv", PATH_COLUMNS, path_rows(path))
    cum = read_series_csv(tmp_path / "p.csv")
    assert np.allclose(cum, path.cumulative, rtol=0, atol=1e-15)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "j,t,increment,cumulative"
    assert lines[1].startswith("1,0.015625,")


@pytest.mark.parametrize("text", ["x\n1\n2\n3\n4\n", "1\n2\n3\n4\n"])
def test_single_column_series(tmp_path, text):
    f = tmp_path / "s.csv"
    f.write_text(text)
    assert read_series_csv(f).tolist() == [0, 1, 3, 6, 10]


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("j,t,increment,cumulative\n", "no data"),
    ("1\n2\n3\n", "power of two"),
    ("1\nabc\n", "line 2"),
    ("1\ninf\n", "line 2"),
    ("j,t,increment,cumulative\n1,0.5,0.1\n2,1,0.1,0.2\n", "line 2"),
    ("a,b\n1,2\n", "line 1"),
])
def test_series_errors(tmp_path, text, match):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(DataError, match=match):
        read_series_csv(f)


def test_table_round_trip(tmp_path):
    paths = [synth_fgn_exact(0.7, 64, s) for s in range(3)]
    table = structure_function(paths, [1.0, 2.0])
    write_csv(tmp_path / "t.csv", ("level", "tau", "p", "raw_mean", "count"), table_rows(table))
    back = read_table_csv(tmp_path / "t.csv")
    assert back.levels == table.levels and back.p_list == table.p_list
    assert back.raw_mean == table.raw_mean and back.count == table.count
    (tmp_path / "u.csv").write_text("level,tau,p,raw_mean,count\n1.5,0.5,2,1,2\n")
    with pytest.raises(DataError, match="line 2"):
        read_table_csv(tmp_path / "u.csv")


def test_config_defaults_and_parsing():
    cfg = parse_config("", env={})
    assert isinstance(cfg, RunConfig) and cfg.seed_source == "default"
    text = """
    # comment
    model.lambda2 = 1/10
    process.H = 0.7   # trailing
    statistics.p_list = 1, 2, 4
    statistics.levels = 3..6
    run.seed = 9
    cascade.l = none
    experiment.n_list = 8,9
    """
    cfg = parse_config(text, env={})
    assert cfg.model["lambda2"] == 0.1
    assert cfg.statistics["p_list"] == [1.0, 2.0, 4.0]
    assert cfg.statistics["levels"] == [3, 4, 5, 6]
    assert cfg.run["seed"] == 9 and cfg.seed_source == "config"
    assert cfg.cascade["l"] is None
    assert cfg.experiment["n_list"] == [8, 9]


def test_seed_environment_override():
    cfg = parse_config("run.seed = 9\n", env={"MFRW_SEED": "42"})
    assert cfg.run["seed"] == 42 and cfg.seed_source == "environment"
    assert parse_config("run.seed = 9\n", env={"MFRW_SEED": ""}).run["seed"] == 9
    with pytest.raises(InvalidConfigError):
        parse_config("", env={"MFRW_SEED": "x"})


@pytest.mark.parametrize("text,match", [
    ("model.sigma = 1\n", "line 1: unknown key"),
    ("run.seed = 1\nrun.seed = 2\n", "line 2: duplicate"),
    ("\nmodel.lambda2 = abc\n", "line 2: bad value"),
    ("model.lambda2\n", "line 1"),
    ("model.lambda2 = -1\n", "lambda2"),
    ("process.H = 1.2\n", "process.H"),
    ("process.m_n = 1000\n", "m_n"),
    ("cascade.n_cells = 6\n", "n_cells"),
    ("statistics.r_max = 3\n", "r_max"),
    ("run.replicas = 1\n", "replicas"),
    ("cascade.l = 2\n", "cascade.l"),
    ("process.refine = 2.5\n", "bad value"),
])
def test_config_errors(text, match):
    with pytest.raises(InvalidConfigError, match=match):
        parse_config(text, env={})


def test_load_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("model.lambda2 = 0.05\n")
    assert load_config(f, env={}).model["lambda2"] == 0.05
    assert load_config(None, env={}).model["lambda2"] == 0.1
