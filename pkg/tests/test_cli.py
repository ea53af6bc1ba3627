import json
import os

import numpy as np
import pytest

from plyhomog.cli import config_from_dict, main, parse_config, worker_count
from plyhomog.errors import ParseError, ValidationError
from plyhomog.outputs import read_csv

BASE = """
[geometry]
eps = 0.25
a = 0.2
gamma = {{ kind = "linear", c0 = 0.0, c1 = 3.141592653589793 }}
{extra_geometry}

[numerics]
n_cell = 32
n_effective_lattice = 2
dt = 0.01
n_macro = 8
n_snapshots = 3

[study]
eps_list = {eps_list}
T = 0.02
n_samples = 20000

[io]
output_dir = "{out}"
seed = 5
"""


def write_config(tmp_path, name="run.toml", extra_geometry="", eps_list="[0.25, 0.125]", text=None):
    path = tmp_path / name
    out = (tmp_path / "out").as_posix()
    path.write_text(text if text is not None else
                    BASE.format(out=out, extra_geometry=extra_geometry, eps_list=eps_list))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    cap = capsys.readouterr()
    return code, cap.out.strip(), cap.err.strip()


def test_hash_ignores_key_order_and_comments(tmp_path):
    a = write_config(tmp_path, "a.toml")
    text = open(a).read().replace("eps = 0.25\na = 0.2", "# comment\na = 0.2   # radius\neps = 0.25")
    b = write_config(tmp_path, "b.toml", text=text)
    assert parse_config(a).hash == parse_config(b).hash
    assert parse_config(a).hash != parse_config(a, seed=6).hash
    assert parse_config(a).hash == parse_config(a, out=str(tmp_path / "elsewhere")).hash


def test_parse_error_position(tmp_path, capsys):
    path = write_config(tmp_path, text="[geometry]\neps = = 1\n")
    with pytest.raises(ParseError) as info:
        parse_config(path)
    assert info.value.line == 2
    code, _, err = run(["geometry", path], capsys)
    assert code == 2 and json.loads(err)["line"] == 2


def test_validation_errors(tmp_path, capsys):
    with pytest.raises(ValidationError):
        config_from_dict({"geometry": {"bogus": 1}})
    with pytest.raises(ValidationError):
        config_from_dict({"geometry": {"a": 0.5}})
    with pytest.raises(ValidationError):
        config_from_dict({"study": {"r": 0.5}}, command="scaling")
    config_from_dict({"study": {"r": 0.5}}, command="geometry")
    path = write_config(tmp_path, extra_geometry="rho = { value = 3.0 }")
    code, _, err = run(["geometry", path], capsys)
    assert code == 2 and json.loads(err)["error"] == "ValidationError"


def test_io_error_exit_code(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    path = write_config(tmp_path)
    code, _, err = run(["geometry", path, "--out", str(blocker / "sub")], capsys)
    assert code == 4 and json.loads(err)["error"] == "IoError"


def test_worker_count(monkeypatch):
    monkeypatch.setenv("PLYHOMOG_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("PLYHOMOG_THREADS", "zero")
    with pytest.raises(ValidationError):
        worker_count()


def test_geometry_command(tmp_path, capsys):
    code, out, _ = run(["geometry", write_config(tmp_path)], capsys)
    assert code == 0
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["indicator_difference"]["eps"] == 0.25
    manifest = json.load(open(os.path.join(out, "manifest.json")))["files"]
    assert set(manifest) == {"lattice.csv", "config.json", "summary.json"}


def test_cell_twice_hits_cache(tmp_path, capsys):
    path = write_config(tmp_path)
    code, out, _ = run(["cell", path], capsys)
    assert code == 0 and not json.load(open(os.path.join(out, "summary.json")))["cache_hit"]
    code, out, _ = run(["cell", path], capsys)
    s = json.load(open(os.path.join(out, "summary.json")))
    assert s["cache_hit"] and s["cache_hits"] == 8
    _, rows = read_csv(os.path.join(out, "effective.csv"))
    assert len(rows) == 8


def test_converge_half_box(tmp_path, capsys):
    path = write_config(tmp_path, extra_geometry="domain_hi = [0.5, 0.5, 0.5]")
    code, out, _ = run(["converge", path], capsys)
    assert code == 0
    fields, rows = read_csv(os.path.join(out, "convergence.csv"))
    assert len(rows) == 2 and "rel_l2_error" in fields and rows[0]["seed"] == 5
    assert os.path.exists(os.path.join(out, "convergence.gp"))


def test_micro_and_macro_snapshots(tmp_path, capsys):
    path = write_config(tmp_path)
    code, out, _ = run(["micro", path], capsys)
    assert code == 0
    meta = json.load(open(os.path.join(out, "snapshots", "c_002.json")))
    assert meta["t"] == pytest.approx(0.02) and meta["tag"] == "micro"
    c = np.fromfile(os.path.join(out, "snapshots", "c_002.bin"), dtype="<f8").reshape(meta["shape"])
    assert c.shape == (32, 32, 32) and c.max() == meta["max"]
    code, out, _ = run(["macro", path], capsys)
    assert code == 0
    _, rows = read_csv(os.path.join(out, "monitors.csv"))
    assert rows[-1]["t"] == pytest.approx(0.02)


def test_unfold_check_gap(tmp_path, capsys):
    text = open(write_config(tmp_path)).read().replace("eps_list = [0.25, 0.125]", "eps_list = [0.125, 0.0625, 0.03125]")
    text = text.replace("[numerics]", "[numerics]\ny_grid = 4")
    path = write_config(tmp_path, "u.toml", text=text)
    code, out, _ = run(["unfold-check", path], capsys)
    assert code == 0
    _, rows = read_csv(os.path.join(out, "boundary_limit.csv"))
    assert rows[-1]["rel_gap"] <= 0.02
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["verdicts"]["boundary_limit"]["pass"]


def test_scaling_rerun_byte_identical(tmp_path, capsys):
    text = open(write_config(tmp_path)).read().replace("eps_list = [0.25, 0.125]", "eps_list = [0.125, 0.0625]")
    path = write_config(tmp_path, "s.toml", text=text)
    code, out, _ = run(["scaling", path], capsys)
    first = open(os.path.join(out, "scaling.csv"), "rb").read()
    code2, out2, _ = run(["scaling", path], capsys)
    assert code == code2 == 0 and out == out2
    assert open(os.path.join(out, "scaling.csv"), "rb").read() == first
    code3, out3, _ = run(["scaling", path, "--seed", "6"], capsys)
    assert out3 != out
