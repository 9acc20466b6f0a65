import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plasthom import io
from plasthom.cli import main
from plasthom.errors import InputError

from conftest import HOMOGENEOUS, LAMINATE

keys = st.text("abcdefgh", min_size=1, max_size=4)
leaves = st.one_of(st.integers(-5, 5), st.floats(-1, 1, allow_nan=False), st.text(max_size=3))
configs = st.dictionaries(keys, st.one_of(leaves, st.dictionaries(keys, leaves, max_size=3)), max_size=5)


@given(configs, st.randoms())
def test_hash_ignores_key_order(cfg, rnd):
    items = list(cfg.items())
    rnd.shuffle(items)
    assert io.config_hash(dict(items)) == io.config_hash(cfg)


def test_hash_sees_values():
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_field_roundtrip(tmp_path, rng):
    a = rng.normal(size=(5, 4, 3, 3))
    binp, head = io.save_field(tmp_path / "P", a, kind="plastic")
    assert binp.stat().st_size == a.size * 8
    b, meta = io.load_field(tmp_path / "P")
    np.testing.assert_array_equal(a, b)
    assert meta == {"kind": "plastic"}
    assert np.array_equal(np.fromfile(binp, "<f8"), a.ravel())


def test_csv_is_deterministic(tmp_path):
    rows = [{"x": 0.1 + 0.2, "ok": True, "n": 3}, {"x": 1e-300, "ok": False, "n": 4}]
    p1 = io.write_csv(tmp_path / "a.csv", rows)
    shuffled = [dict(reversed(list(r.items()))) for r in rows]
    p2 = io.write_csv(tmp_path / "b.csv", shuffled, columns=list(rows[0]))
    assert p1.read_bytes() == p2.read_bytes()
    back = io.read_csv(p1)
    assert float(back[0]["x"]) == 0.1 + 0.2 and back[1]["ok"] == "false"


def test_malformed_json_is_line_anchored(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"a": 1,\n "b": }\n')
    with pytest.raises(InputError, match=r"bad.json:2:7"):
        io.load_config(p)


@pytest.fixture
def cfg_path(tmp_path):
    def write(model, **extra):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"model": model, **extra}))
        return str(p)
    return write


def run(tmp_path, name, *args):
    out = tmp_path / name
    return main([*args, "--out", str(out)]), out


def manifests(out):
    return [p for p in out.rglob("*.json") if p.name == io.MANIFEST]


def test_whom_command(tmp_path, cfg_path, capsys):
    cfg = cfg_path(HOMOGENEOUS, cell={"lambdas": [1, 2], "resolution": 8})
    code, out = run(tmp_path, "w", "whom", "--config", cfg)
    assert code == 0
    rows = io.read_csv(out / "whom.csv")
    assert float(rows[-1]["value"]) == pytest.approx(3.0)
    assert len(manifests(out)) == 1
    m = io.RunManifest.read(out)
    assert m.exit_code == 0 and sorted(m.outputs) == ["whom.csv", "whom.json"]
    code2, out2 = run(tmp_path, "w2", "whom", "--config", cfg)
    assert (out2 / "whom.csv").read_bytes() == (out / "whom.csv").read_bytes()


def test_whom_input_errors(tmp_path, cfg_path, capsys):
    cfg = cfg_path(HOMOGENEOUS)
    code, out = run(tmp_path, "d0", "whom", "--config", cfg, "--G", *["1", "0", "0", "0", "0", "0", "0", "0", "1"])
    assert code == 1
    assert "NonPositiveDeterminant" in capsys.readouterr().err
    assert io.RunManifest.read(out).status == "input-error"
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  oops\n}")
    code, _ = run(tmp_path, "bad", "whom", "--config", str(bad))
    assert code == 1
    assert "bad.json:2:3" in capsys.readouterr().err
    code, _ = run(tmp_path, "F8", "whom", "--config", cfg, "--F", "1", "2")
    assert code == 1
    assert main(["whom"]) == 1


def test_geodesic_and_validate(tmp_path, cfg_path, capsys):
    cfg = cfg_path(LAMINATE)
    code, out = run(tmp_path, "g", "geodesic", "--config", cfg)
    assert code == 0
    assert json.loads((out / "geodesic.json").read_text())["length"] == 0.0
    nodes, _ = io.load_field(out / "fields" / "geodesic_nodes")
    assert nodes.shape == (33, 3, 3)
    code, out = run(tmp_path, "v", "validate", "--config", cfg, "--samples", "200")
    assert code == 0
    obs = json.loads((out / "validate.json").read_text())["observed"]
    assert {"c1", "c2", "c3"} <= set(obs)
    cubic = {**HOMOGENEOUS, "W": {"kind": "homogeneous", "a": 1.0, "exponent": 3, "constants": [1, 2, 3]}}
    code, out = run(tmp_path, "v3", "validate", "--config", cfg_path(cubic))
    assert code == 1
    assert json.loads((out / "validate.json").read_text())["passed"] is False


def test_gluecheck_command(tmp_path, cfg_path, capsys):
    cfg = cfg_path(LAMINATE, gluing={"trials": 1})
    code, out = run(tmp_path, "fe", "gluecheck", "--config", cfg, "--sigma", "0.5")
    assert code == 0
    summary = json.loads((out / "gluecheck.json").read_text())
    assert summary["checks"] == summary["satisfied"] == 1


def test_gamma_command_is_reproducible(tmp_path, cfg_path, capsys):
    cfg = cfg_path(HOMOGENEOUS, experiment={"eps_ladder": [0.5, 0.25], "table_nodes": 3})
    code, out = run(tmp_path, "g1", "gamma", "--config", cfg)
    assert code == 0
    code, out2 = run(tmp_path, "g2", "gamma", "--config", cfg, "--jobs", "2")
    for name in ("gamma.csv", "gaps.csv"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()
    gaps = io.read_csv(out / "gaps.csv")
    assert [float(r["eps"]) for r in gaps] == [0.5, 0.25]
    assert len(manifests(out)) == 1


def test_bad_log_level(tmp_path, cfg_path, monkeypatch, capsys):
    monkeypatch.setenv("PLASTHOM_LOG", "loud")
    assert main(["validate", "--config", cfg_path(LAMINATE), "--out", str(tmp_path / "x")]) == 1
