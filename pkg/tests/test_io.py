import json

import numpy as np
import pytest

from hopfield_stein import io
from hopfield_stein.free_energy import find_lambda_max
from hopfield_stein.model import ModelParams, generate_patterns
from hopfield_stein.sampling import ChainConfig, enumerate_distribution, run_chains


def test_defaults_and_seed_derivation():
    cfg = io.load_config()
    assert cfg["schema_version"] == io.SCHEMA_VERSION
    seeds = cfg["seeds"]
    assert seeds["patterns"] == io.derive_seed(0, io.STREAM_PATTERNS)
    assert len({seeds["patterns"], seeds["chains"], seeds["v"]}) == 3
    assert io.load_config(seed=7)["seeds"]["chains"] == io.derive_seed(7, io.STREAM_CHAINS)
    assert io.derive_seed(5, 64) == io.derive_seed(5, 64) != io.derive_seed(5, 128)


def test_explicit_seeds_kept(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seeds": {"master": 1, "patterns": 42},
                                "model": {"n": 10}}))
    cfg = io.load_config(path)
    assert cfg["seeds"]["patterns"] == 42 and cfg["model"]["n"] == 10
    assert cfg["model"]["beta"] == io.DEFAULT_CONFIG["model"]["beta"]
    # --seed replaces every seed
    assert io.load_config(path, seed=3)["seeds"]["patterns"] == io.derive_seed(3, 1)


@pytest.mark.parametrize("content", ["[1, 2]", "{not json", '{"schema_version": 9}',
                                     '{"mode": "quantum"}',
                                     '{"seeds": {"master": -1}}',
                                     '{"seeds": {"master": 1.5}}'])
def test_bad_configs(tmp_path, content):
    path = tmp_path / "c.json"
    path.write_text(content)
    with pytest.raises(io.ConfigError):
        io.load_config(path)


def test_missing_config(tmp_path):
    with pytest.raises(io.ConfigError):
        io.load_config(tmp_path / "nope.json")


def test_manifest_reloads_embedded_config(tmp_path):
    cfg = io.load_config(seed=11)
    path = io.write_json(tmp_path / "m.json", io.manifest("sample", cfg, ["b", "a"]))
    assert io.read_json(path)["outputs"] == ["a", "b"]
    assert io.load_config(path) == cfg


def test_model_params_and_chain_config():
    cfg = io.load_config()
    cfg["model"].update(n=20, p=2, k=2)
    params = io.model_params(cfg)
    assert (params.n, params.p, params.k) == (20, 2, 2)
    assert io.model_params(cfg, 40).n == 40
    cfg["chain"]["conditioning"] = {"radius": 0.3}
    cc = io.chain_config(cfg, 5, default_center=np.array([0.5, 0.0]))
    np.testing.assert_array_equal(cc.conditioning.center, [0.5, 0.0])
    assert cc.seed == 5 and cc.n_chains == 4
    del cfg["model"]["n"]
    with pytest.raises(io.ConfigError):
        io.model_params(cfg)


def test_json_is_canonical():
    obj = {"b": np.float64(0.1), "a": [np.int64(3), np.array([1.5, 2.0])],
           "c": float("nan"), "d": np.bool_(True)}
    text = io.dumps(obj)
    assert text == io.dumps(json.loads(text))
    back = json.loads(text)
    assert list(back) == ["a", "b", "c", "d"]
    assert back["b"] == 0.1 and back["c"] is None and back["d"] is True


def test_csv_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=50) * 10.0 ** rng.integers(-30, 30, size=50)
    io.write_csv(tmp_path / "x.csv", ["v", "flag", "note"],
                 [[v, i % 2 == 0, None] for i, v in enumerate(vals)])
    header, rows = io.read_csv(tmp_path / "x.csv")
    assert header == ["v", "flag", "note"]
    np.testing.assert_array_equal([float(r[0]) for r in rows], vals)
    assert rows[0][1:] == ["1", ""]
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(ValueError):
        io.read_csv(tmp_path / "empty.csv")


def test_patterns_round_trip(tmp_path):
    pats = generate_patterns(ModelParams(30, 3, 1.0), 123)
    csv_path, side = io.write_patterns(tmp_path / "patterns.csv", pats)
    assert side.name == "patterns.json"
    back = io.read_patterns(csv_path)
    np.testing.assert_array_equal(back.xi, pats.xi)
    assert back.seed == 123
    (tmp_path / "bad.csv").write_text("a,b\n1,1\n")
    with pytest.raises(ValueError):
        io.read_patterns(tmp_path / "bad.csv")


def test_batch_table_round_trip(tmp_path):
    params = ModelParams(24, 2, 1.5, 0.2, k=2)
    xi = generate_patterns(params, 0)
    cent = find_lambda_max(xi, params)
    mc = run_chains(xi, params, cent, ChainConfig(n_samples=200, seed=1))
    io.write_batch(tmp_path / "mc.csv", mc)
    tab = io.read_batch_table(tmp_path / "mc.csv")
    np.testing.assert_array_equal(tab["w"], mc.w)
    np.testing.assert_array_equal(tab["chain"], mc.chain)
    small = params.with_n(10)
    xs = generate_patterns(small, 0)
    ex = enumerate_distribution(xs, small, find_lambda_max(xs, small))
    io.write_batch(tmp_path / "ex.csv", ex)
    tab = io.read_batch_table(tmp_path / "ex.csv")
    np.testing.assert_array_equal(tab["prob"], ex.weights)
