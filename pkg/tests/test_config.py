from pathlib import Path

import pytest

from oir import config as rc

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_validate(name):
    cfg = rc.load(CONFIGS / name)
    assert cfg.train.iterations >= 1


def test_defaults_from_empty_document():
    cfg = rc.build({})
    assert cfg.train.delta == 0.9 and cfg.train.buffer_capacity == 10
    assert cfg.env.height == 16 and cfg.embedder.dimension == 256
    assert cfg.output_dir == "runs"


def test_mode_shorthand():
    assert rc.build({"mode": "cosine-baseline"}).train.mode == "cosine-baseline"


@pytest.mark.parametrize("doc,match", [
    ({"trian": {}}, "top-level"),
    ({"train": {"learning_rate": 1}}, "unknown keys"),
    ({"train": {"gamma": 1.5}}, "gamma"),
    ({"mode": "magic"}, "mode"),
    ({"env": []}, "mapping"),
    ({"embedder": {"dimension": 0}}, "dimension"),
])
def test_invalid_documents(doc, match):
    with pytest.raises(rc.ConfigError, match=match):
        rc.build(doc)


def test_overrides():
    cfg = rc.build({"train": {"lr": 1e-5}}, ["train.lr=3e-4", "num_envs=4", "embedder.dimension=64",
                                             "eval_targets=[collect wood]", "output_dir=elsewhere"])
    assert cfg.train.lr == 3e-4 and cfg.train.num_envs == 4 and cfg.embedder.dimension == 64
    assert cfg.train.eval_targets == ("collect wood",) and cfg.output_dir == "elsewhere"


@pytest.mark.parametrize("item,match", [
    ("lr", "key=value"),
    ("nothing=1", "unknown key"),
    ("endpoint=http://x", "ambiguous"),
    ("train.nothing=1", "unknown key"),
    ("model.lr=1", "unknown section"),
])
def test_bad_overrides(item, match):
    with pytest.raises(rc.ConfigError, match=match):
        rc.build({}, [item])


def test_load_errors(tmp_path):
    with pytest.raises(rc.ConfigError, match="cannot read"):
        rc.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [unclosed\n")
    with pytest.raises(rc.ConfigError, match="YAML"):
        rc.load(bad)
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(rc.ConfigError, match="mapping"):
        rc.load(bad)


def test_dump_round_trip(tmp_path):
    cfg = rc.build({"mode": "oir", "train": {"instructions": ["collect wood"], "lr": 2e-4}})
    p = tmp_path / "c.yaml"
    p.write_text(cfg.dumps())
    assert rc.load(p) == cfg
