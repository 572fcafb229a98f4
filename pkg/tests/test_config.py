from pathlib import Path

import pytest
import yaml

from editlab.config import ProjectConfig, DEFAULT_CONFIG
from editlab.editors import EditMethod
from editlab.errors import ConfigError
from editlab.harness import PRE_EDIT


def test_defaults():
    config = ProjectConfig()
    assert config.get("model/n_layers") == 12
    assert config.get("run/editors") == ["ftl", "lora", "adalora", "grace", "adalora_l"]
    assert config.path("checkpoint") == Path(".") / "model.ckpt"
    assert config.model_config(100).vocab_size == 100
    assert config.bench_settings(seed=4).seed == 4


def test_load_and_merge(tmp_path):
    d = {"schema_version": 1,
         "paths": {"workdir": str(tmp_path / "run")},
         "model": {"n_layers": 4},
         "editors": {"adalora": {"epochs": 7}, "AdaLoRA-L": {"n_specific": 2}},
         "run": {"editors": ["pre_edit", "adalora", "adalora_l"], "n_runs": 2}}
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(d))

    config = ProjectConfig.load(path)
    assert config.get("model/n_layers") == 4
    assert config.get("model/d_model") == DEFAULT_CONFIG["model"]["d_model"]
    assert config.path("benchmark") == tmp_path / "run" / "bench" / "benchmark.jsonl"
    assert config.editor_config("adalora").epochs == 7
    assert config.editor_config(EditMethod.ADALORA_L).n_specific == 2

    rc = config.run_config()
    assert rc.editors[0] == PRE_EDIT
    assert [e.label for e in rc.editors[1:]] == ["adalora", "adalora_l"]
    assert rc.n_runs == 2
    assert rc.editors[1].epochs == 7
    assert rc.editors[2].n_specific == 2
    assert config.editor_configs(["PRE_EDIT", "AdaLoRA-L"])[1] == config.editor_config("adalora_l")
    assert config.run_config(n_runs=1, base_seed=3).seeds == [3]


def test_workdir_override_and_hash(tmp_path):
    a = ProjectConfig(workdir=tmp_path / "a")
    b = ProjectConfig(workdir=tmp_path / "b")
    assert a.workdir == tmp_path / "a"
    assert a.config_hash() == b.config_hash()
    c = ProjectConfig({"schema_version": 1, "training": {"epochs": 1}})
    assert c.config_hash() != a.config_hash()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ProjectConfig({"schema_version": 2})
    with pytest.raises(ConfigError):
        ProjectConfig({"model": {"n_layers": 4}})
    with pytest.raises(ConfigError):
        ProjectConfig({"schema_version": 1, "editors": {"rome": {}}})
    with pytest.raises(ConfigError):
        ProjectConfig({"schema_version": 1, "editors": {"lora": {"depth": 3}}})

    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        ProjectConfig.load(path)
