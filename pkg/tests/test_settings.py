import json

import pytest

from helpers.errors import ConfigError
from helpers.settings import ModelConfig, RunConfig, TrainConfig, load_run_config


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ('MUSTANG_K', 'MUSTANG_TRAIN__LR', 'MUSTANG_MODEL__HIDDEN_DIM', 'MUSTANG_STAIN'):
        monkeypatch.delenv(name, raising=False)


def test_defaults():
    cfg = load_run_config()
    assert cfg.k == 5
    assert cfg.model == ModelConfig()
    assert cfg.train == TrainConfig()
    assert cfg.train.lr == 1e-4 and cfg.train.beta2 == 0.98 and cfg.train.eps == 1e-9
    assert cfg.model.pooling_ratio == 0.8 and cfg.model.hidden_dim == 512


def test_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv('MUSTANG_K', '7')
    monkeypatch.setenv('MUSTANG_TRAIN__LR', '0.01')
    assert load_run_config().k == 7

    config_file = tmp_path / 'run.json'
    config_file.write_text(json.dumps({'k': 9, 'model': {'hidden_dim': 16}}))
    from_file = load_run_config(config_file)
    assert from_file.k == 9
    assert from_file.model.hidden_dim == 16
    assert from_file.train.lr == 0.01

    flagged = load_run_config(config_file, {'k': 11, 'model': {'heads': None}, 'train': {'epochs': 3}})
    assert flagged.k == 11
    assert flagged.model.heads == 2
    assert flagged.model.hidden_dim == 16
    assert flagged.train.epochs == 3


def test_out_of_range_values():
    with pytest.raises(ConfigError):
        load_run_config(overrides={'model': {'pooling_ratio': 1.5}})
    with pytest.raises(ConfigError):
        load_run_config(overrides={'model': {'mlp_hidden': [32]}})
    with pytest.raises(ConfigError):
        load_run_config(overrides={'k': 0})
    with pytest.raises(ConfigError):
        load_run_config(overrides={'n_jobs': 0})


def test_unknown_model_field():
    with pytest.raises(ConfigError):
        load_run_config(overrides={'model': {'dropout': 0.5}})


def test_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / 'missing.json')
    broken = tmp_path / 'broken.json'
    broken.write_text('{k: ')
    with pytest.raises(ConfigError):
        load_run_config(broken)


def test_dump_is_json_ready():
    dumped = RunConfig().dump()
    json.dumps(dumped)
    assert dumped['model']['mlp_hidden'] == [256, 128]
    assert dumped['out'] == 'runs/latest'
