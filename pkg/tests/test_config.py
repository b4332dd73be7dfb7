import json
from pathlib import Path

import pytest

from mttrack.commands.synth import load_benchmark_spec
from mttrack.core.config import AblationFlags, RunConfig, Settings, TrackerConfig
from mttrack.core.exceptions import ConfigurationException

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload) if not isinstance(payload, str) else payload)
    return str(path)


def test_defaults():
    run = RunConfig.load()
    cfg = run.tracker
    assert (cfg.template_size, cfg.search_size, cfg.channels, cfg.n_hist, cfg.tau) == (127, 287, 192, 3, 3.0)
    assert cfg.score_size == 21
    assert cfg.search_context == pytest.approx(287 / 127)
    assert cfg.ablation.name == "full"
    assert run.train.epochs == 20


def test_file_then_overrides(tmp_path):
    path = write(tmp_path, {"tracker": {"tau": 2.0, "n_hist": 4}, "threads": 2})
    run = RunConfig.load(path, {"tracker.tau": 1.5, "tracker.seed": None, "threads": 8})
    assert run.tracker.tau == 1.5
    assert run.tracker.n_hist == 4
    assert run.threads == 8


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigurationException) as exc:
        RunConfig.load(write(tmp_path, {"tracker": {"taus": 1.0}}))
    assert exc.value.user_message == "Unknown config key 'tracker.taus'."
    assert exc.value.exit_code == 1


def test_invalid_geometry(tmp_path):
    with pytest.raises(ConfigurationException):
        RunConfig.load(write(tmp_path, {"tracker": {"search_size": 290}}))


def test_invalid_seed():
    with pytest.raises(ConfigurationException):
        RunConfig.load(overrides={"tracker.seed": -1})


@pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
def test_malformed_files(tmp_path, content):
    with pytest.raises(ConfigurationException):
        RunConfig.load(write(tmp_path, content))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationException):
        RunConfig.load(str(tmp_path / "nope.json"))


def test_echo_round_trips(tmp_path):
    run = RunConfig.load(overrides={"tracker.tau": 2.5})
    target = run.echo(str(tmp_path / "out"))
    assert RunConfig.load(str(target)) == run


def test_ablation_presets():
    baseline = AblationFlags.preset("baseline")
    assert not baseline.temporal_correlation and not baseline.mutual_transformer
    assert AblationFlags(filter=False, encoder=False).name == "custom"
    with pytest.raises(ConfigurationException):
        AblationFlags.preset("everything")


def test_channels_must_split_into_heads():
    with pytest.raises(ValueError):
        TrackerConfig(channels=20, heads=6)


def test_settings_read_the_environment(monkeypatch):
    monkeypatch.setenv("MTTRACK_THREADS", "4")
    monkeypatch.setenv("MTTRACK_LOG_LEVEL", "DEBUG")
    settings = Settings(_env_file=None)
    assert settings.THREADS == 4
    assert settings.LOG_LEVEL == "DEBUG"


@pytest.mark.parametrize("name", ["toy.json", "smoke.json"])
def test_shipped_run_configs_load(name):
    run = RunConfig.load(str(CONFIGS / name))
    assert run.tracker.score_size == 6


@pytest.mark.parametrize("name", ["synth.json", "occlusion.json"])
def test_shipped_synthetic_specs_load(name):
    assert load_benchmark_spec(str(CONFIGS / name)).expand()
