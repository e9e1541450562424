import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mewguide.config import (EXPERIMENTS, ExperimentConfig, apply_overrides, default_config,
                             load_config)


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_round_trip(name):
    cfg = default_config(name)
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert json.loads(cfg.to_json())["format_version"] == 1


def test_defaults_per_system():
    assert default_config("obs_toy").optimizer.gamma == 1e-3
    assert default_config("obs_toy").optimizer.budget == 64
    moons = default_config("path_moons")
    assert moons.optimizer.gamma == 0.03 and moons.optimizer.budget == 50
    assert moons.optimizer.space["bw_init"][2] == "log"
    assert default_config("bounds_check").system.name == "gaussian_oracle"
    with pytest.raises(ValueError):
        default_config("chignolin")


def test_file_then_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"sampler": {"n": 77, "kind": "ode"}}))
    cfg = load_config(path, "obs_toy")
    assert cfg.sampler.n == 77 and cfg.sampler.kind == "ode" and cfg.sampler.n_steps == 500
    cfg = apply_overrides(cfg, ["sampler.n=5", 'guidance.type="none"'])
    assert cfg.sampler.n == 5 and cfg.guidance.type == "none"


def test_experiment_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"experiment": "path_moons"}))
    assert load_config(path).system.name == "three_moons"


def test_override_errors():
    cfg = default_config()
    with pytest.raises(KeyError):
        apply_overrides(cfg, ["sampler.nope=3"])
    with pytest.raises(ValueError):
        apply_overrides(cfg, ["sampler.n"])
    with pytest.raises(ValueError):
        apply_overrides(cfg, ["optimizer.gamma=-1"])
    with pytest.raises(ValueError):
        apply_overrides(cfg, ["model.beta_min=30"])


def test_search_space_override():
    cfg = apply_overrides(default_config(), ['optimizer.space.kappa=[0.5, 3.0, "log"]'])
    assert cfg.optimizer.space["kappa"] == [0.5, 3.0, "log"]
    with pytest.raises(ValueError):
        apply_overrides(default_config(), ['optimizer.space.kappa=[3.0, 0.5]'])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10_000), st.floats(0.0, 10.0), st.sampled_from(["sde", "ode"]))
def test_overrides_round_trip(n, gamma, kind):
    cfg = apply_overrides(default_config(), [f"sampler.n={n}", f"optimizer.gamma={gamma!r}",
                                             f'sampler.kind="{kind}"'])
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    assert (cfg.sampler.n, cfg.optimizer.gamma, cfg.sampler.kind) == (n, gamma, kind)
