import os

import pytest

from msoe.config import CONFIG_REFERENCE, EXPERIMENT_DEFAULTS, ConfigError, load_config, parse_config

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(CONFIGS) if f.endswith(".cfg")))
def test_shipped_configs_load(name):
    cfg = load_config(os.path.join(CONFIGS, name))
    assert cfg.sha256


def test_markov_sim_reproduces_model():
    cfg = load_config(os.path.join(CONFIGS, "markov_sim.cfg"))
    assert cfg.model.kind == "markov"
    assert float(cfg.model.transitions[("1", "2")](20.0)) == pytest.approx(0.10151905000997836, rel=1e-13)
    assert cfg.simulation.censoring.to_dict() == {"law": "uniform", "lo": 10.0, "hi": 40.0}
    assert cfg.simulation.n == 100_000 and cfg.grid.M == 40


def test_missing_master_seed():
    text = "model:\n  preset: markov_illness_death\nsimulation:\n  n: 10\n"
    with pytest.raises(ConfigError, match="master_seed") as err:
        parse_config(text, "x.cfg")
    assert "x.cfg:3" in str(err.value)


def test_markov_with_duration_names_line():
    text = 'model:\n  states: ["1", "2"]\n  transitions:\n    "1->2": "0.1 + 0.01*u"\n'
    with pytest.raises(ConfigError, match="duration") as err:
        parse_config(text, "m.cfg")
    assert "m.cfg:4" in str(err.value)


def test_expression_error_carries_line_and_offset():
    text = 'model:\n  states: ["1", "2"]\n  transitions:\n    "1->2": "0.1 +"\n'
    with pytest.raises(ConfigError, match=r"m.cfg:4: .*offset 5"):
        parse_config(text, "m.cfg")


@pytest.mark.parametrize(
    "text, key",
    [
        ("modle: {}\n", "modle"),
        ("model:\n  preset: markov_illness_death\n  extra: 1\n", "extra"),
        ("grid:\n  M: 4\n  Mx: 3\n", "grid.Mx"),
        ("experiment:\n  name: sweep\n  reps: 3\n  repz: 4\n", "experiment.repz"),
        ("estimation:\n  tree: {depth: 2}\n", "tree.depth"),
    ],
)
def test_unknown_keys_rejected(text, key):
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(text, "u.cfg")


def test_value_checks():
    with pytest.raises(ConfigError, match="level"):
        parse_config("estimation:\n  level: 1.5\n")
    with pytest.raises(ConfigError, match="method"):
        parse_config("estimation:\n  method: both\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("grid:\n  M: 4\n  M: 5\n")
    with pytest.raises(ConfigError, match="horizon"):
        parse_config(
            "model: {preset: markov_illness_death}\n"
            "simulation: {master_seed: 1, horizon: 20, censoring: {law: uniform, lo: 10, hi: 40}}\n"
        )


def test_experiment_params_merge():
    cfg = parse_config("experiment:\n  name: sweep\n  reps: 7\n")
    p = cfg.experiment_params("sweep")
    assert p["reps"] == 7 and p["n"] == 500 and p["Ms"] == list(range(5, 85, 5))
    with pytest.raises(ConfigError):
        cfg.experiment_params("clt")
    assert parse_config("").experiment_params("surface", paper_scale=True)["n"] == 100_000


def test_reference_lists_every_experiment():
    for name in EXPERIMENT_DEFAULTS:
        assert name in CONFIG_REFERENCE
