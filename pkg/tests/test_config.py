import pytest

from app.config import ROOT, load_experiment_config


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("STREAMFLOW_SEED", "STREAMFLOW_OUT", "STREAMFLOW_LOG_DIR", "DEBUG_LOG_JSON"):
        monkeypatch.delenv(name, raising=False)


def test_builtin_defaults_without_any_file(tmp_path):
    config = load_experiment_config(base_path=tmp_path / "missing.yml")
    assert config.sources == ["defaults"]
    assert config.network_path is None and config.rain_path is None
    assert config.seed == 0
    assert config.inversion.method == "talbot"
    assert config.density_points == 401
    assert (config.density_mass_tolerance, config.density_mean_tolerance) == (0.01, 0.02)
    assert config.quadrature.as_kwargs() == {"rtol": 1e-10, "epsilon": 1e-14, "order": 32}
    assert config.out_dir == ROOT / "out"
    assert config.eps_k == (0.5, 1.5)


def test_repository_defaults_point_at_sample_inputs():
    config = load_experiment_config()
    assert config.network_path == ROOT / "data" / "sample_basin.txt"
    assert config.rain_path == ROOT / "data" / "daily_rain.txt"
    assert config.network_path.exists() and config.rain_path.exists()
    assert config.moments_n_max == 10


def test_layers_override_in_order(tmp_path, monkeypatch):
    run = tmp_path / "run.yml"
    run.write_text("seed: 3\ninversion:\n  method: zakian\nsimulate:\n  replicates: 2\n", encoding="utf-8")
    config = load_experiment_config(run)
    assert config.seed == 3
    assert config.inversion.method == "zakian"
    assert config.inversion.talbot_degree == 32
    assert config.replicates == 2
    assert config.horizon_hours == 4800.0

    monkeypatch.setenv("STREAMFLOW_SEED", "11")
    monkeypatch.setenv("STREAMFLOW_OUT", str(tmp_path / "results"))
    config = load_experiment_config(run)
    assert config.seed == 11
    assert config.out_dir == tmp_path / "results"

    config = load_experiment_config(run, overrides={"seed": 42, "simulate": {"replicates": None}})
    assert config.seed == 42
    assert config.replicates == 2
    assert config.sources[-1] == "flags"


def test_invalid_yaml_is_a_runtime_error(tmp_path):
    broken = tmp_path / "broken.yml"
    broken.write_text("seed: [1, 2\n", encoding="utf-8")
    with pytest.raises(RuntimeError):
        load_experiment_config(broken)
    listing = tmp_path / "list.yml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(RuntimeError):
        load_experiment_config(listing)


@pytest.mark.parametrize(
    "overrides",
    [
        {"inversion": {"method": "stehfest"}},
        {"simulate": {"horizon_hours": 0}},
        {"density": {"points": 0}},
        {"density": {"mass_tolerance": 0}},
        {"heterogeneity": {"eps_k": [1.5, 0.5]}},
        {"heterogeneity": {"eps_h": "wide"}},
        {"seed": "abc"},
    ],
)
def test_invalid_values_are_rejected(overrides):
    with pytest.raises(RuntimeError):
        load_experiment_config(overrides=overrides)


def test_non_integer_seed_in_environment(monkeypatch):
    monkeypatch.setenv("STREAMFLOW_SEED", "twelve")
    with pytest.raises(RuntimeError):
        load_experiment_config()


def test_json_log_flag_comes_from_environment(monkeypatch):
    monkeypatch.setenv("DEBUG_LOG_JSON", "true")
    assert load_experiment_config().debug_log_json is True
