import math

import pytest

from wavres.config import DEFAULTS, TrainingConfig, WavResConfig, load_config, parse_overrides
from wavres.errors import ConfigError
from wavres.nsct import DecompositionSpec
from wavres.wavresnet import TopologyConfig


def test_default_file_matches_builtin_defaults(default_config_path):
    config = load_config(default_config_path)
    assert config.values == DEFAULTS


def test_desk_config_views(desk_config_path):
    config = load_config(desk_config_path)
    geometry = config.geometry()
    assert geometry.image_size == 64
    assert geometry.n_views == 180
    assert geometry.n_detectors == 93
    assert geometry.view_range == pytest.approx(math.pi)

    training = config.training()
    assert training.topology.channels == 16
    assert training.topology.final_init == "zero"
    assert training.patch_size == 32
    assert training.momentum == pytest.approx(0.9)
    assert training.lr_start <= 0.01

    assert config.sim_config().i0_routine == pytest.approx(5e4)
    assert config.tv_params().lam == pytest.approx(0.02)
    assert config.eval_config().roi == (16, 16, 24)


def test_overrides_win_over_file(desk_config_path):
    config = load_config(desk_config_path, ["train.seed=99", "mbir.lambda = 0.5"])
    assert config.training().seed == 99
    assert config.tv_params().lam == pytest.approx(0.5)


def test_environment_config(monkeypatch, desk_config_path):
    monkeypatch.setenv("WAVRES_CONFIG", desk_config_path)
    assert load_config().get_int("sim.image_size") == 64


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("train.learning_rate=0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("item", ["novalue", "=3"])
def test_malformed_override(item):
    with pytest.raises(ConfigError):
        parse_overrides([item])


def test_unknown_namespace():
    with pytest.raises(ConfigError):
        WavResConfig({"gpu.count": "1"})


def test_scientific_integers():
    config = WavResConfig({"train.total_iterations": "1e5"})
    assert config.get_int("train.total_iterations") == 100000
    with pytest.raises(ConfigError):
        WavResConfig({"train.total_iterations": "2.5"}).get_int("train.total_iterations")


def test_typed_views_report_bad_values():
    with pytest.raises(ConfigError):
        WavResConfig({"sim.dose_fraction": "1.5"}).sim_config()
    with pytest.raises(ConfigError):
        WavResConfig({"mbir.rho": "abc"}).tv_params()
    with pytest.raises(ConfigError):
        WavResConfig({"eval.roi": "1,2"}).eval_config()


def test_channel_count_must_match_bands():
    config = WavResConfig({"nsct.levels": "2", "nsct.directions": "8,8"})
    with pytest.raises(ConfigError):
        config.training()
    config.update({"net.in_channels": "17", "net.out_channels": "17"})
    assert config.training().decomposition.n_bands == 17


def test_explicit_detector_count_is_kept():
    geometry = WavResConfig({"sim.image_size": "32", "sim.n_detectors": "61"}).geometry()
    assert geometry.n_detectors == 61


def test_lambda_grid():
    assert WavResConfig().lambda_grid() == [0.001, 0.003, 0.01, 0.03, 0.1, 0.3]
    with pytest.raises(ConfigError):
        WavResConfig({"mbir.lambda_grid": ""}).lambda_grid()


class TestValidationSplit:
    def test_last(self):
        assert TrainingConfig().split(10) == (list(range(9)), [9])

    def test_single_pair_trains_without_validation(self):
        assert TrainingConfig().split(1) == ([0], [])

    def test_explicit_indices(self):
        config = TrainingConfig(validation_slices="3,1")
        assert config.split(5) == ([0, 2, 4], [1, 3])

    def test_none(self):
        assert TrainingConfig(validation_slices="none").split(3) == ([0, 1, 2], [])

    @pytest.mark.parametrize("spec, n", [("7", 5), ("a,b", 5), ("0", 1)])
    def test_invalid(self, spec, n):
        with pytest.raises(ConfigError):
            TrainingConfig(validation_slices=spec).split(n)


def test_metadata_carries_inference_settings():
    config = TrainingConfig(decomposition=DecompositionSpec(2, (4, 2)),
                            topology=TopologyConfig(in_channels=7, out_channels=7),
                            target_mode="direct", lowband_mode="bypass", intensity_scale=50.0)
    metadata = config.validate().to_metadata()
    assert metadata["nsct.directions"] == "4,2"
    assert metadata["train.target_mode"] == "direct"
    assert metadata["train.intensity_scale"] == "50.0"


@pytest.mark.parametrize("item", ["train.lr_start=0.05", "train.lr_end=1e-6"])
def test_learning_rates_outside_range(desk_config_path, item):
    with pytest.raises(ConfigError):
        load_config(desk_config_path, [item]).training()


def test_direct_mode_needs_lowband_bypass(desk_config_path):
    config = load_config(desk_config_path, ["train.target_mode=direct"])
    with pytest.raises(ConfigError):
        config.training()
    training = load_config(desk_config_path, ["train.target_mode=direct", "train.lowband_mode=bypass"]).training()
    assert training.lowband_mode == "bypass"
