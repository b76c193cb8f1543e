import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from wavres.checkpoint import load_checkpoint
from wavres.config import TrainingConfig, load_config
from wavres.ct_sim import GeometryConfig
from wavres.dataset import synth_dataset
from wavres.errors import ConfigError, DivergenceError
from wavres.nsct import DecompositionSpec, nsct_forward, nsct_inverse
from wavres.training import (
    CONVERGENCE_COLUMNS,
    InferenceSettings,
    compare_convergence,
    denoise,
    load_denoiser,
    train,
    validation_metrics,
)
from wavres.wavresnet import TopologyConfig, WavResNet

DESK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("pairs")
    return synth_dataset(3, 40, geometry=GeometryConfig.for_image(40, n_views=60), seed=21, out_dir=out_dir)


@pytest.fixture
def quick_config(micro_topology):
    return TrainingConfig(topology=micro_topology, total_iterations=4, mini_batch=2, patch_size=16,
                          patch_stride=8, log_every=2, seed=1)


class TestDenoise:
    @pytest.mark.parametrize("size", [64, 512])
    def test_zero_network_is_identity(self, micro_topology, rng, size):
        image = rng.normal(scale=200.0, size=(size, size))
        out = denoise(image, WavResNet.zeros(micro_topology))
        assert out.shape == image.shape
        np.testing.assert_allclose(out, image, atol=1e-8)

    def test_direct_bypass_keeps_only_the_lowpass(self, micro_topology, rng):
        image = rng.normal(scale=200.0, size=(48, 48))
        settings = InferenceSettings(target_mode="direct", lowband_mode="bypass")
        out = denoise(image, WavResNet.zeros(micro_topology), settings)
        stack = nsct_forward(image)
        stack.bands[1:] = 0.0
        np.testing.assert_allclose(out, nsct_inverse(stack), atol=1e-8)

    def test_direct_without_bypass_gives_zero(self, micro_topology, rng):
        settings = InferenceSettings(target_mode="direct")
        out = denoise(rng.normal(size=(40, 40)), WavResNet.zeros(micro_topology), settings)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_band_count_mismatch(self, micro_topology, rng):
        settings = InferenceSettings(decomposition=DecompositionSpec(1, (2,)))
        with pytest.raises(ConfigError):
            denoise(rng.normal(size=(40, 40)), WavResNet.zeros(micro_topology), settings)

    def test_training_config_must_match_network(self, micro_topology, tiny_topology, rng):
        config = TrainingConfig(topology=tiny_topology)
        with pytest.raises(ConfigError):
            denoise(rng.normal(size=(40, 40)), WavResNet.zeros(micro_topology), config)


def test_validation_metrics_identity_is_the_baseline(rng):
    routine = rng.normal(size=(16, 16))
    quarter = routine + 0.1
    psnr_db, error = validation_metrics([(routine, quarter)], peak=1.0)
    assert psnr_db == pytest.approx(20.0)
    assert error == pytest.approx(0.1 * 16 / np.linalg.norm(routine))


class TestTrainer:
    def test_artifacts(self, manifest, quick_config, tmp_path):
        result = train(quick_config, manifest, out_dir=tmp_path)
        for name in ("baseline.json", "convergence.csv", "best.wrn", "final.wrn"):
            assert (tmp_path / name).exists()

        frame = pd.read_csv(tmp_path / "convergence.csv")
        assert list(frame.columns) == CONVERGENCE_COLUMNS
        assert frame["iteration"].tolist() == [2, 4]
        assert len(result.convergence) == 2
        assert frame["lr"].iloc[0] > frame["lr"].iloc[1]
        assert frame["lr"].iloc[-1] == pytest.approx(quick_config.lr_end)

        baseline = json.loads((tmp_path / "baseline.json").read_text(encoding="utf-8"))
        assert baseline["validation_slices"] == ["pair002"]
        assert math.isfinite(baseline["val_psnr_db"])
        assert result.baseline["val_psnr_db"] == pytest.approx(baseline["val_psnr_db"])

        _, metadata = load_checkpoint(tmp_path / "final.wrn")
        assert metadata["train.iteration"] == "4"
        assert metadata["train.target_mode"] == "residual"
        assert metadata["nsct.directions"] == "4,4,4,2"

    def test_one_iteration_moves_parameters(self, manifest, quick_config, tmp_path):
        config = replace(quick_config, total_iterations=1, log_every=1)
        network = WavResNet(config.topology)
        before = {k: v.copy() for k, v in network.learnable_parameters().items()}
        train(config, manifest, out_dir=tmp_path, network=network)
        changed = [k for k, v in network.learnable_parameters().items() if not np.array_equal(v, before[k])]
        assert "final.conv.kernels" in changed
        assert "init.conv.kernels" in changed

    def test_runs_are_reproducible(self, manifest, quick_config, tmp_path):
        train(quick_config, manifest, out_dir=tmp_path / "a")
        train(quick_config, manifest, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "convergence.csv").read_bytes() == (tmp_path / "b" / "convergence.csv").read_bytes()
        assert (tmp_path / "a" / "final.wrn").read_bytes() == (tmp_path / "b" / "final.wrn").read_bytes()

    def test_checkpoint_restores_inference(self, manifest, quick_config, tmp_path):
        result = train(quick_config, manifest, out_dir=tmp_path)
        network, settings = load_denoiser(result.final_checkpoint, quick_config)
        assert settings == InferenceSettings.from_training(quick_config)
        _, quarter = manifest[2].load_pair()
        np.testing.assert_array_equal(denoise(quarter, network, settings),
                                      denoise(quarter, result.network, quick_config))

    def test_checkpoint_rejects_other_decomposition(self, manifest, quick_config, tmp_path):
        result = train(quick_config, manifest, out_dir=tmp_path)
        other = TrainingConfig(decomposition=DecompositionSpec(1, (8,)),
                               topology=TopologyConfig(in_channels=9, out_channels=9))
        with pytest.raises(ConfigError):
            load_denoiser(result.final_checkpoint, other)

    def test_direct_mode_needs_bypass(self, manifest, quick_config, tmp_path):
        with pytest.raises(ConfigError):
            train(replace(quick_config, target_mode="direct"), manifest, out_dir=tmp_path)

    def test_bypass_mode_trains(self, manifest, quick_config, tmp_path):
        config = replace(quick_config, lowband_mode="bypass")
        result = train(config, manifest, out_dir=tmp_path)
        _, metadata = load_checkpoint(result.final_checkpoint)
        assert metadata["train.lowband_mode"] == "bypass"

    def test_without_validation_best_follows_training_loss(self, manifest, quick_config, tmp_path):
        config = replace(quick_config, validation_slices="none")
        result = train(config, manifest, out_dir=tmp_path)
        assert result.best_checkpoint.exists()
        assert all(math.isnan(r.val_psnr_db) for r in result.convergence)

    def test_non_finite_loss(self, manifest, quick_config, tmp_path):
        network = WavResNet(quick_config.topology)
        network.learnable_parameters()["final.conv.bias"][:] = np.nan
        with pytest.raises(DivergenceError):
            train(quick_config, manifest, out_dir=tmp_path, network=network)


def test_compare_convergence(tmp_path):
    for name, values in (("residual", [30.0, 33.0]), ("direct", [28.0, 31.5])):
        run = tmp_path / name
        run.mkdir()
        pd.DataFrame({"iteration": [10, 20], "lr": [0.01, 0.001], "train_loss": [1.0, 0.5],
                      "val_psnr_db": values, "val_nrmse": [0.1, 0.05]}).to_csv(run / "convergence.csv", index=False)
        (run / "baseline.json").write_text(json.dumps({"val_psnr_db": 29.0}), encoding="utf-8")

    summary = compare_convergence([tmp_path / "residual" / "convergence.csv",
                                   tmp_path / "direct" / "convergence.csv"])
    assert summary["run"].tolist() == ["residual", "direct"]
    assert summary["best_psnr_db"].tolist() == [33.0, 31.5]
    assert summary["beats_baseline_at"].tolist() == [10, 20]


def test_compare_convergence_missing_log(tmp_path):
    with pytest.raises(ConfigError):
        compare_convergence([tmp_path / "nothing.csv"])


@pytest.mark.slow
class TestEfficacy:
    @pytest.fixture(scope="class")
    def desk(self, tmp_path_factory):
        config = load_config(DESK_CONFIG)
        out_dir = tmp_path_factory.mktemp("desk")
        sim = config.sim_config()
        manifest = synth_dataset(sim.n_phantoms, 64, geometry=config.geometry(), seed=sim.seed,
                                 out_dir=out_dir / "data", sim=sim)
        return config, manifest, out_dir

    @pytest.fixture(scope="class")
    def residual(self, desk):
        config, manifest, out_dir = desk
        return train(config.training(), manifest, out_dir=out_dir / "residual")

    def test_residual_training_beats_noisy_input(self, desk, residual):
        config, manifest, out_dir = desk
        network, settings = load_denoiser(residual.best_checkpoint, config.training())
        routine, quarter = manifest[len(manifest) - 1].load_pair()
        peak = json.loads((out_dir / "residual" / "baseline.json").read_text(encoding="utf-8"))["peak"]

        noisy_psnr, noisy_nrmse = validation_metrics([(routine, quarter)], peak)
        psnr_db, error = validation_metrics([(routine, quarter)], peak,
                                            restore=lambda image: denoise(image, network, settings))
        assert psnr_db - noisy_psnr >= 1.0
        assert error < noisy_nrmse

    def test_residual_converges_faster_than_direct(self, desk, residual):
        config, manifest, out_dir = desk
        direct = replace(config.training(), target_mode="direct", lowband_mode="bypass")
        train(direct, manifest, out_dir=out_dir / "direct")
        summary = compare_convergence([residual.convergence_csv, out_dir / "direct" / "convergence.csv"])
        assert summary["final_nrmse"].iloc[0] <= summary["final_nrmse"].iloc[1]
