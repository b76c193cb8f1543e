import numpy as np
import pandas as pd
import pytest

from wavres.core_image import load_image
from wavres.ct_sim import load_sinogram
from wavres.dataset import load_manifest
from wavres_cli import cli_dispatch

SMALL_CONFIG = """\
sim.image_size=40
sim.n_views=60
sim.n_phantoms=3
sim.seed=8
net.channels=2
net.modules=1
net.convs_per_module=1
net.post_convs=1
net.init_seed=5
train.total_iterations=4
train.mini_batch=2
train.patch_size=16
train.patch_stride=8
train.log_every=2
mbir.outer_iters=3
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return str(path)


@pytest.fixture
def phantom(tmp_path, config):
    path = tmp_path / "phantom.wimg"
    assert cli_dispatch(["phantom", str(path), "--kind", "shepp-logan", "--config", config]) == 0
    return path


class TestUsage:
    def test_no_arguments(self):
        assert cli_dispatch([]) == 1

    def test_unknown_command(self):
        assert cli_dispatch(["reconstruct"]) == 1

    def test_missing_positional(self):
        assert cli_dispatch(["phantom"]) == 1

    def test_bad_override(self, tmp_path):
        assert cli_dispatch(["phantom", str(tmp_path / "p.wimg"), "--set", "sim.size=40"]) == 1

    def test_help(self, capsys):
        assert cli_dispatch(["--help"]) == 0
        assert "synth" in capsys.readouterr().out

    def test_tune_needs_reference(self, tmp_path, config, phantom):
        sino = tmp_path / "sino.wimg"
        assert cli_dispatch(["project", str(phantom), str(sino), "--config", config]) == 0
        assert cli_dispatch(["mbir", str(sino), "--tune", "--config", config]) == 1

    def test_missing_checkpoint(self, tmp_path, config, phantom):
        code = cli_dispatch(["denoise", "--checkpoint", str(tmp_path / "absent.wrn"),
                             str(phantom), str(tmp_path / "out.wimg"), "--config", config])
        assert code == 1

    def test_missing_input_is_a_data_error(self, tmp_path, config):
        assert cli_dispatch(["fbp", str(tmp_path / "absent.wimg"), str(tmp_path / "x.wimg"), "--config", config]) == 2

    def test_corrupt_image(self, tmp_path, config):
        broken = tmp_path / "broken.wimg"
        broken.write_bytes(b"not an image")
        assert cli_dispatch(["nsct", str(broken), "--roundtrip", "--config", config]) == 2


class TestPipeline:
    def test_phantom(self, phantom):
        image = load_image(phantom)
        assert image.shape == (40, 40)
        assert image[0, 0] == pytest.approx(-1000.0)

    def test_project_noise_fbp_mbir(self, tmp_path, config, phantom):
        sino = tmp_path / "sino.wimg"
        noisy = tmp_path / "noisy.wimg"
        assert cli_dispatch(["project", str(phantom), str(sino), "--config", config]) == 0
        assert load_sinogram(sino).data.shape == (60, 59)
        assert cli_dispatch(["noise", str(sino), str(noisy), "--seed", "3", "--config", config]) == 0
        assert cli_dispatch(["fbp", str(noisy), str(tmp_path / "fbp.wimg"), "--config", config]) == 0
        assert load_image(tmp_path / "fbp.wimg").shape == (40, 40)

        log = tmp_path / "objective.csv"
        assert cli_dispatch(["mbir", str(noisy), str(tmp_path / "mbir.wimg"), "--log", str(log),
                             "--config", config]) == 0
        assert len(pd.read_csv(log)) <= 3

    def test_nsct_roundtrip(self, phantom, config, capsys):
        assert cli_dispatch(["nsct", str(phantom), "--roundtrip", "--config", config]) == 0
        assert "relative reconstruction error" in capsys.readouterr().out

    def test_nsct_forward_and_inverse(self, tmp_path, phantom, config):
        coeffs = tmp_path / "coeffs.nsct"
        restored = tmp_path / "restored.wimg"
        assert cli_dispatch(["nsct", str(phantom), str(coeffs), "--config", config]) == 0
        assert cli_dispatch(["nsct", str(coeffs), str(restored), "--inverse", "--config", config]) == 0
        np.testing.assert_allclose(load_image(restored), load_image(phantom), atol=1e-6)

    def test_nsct_needs_output(self, phantom, config):
        assert cli_dispatch(["nsct", str(phantom), "--config", config]) == 1

    def test_eval_csv(self, tmp_path, phantom, config, capsys):
        csv = tmp_path / "metrics.csv"
        assert cli_dispatch(["eval", "--reference", str(phantom), str(phantom), "--csv", str(csv),
                             "--config", config]) == 0
        assert "phantom.wimg" in capsys.readouterr().out
        assert pd.read_csv(csv)["slice"].tolist() == ["phantom.wimg", "average"]

    def test_synth_train_compare(self, tmp_path, config):
        data, run, compare = tmp_path / "data", tmp_path / "run", tmp_path / "compare"
        assert cli_dispatch(["synth", "--out", str(data), "--config", config]) == 0
        assert len(load_manifest(data)) == 3

        assert cli_dispatch(["train", "--data", str(data), "--out", str(run), "--config", config]) == 0
        assert (run / "final.wrn").exists()

        denoised = tmp_path / "denoised.wimg"
        _, quarter = load_manifest(data)[2].load_pair()
        assert cli_dispatch(["denoise", "--checkpoint", str(run / "final.wrn"),
                             str(load_manifest(data)[2].quarter), str(denoised), "--config", config]) == 0
        assert load_image(denoised).shape == quarter.shape

        mismatched = ["denoise", "--checkpoint", str(run / "final.wrn"), str(load_manifest(data)[2].quarter),
                      str(tmp_path / "other.wimg"), "--config", config, "--set", "net.channels=4"]
        assert cli_dispatch(mismatched) == 1
        assert not (tmp_path / "other.wimg").exists()

        code = cli_dispatch(["compare", "--data", str(data), "--residual", str(run / "best.wrn"),
                             "--out", str(compare), "--config", config])
        assert code == 0
        assert (compare / "comparison.json").exists()
        assert "pair002" in (compare / "comparison.md").read_text(encoding="utf-8")
